#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kge/kg_store.hpp"
#include "kge/loss.hpp"

namespace kge {

struct Batch;

enum class ModelKind { transe, transh, transr, transd, rescal, distmult, complex, kg2e };

std::string_view to_string(ModelKind k);
std::optional<ModelKind> parse_model_kind(std::string_view name);
std::span<const ModelKind> all_model_kinds();
// "transe, transh, ..." for error messages and help text.
std::string registered_model_names();

// Translational models and KG2E train with the margin loss; DistMult and
// ComplEx with softplus.
LossKind default_loss(ModelKind k);

struct ModelSettings {
  bool l1 = true;  // distance norm of translational models
  double var_min = 0.05;
  double var_max = 5.0;

  friend bool operator==(const ModelSettings&, const ModelSettings&) = default;
};

enum class RowIndex : std::uint8_t { entity, relation };

struct TensorShape {
  std::string name;
  RowIndex index;
  std::size_t rows;
  std::size_t row_size;
  bool square_matrix = false;  // row holds a row-major dim x dim matrix
};

// Parameter tensors of a model kind; a pure function of (|E|, |R|, d).
std::vector<TensorShape> param_shapes(ModelKind k, std::size_t num_entities,
                                      std::size_t num_relations, std::size_t dim);

// Row-major dense table.
struct Tensor {
  TensorShape shape;
  std::vector<double> data;

  std::span<double> row(std::size_t i) {
    return {data.data() + i * shape.row_size, shape.row_size};
  }
  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * shape.row_size, shape.row_size};
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape.name == b.shape.name && a.shape.rows == b.shape.rows &&
           a.shape.row_size == b.shape.row_size && a.data == b.data;
  }
};

class ModelParams {
 public:
  // Zero-filled tensors with the kind's shapes.
  ModelParams(ModelKind kind, ModelSettings settings, std::size_t num_entities,
              std::size_t num_relations, std::size_t dim);

  ModelKind kind() const { return kind_; }
  const ModelSettings& settings() const { return settings_; }
  std::size_t num_entities() const { return num_entities_; }
  std::size_t num_relations() const { return num_relations_; }
  std::size_t dim() const { return dim_; }

  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  Tensor& tensor(std::size_t slot) { return tensors_[slot]; }
  const Tensor& tensor(std::size_t slot) const { return tensors_[slot]; }

  bool all_finite() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;

 private:
  ModelKind kind_;
  ModelSettings settings_;
  std::size_t num_entities_, num_relations_, dim_;
  std::vector<Tensor> tensors_;
};

// Gradient rows keyed by (tensor slot, row id). Rows iterate in first-touch order.
class SparseGrad {
 public:
  struct TensorGrad {
    std::size_t row_size = 0;
    std::vector<std::uint32_t> rows;
    std::vector<double> values;
    std::unordered_map<std::uint32_t, std::size_t> index;

    std::span<const double> at(std::size_t i) const {
      return {values.data() + i * row_size, row_size};
    }
    std::span<double> at(std::size_t i) { return {values.data() + i * row_size, row_size}; }
    const double* find(std::uint32_t row) const;
  };

  explicit SparseGrad(const ModelParams& params);

  // Zero-initialized on first access.
  std::span<double> row(std::size_t slot, std::uint32_t row_id);

  const std::vector<TensorGrad>& tensors() const { return tensors_; }
  bool empty() const;
  std::size_t num_rows() const;
  void clear();

 private:
  std::vector<TensorGrad> tensors_;
};

// Xavier-uniform tables, then the kind's constraint projections; TransH normals
// and TransE/TransH entity rows come out unit length, KG2E variances start at
// 1 clamped to the variance bounds. Deterministic given seed.
ModelParams init_params(ModelKind kind, std::size_t num_entities, std::size_t num_relations,
                        std::size_t dim, std::uint64_t seed, ModelSettings settings = {});

// Unit-norm entity rows (TransE, TransH), unit-norm normals (TransH) and
// clamped variances (KG2E), over every row.
void apply_constraints(ModelParams& params);
// Same projections restricted to the rows present in `touched`.
void apply_constraints(ModelParams& params, const SparseGrad& touched);

// Plausibility of t; higher is better for every kind.
double score(const ModelParams& params, const Triple& t);

// Adds coeff * d score(t) / d theta into grad.
void accumulate_score_gradient(const ModelParams& params, const Triple& t, double coeff,
                               SparseGrad& grad);

// Scores of (h, r, e) or (e, r, t) for every entity e; out.size() == |E|.
void score_tails(const ModelParams& params, EntityId head, RelationId relation,
                 std::span<double> out);
void score_heads(const ModelParams& params, RelationId relation, EntityId tail,
                 std::span<double> out);

// Summed squared L2 norm of the distinct rows that the triples index.
double touched_sq_norm(const ModelParams& params, std::span<const Triple> a,
                       std::span<const Triple> b);

// Summed batch loss. When grad is non-null, the analytic gradient of that
// loss is accumulated into it; rows with zero derivative are not created, so
// a batch whose hinges are all inactive leaves grad empty. An L1 component
// that is exactly zero takes subgradient 0.
double batch_loss_and_gradient(const ModelParams& params, std::span<const Triple> positives,
                               std::span<const Triple> negatives, const LossSpec& spec,
                               SparseGrad* grad);
double batch_loss_and_gradient(const ModelParams& params, const Batch& batch,
                               const LossSpec& spec, SparseGrad* grad);

inline constexpr std::string_view kModelMagic = "KGM1";

// Versioned checkpoint: kind tag, settings, shapes, row-major tensors, checksum.
void save_params(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_params(const std::filesystem::path& path);

}  // namespace kge
