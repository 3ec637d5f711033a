#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "kge/evaluator.hpp"
#include "kge/kg_store.hpp"
#include "kge/loss.hpp"
#include "kge/models.hpp"
#include "kge/sampler.hpp"

namespace kge {

enum class OptimizerKind { sgd, adam };

std::string_view to_string(OptimizerKind k);
std::optional<OptimizerKind> parse_optimizer(std::string_view s);

// Key names follow the golden-setting dictionary printed by the tuner.
struct HyperParams {
  bool L1_flag = true;
  std::size_t batch_size = 128;
  std::size_t epochs = 100;
  std::size_t hidden_size = 50;
  double learning_rate = 0.01;
  double margin = 1.0;
  OptimizerKind opt = OptimizerKind::sgd;
  SamplingStrategy samp = SamplingStrategy::bern;
  LossKind loss_kind = LossKind::margin;
  double lambda_reg = 1e-5;
  std::uint64_t seed = 0;

  // Throws ConfigError naming the offending key.
  void validate() const;

  friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(ModelParams& params, const SparseGrad& grad) = 0;
};

class SgdOptimizer final : public Optimizer {
 public:
  explicit SgdOptimizer(double learning_rate) : lr_(learning_rate) {}
  void step(ModelParams& params, const SparseGrad& grad) override;

 private:
  double lr_;
};

// Adam with moments and bias-correction step counters kept per touched row.
class AdamOptimizer final : public Optimizer {
 public:
  AdamOptimizer(double learning_rate, std::size_t num_tensors, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);
  void step(ModelParams& params, const SparseGrad& grad) override;

 private:
  struct RowState {
    std::vector<double> m, v;
    std::uint64_t steps = 0;
  };
  double lr_, beta1_, beta2_, eps_;
  std::vector<std::unordered_map<std::uint32_t, RowState>> state_;
};

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double learning_rate,
                                          const ModelParams& params);

struct TrainRecord {
  std::vector<double> epoch_loss;     // mean over the epoch's batches of the batch-mean loss
  std::vector<double> epoch_seconds;  // wall time of each epoch
  std::vector<std::pair<std::size_t, MetricsReport>> validation;  // (epoch, report)
  std::size_t saturations = 0;
};

struct EpochSummary {
  std::size_t epoch = 0;
  std::size_t epochs = 0;
  double mean_loss = 0;
  double seconds = 0;
};

struct TrainOptions {
  std::size_t workers = 1;
  std::size_t queue_capacity = 8;
  bool reject_train_positives = false;
  // Validation every eval_every epochs; 0 means once, after the last epoch.
  std::size_t eval_every = 0;
  // Validation ranks at most this many valid triples; 0 ranks them all.
  std::size_t eval_max_triples = 1000;
  std::size_t eval_workers = 1;
  bool validate = true;
  std::function<void(const EpochSummary&)> on_epoch;
};

struct TrainResult {
  ModelParams params;
  TrainRecord record;
};

LossSpec loss_spec(const HyperParams& hp);
ModelSettings model_settings(const HyperParams& hp);
SamplerConfig sampler_config(const HyperParams& hp, const TrainOptions& opts);

// Trains from init_params(kind, ..., hp.seed).
TrainResult train(const KgDataset& d, ModelKind kind, const HyperParams& hp,
                  const TrainOptions& opts = {});

// Trains starting from the given parameters. Throws NumericError on a
// non-finite batch loss, naming the epoch, batch and offending rows.
TrainResult train(const KgDataset& d, ModelParams initial, const HyperParams& hp,
                  const TrainOptions& opts = {});

// epoch,mean_loss
void write_loss_csv(const TrainRecord& record, const std::filesystem::path& path);
// epoch,seconds
void write_timing_csv(const TrainRecord& record, const std::filesystem::path& path);

}  // namespace kge
