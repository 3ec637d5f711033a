#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kge/config.hpp"
#include "kge/evaluator.hpp"
#include "kge/kg_store.hpp"
#include "kge/models.hpp"
#include "kge/trainer.hpp"

namespace kge {

// Row-major rows x cols matrix.
struct DenseMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

struct ProjectionResult {
  std::vector<std::string> labels;
  std::vector<std::string> kinds;  // "entity" or "relation", parallel to labels
  DenseMatrix coords;              // N x 2
  ProjectionMethod method = ProjectionMethod::pca;
  // t-SNE: KL(P || Q) after the last iteration; PCA: explained-variance ratio
  // of the two components.
  double final_objective = 0;
  // t-SNE: KL(P || Q) at the initial layout. Unused for PCA.
  double initial_objective = 0;
  // PCA: d x 2 principal directions (columns). Empty for t-SNE.
  DenseMatrix components;
};

// Mean-centred projection onto the top two eigenvectors of the covariance.
// Each direction's largest-magnitude loading is made positive. Needs N >= 2
// and d >= 2; identical rows give zero coordinates and ratio 0.
ProjectionResult pca_2d(const DenseMatrix& x);

struct TsneSettings {
  double perplexity = 30.0;
  std::size_t iterations = 1000;
  std::uint64_t seed = 0;
  double exaggeration = 12.0;
  std::size_t exaggeration_iters = 250;
  double learning_rate = 200.0;
  double momentum_initial = 0.5;
  double momentum_final = 0.8;
  std::size_t momentum_switch = 250;
};

// Conditional affinities p_{j|i} (rows sum to 1) whose entropy in bits
// matches log2(perplexity), found per point by bisection on the Gaussian
// precision (50 steps, entropy tolerance 1e-5). `entropy_bits` receives the
// achieved entropy of each row.
DenseMatrix conditional_affinities(const DenseMatrix& sq_dist, double perplexity,
                                   std::vector<double>* entropy_bits = nullptr);

// Symmetric joint affinities (p_{j|i} + p_{i|j}) / 2N; sums to 1.
DenseMatrix joint_affinities(const DenseMatrix& x, double perplexity,
                             std::vector<double>* entropy_bits = nullptr);

DenseMatrix squared_distances(const DenseMatrix& x);

inline constexpr std::size_t kMaxTsnePoints = 5000;

// Exact O(N^2) t-SNE from a PCA initialization. Requires
// 2 <= perplexity <= (N - 1) / 3 and N <= kMaxTsnePoints.
ProjectionResult tsne_2d(const DenseMatrix& x, const TsneSettings& settings = {});

struct EmbeddingPoints {
  DenseMatrix x;
  std::vector<std::string> labels;
  std::vector<std::string> kinds;
};

// Entity and relation vectors in one space: ComplEx rows are re|im
// concatenations, KG2E uses the means, RESCAL contributes entities only
// because its relations are matrices. Above max_points a seeded uniform
// subsample is kept.
EmbeddingPoints embedding_points(const ModelParams& params, const Vocab& vocab,
                                 std::size_t max_points, std::uint64_t seed);

ProjectionResult project(const EmbeddingPoints& points, const ProjectionSettings& settings,
                         std::uint64_t seed);

// label,x,y,kind
void write_embedding_csv(const ProjectionResult& proj, const std::filesystem::path& path);

std::string svg_line_plot(const std::vector<double>& ys, const std::string& title,
                          const std::string& x_label, const std::string& y_label);
std::string svg_bar_chart(const std::vector<std::string>& names,
                          const std::vector<std::vector<double>>& series,
                          const std::vector<std::string>& series_names, const std::string& title);
// One <circle> per projected point.
std::string svg_scatter(const ProjectionResult& proj, const std::string& title);

// loss.csv, timing.csv, metrics.csv, embedding_2d.csv plus loss.svg,
// mean_rank.svg, hits.svg and embedding_2d.svg. A null projection skips the
// embedding files.
void export_plots(const TrainRecord& record, const MetricsReport& report,
                  const ProjectionResult* proj, const std::filesystem::path& out_dir);

}  // namespace kge
