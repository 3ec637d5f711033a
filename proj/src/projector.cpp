#include "kge/projector.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "kge/error.hpp"
#include "kge/rng.hpp"
#include "kge/text.hpp"

namespace kge {

ProjectionResult pca_2d(const DenseMatrix& x) {
  if (x.rows < 2 || x.cols < 2)
    throw UserError("PCA needs at least 2 points of dimension >= 2, got " + std::to_string(x.rows) +
                    " x " + std::to_string(x.cols));
  const auto n = static_cast<Eigen::Index>(x.rows);
  const auto d = static_cast<Eigen::Index>(x.cols);
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = x(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
  m.rowwise() -= m.colwise().mean();
  const Eigen::MatrixXd cov = (m.transpose() * m) / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw Error("PCA eigen-decomposition failed");
  // eigenvalues ascending: the top two are the last columns
  Eigen::MatrixXd comps(d, 2);
  comps.col(0) = eig.eigenvectors().col(d - 1);
  comps.col(1) = eig.eigenvectors().col(d - 2);
  for (Eigen::Index c = 0; c < 2; ++c) {
    Eigen::Index arg = 0;
    comps.col(c).cwiseAbs().maxCoeff(&arg);
    if (comps(arg, c) < 0) comps.col(c) *= -1.0;
  }
  const double total = std::max(0.0, eig.eigenvalues().sum());
  const double top = std::max(0.0, eig.eigenvalues()(d - 1)) + std::max(0.0, eig.eigenvalues()(d - 2));

  ProjectionResult r;
  r.method = ProjectionMethod::pca;
  r.coords = DenseMatrix(x.rows, 2);
  r.components = DenseMatrix(x.cols, 2);
  if (total <= 0) {
    // identical rows: every coordinate is zero and nothing is explained
    for (Eigen::Index j = 0; j < d; ++j)
      for (Eigen::Index c = 0; c < 2; ++c) r.components(static_cast<std::size_t>(j), static_cast<std::size_t>(c)) = comps(j, c);
    r.final_objective = 0;
    return r;
  }
  const Eigen::MatrixXd y = m * comps;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index c = 0; c < 2; ++c) r.coords(static_cast<std::size_t>(i), static_cast<std::size_t>(c)) = y(i, c);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index c = 0; c < 2; ++c) r.components(static_cast<std::size_t>(j), static_cast<std::size_t>(c)) = comps(j, c);
  r.final_objective = top / total;
  return r;
}

DenseMatrix squared_distances(const DenseMatrix& x) {
  DenseMatrix out(x.rows, x.rows);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = i + 1; j < x.rows; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < x.cols; ++k) {
        const double diff = x(i, k) - x(j, k);
        s += diff * diff;
      }
      out(i, j) = out(j, i) = s;
    }
  return out;
}

DenseMatrix conditional_affinities(const DenseMatrix& sq_dist, double perplexity,
                                   std::vector<double>* entropy_bits) {
  const std::size_t n = sq_dist.rows;
  const double target = std::log2(perplexity);
  constexpr int kSteps = 50;
  constexpr double kTolerance = 1e-5;
  DenseMatrix p(n, n);
  if (entropy_bits) entropy_bits->assign(n, 0.0);
  std::vector<double> row(n);

  for (std::size_t i = 0; i < n; ++i) {
    double dmin = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) dmin = std::min(dmin, sq_dist(i, j));

    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double entropy = 0;
    // entropy of row i at precision beta, distances shifted by dmin for stability
    auto evaluate = [&](double b) {
      double z = 0, weighted = 0;
      for (std::size_t j = 0; j < n; ++j) {
        row[j] = j == i ? 0.0 : std::exp(-b * (sq_dist(i, j) - dmin));
        z += row[j];
        weighted += row[j] * (sq_dist(i, j) - dmin);
      }
      for (double& v : row) v /= z;
      return (std::log(z) + b * weighted / z) / std::numbers::ln2;
    };
    for (int step = 0; step < kSteps; ++step) {
      entropy = evaluate(beta);
      const double diff = entropy - target;
      if (std::abs(diff) < kTolerance) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    for (std::size_t j = 0; j < n; ++j) p(i, j) = row[j];
    if (entropy_bits) (*entropy_bits)[i] = entropy;
  }
  return p;
}

DenseMatrix joint_affinities(const DenseMatrix& x, double perplexity,
                             std::vector<double>* entropy_bits) {
  const DenseMatrix cond = conditional_affinities(squared_distances(x), perplexity, entropy_bits);
  const std::size_t n = x.rows;
  DenseMatrix p(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) p(i, j) = (cond(i, j) + cond(j, i)) / (2.0 * static_cast<double>(n));
  return p;
}

namespace {

// Student-t kernel numerators and their sum for layout y (N x 2).
double kernel(const DenseMatrix& y, DenseMatrix& num) {
  double total = 0;
  for (std::size_t i = 0; i < y.rows; ++i) {
    num(i, i) = 0;
    for (std::size_t j = i + 1; j < y.rows; ++j) {
      const double dx = y(i, 0) - y(j, 0), dy = y(i, 1) - y(j, 1);
      const double v = 1.0 / (1.0 + dx * dx + dy * dy);
      num(i, j) = num(j, i) = v;
      total += 2 * v;
    }
  }
  return total;
}

double kl_divergence(const DenseMatrix& p, const DenseMatrix& num, double total) {
  double kl = 0;
  for (std::size_t i = 0; i < p.rows; ++i)
    for (std::size_t j = 0; j < p.cols; ++j) {
      if (i == j || p(i, j) <= 0) continue;
      const double q = std::max(num(i, j) / total, 1e-12);
      kl += p(i, j) * std::log(p(i, j) / q);
    }
  return kl;
}

}  // namespace

ProjectionResult tsne_2d(const DenseMatrix& x, const TsneSettings& s) {
  const std::size_t n = x.rows;
  if (n > kMaxTsnePoints)
    throw UserError("t-SNE is exact and limited to " + std::to_string(kMaxTsnePoints) +
                    " points; got " + std::to_string(n) + " (lower max_points)");
  if (n < 7 || !(s.perplexity >= 2) || s.perplexity > static_cast<double>(n - 1) / 3.0)
    throw UserError("perplexity " + format_double(s.perplexity) + " is infeasible for " +
                    std::to_string(n) + " points; need 2 <= perplexity <= (N-1)/3");

  const DenseMatrix p = joint_affinities(x, s.perplexity);

  // PCA initialization scaled to a standard deviation of 1e-4 on the first axis
  DenseMatrix y(n, 2);
  const ProjectionResult init = x.cols >= 2 ? pca_2d(x) : ProjectionResult{};
  double sd = 0;
  if (x.cols >= 2) {
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += init.coords(i, 0);
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) sd += (init.coords(i, 0) - mean) * (init.coords(i, 0) - mean);
    sd = std::sqrt(sd / static_cast<double>(n));
  }
  if (sd > 0) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 2; ++c) y(i, c) = init.coords(i, c) / sd * 1e-4;
  } else {
    Rng rng = make_rng(s.seed, 0x54534e45ULL);
    std::normal_distribution<double> normal(0.0, 1e-4);
    for (double& v : y.data) v = normal(rng);
  }

  DenseMatrix num(n, n), grad(n, 2), update(n, 2), gains(n, 2);
  std::fill(gains.data.begin(), gains.data.end(), 1.0);

  ProjectionResult r;
  r.method = ProjectionMethod::tsne;
  r.initial_objective = kl_divergence(p, num, kernel(y, num));

  for (std::size_t iter = 0; iter < s.iterations; ++iter) {
    const double exaggeration = iter < s.exaggeration_iters ? s.exaggeration : 1.0;
    const double momentum = iter < s.momentum_switch ? s.momentum_initial : s.momentum_final;
    const double total = kernel(y, num);
    std::fill(grad.data.begin(), grad.data.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = std::max(num(i, j) / total, 1e-12);
        const double mult = 4.0 * (exaggeration * p(i, j) - q) * num(i, j);
        grad(i, 0) += mult * (y(i, 0) - y(j, 0));
        grad(i, 1) += mult * (y(i, 1) - y(j, 1));
      }
    for (std::size_t k = 0; k < y.data.size(); ++k) {
      const bool same_sign = (grad.data[k] > 0) == (update.data[k] > 0);
      gains.data[k] = std::max(same_sign ? gains.data[k] * 0.8 : gains.data[k] + 0.2, 0.01);
      update.data[k] = momentum * update.data[k] - s.learning_rate * gains.data[k] * grad.data[k];
      y.data[k] += update.data[k];
    }
    for (std::size_t c = 0; c < 2; ++c) {
      double mean = 0;
      for (std::size_t i = 0; i < n; ++i) mean += y(i, c);
      mean /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) y(i, c) -= mean;
    }
  }
  r.final_objective = kl_divergence(p, num, kernel(y, num));
  for (double v : y.data)
    if (!std::isfinite(v)) throw Error("t-SNE diverged to non-finite coordinates");
  r.coords = std::move(y);
  return r;
}

EmbeddingPoints embedding_points(const ModelParams& params, const Vocab& vocab,
                                 std::size_t max_points, std::uint64_t seed) {
  struct Source {
    std::vector<std::size_t> slots;
    RowIndex index;
  };
  std::vector<Source> sources;
  switch (params.kind()) {
    case ModelKind::complex:
      sources = {{{0, 1}, RowIndex::entity}, {{2, 3}, RowIndex::relation}};
      break;
    case ModelKind::rescal:
      sources = {{{0}, RowIndex::entity}};
      break;
    default:  // slot 0 entities, slot 1 relation vectors / means
      sources = {{{0}, RowIndex::entity}, {{1}, RowIndex::relation}};
  }

  std::vector<std::pair<const Source*, std::size_t>> items;
  for (const Source& src : sources) {
    const std::size_t rows = params.tensor(src.slots[0]).shape.rows;
    for (std::size_t r = 0; r < rows; ++r) items.emplace_back(&src, r);
  }
  if (items.size() > max_points) {
    Rng rng = make_rng(seed, 0x53554253ULL);
    for (std::size_t i = 0; i < max_points; ++i)
      std::swap(items[i], items[i + uniform_below(rng, items.size() - i)]);
    items.resize(max_points);
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first < b.first : a.second < b.second;
    });
  }

  EmbeddingPoints out;
  std::size_t width = 0;
  for (std::size_t s : sources[0].slots) width += params.tensor(s).shape.row_size;
  out.x = DenseMatrix(items.size(), width);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& [src, row] = items[i];
    std::size_t col = 0;
    for (std::size_t s : src->slots)
      for (double v : params.tensor(s).row(row)) out.x(i, col++) = v;
    const bool entity = src->index == RowIndex::entity;
    out.labels.push_back(entity ? vocab.entity(static_cast<EntityId>(row))
                                : vocab.relation(static_cast<RelationId>(row)));
    out.kinds.emplace_back(entity ? "entity" : "relation");
  }
  return out;
}

ProjectionResult project(const EmbeddingPoints& points, const ProjectionSettings& settings,
                         std::uint64_t seed) {
  ProjectionResult r;
  if (settings.method == ProjectionMethod::pca) {
    r = pca_2d(points.x);
  } else {
    TsneSettings ts;
    ts.perplexity = settings.perplexity;
    ts.iterations = settings.iterations;
    ts.seed = seed;
    r = tsne_2d(points.x, ts);
  }
  r.labels = points.labels;
  r.kinds = points.kinds;
  return r;
}

void write_embedding_csv(const ProjectionResult& proj, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "label,x,y,kind\n";
  for (std::size_t i = 0; i < proj.coords.rows; ++i) {
    const std::string label = i < proj.labels.size() ? proj.labels[i] : std::to_string(i);
    const std::string kind = i < proj.kinds.size() ? proj.kinds[i] : "entity";
    out << csv_field(label) << ',' << format_double(proj.coords(i, 0)) << ','
        << format_double(proj.coords(i, 1)) << ',' << kind << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

namespace {

constexpr double kWidth = 640, kHeight = 420, kLeft = 70, kRight = 20, kTop = 40, kBottom = 50;

std::string svg_open(const std::string& title) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n"
    << "<rect x=\"0\" y=\"0\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" fill=\"white\"/>\n"
    << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"16\">"
    << xml_escape(title) << "</text>\n";
  return s.str();
}

std::string axes(double y_lo, double y_hi, const std::string& x_label, const std::string& y_label) {
  std::ostringstream s;
  const double x0 = kLeft, y0 = kHeight - kBottom, x1 = kWidth - kRight, y1 = kTop;
  s << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
    << "\" stroke=\"black\"/>\n"
    << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
    << "\" stroke=\"black\"/>\n"
    << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 12
    << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(x_label)
    << "</text>\n"
    << "<text x=\"16\" y=\"" << (y0 + y1) / 2 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"12\" transform=\"rotate(-90 16 "
    << (y0 + y1) / 2 << ")\">" << xml_escape(y_label) << "</text>\n"
    << "<text x=\"" << x0 - 6 << "\" y=\"" << y0 << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
       "font-size=\"10\">"
    << format_double(y_lo) << "</text>\n"
    << "<text x=\"" << x0 - 6 << "\" y=\"" << y1 + 10
    << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << format_double(y_hi)
    << "</text>\n";
  return s.str();
}

}  // namespace

std::string svg_line_plot(const std::vector<double>& ys, const std::string& title,
                          const std::string& x_label, const std::string& y_label) {
  std::string out = svg_open(title);
  if (ys.empty()) {
    out += "<text x=\"" + format_double(kWidth / 2) + "\" y=\"" + format_double(kHeight / 2) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">no data</text>\n";
    return out + "</svg>\n";
  }
  auto [lo_it, hi_it] = std::minmax_element(ys.begin(), ys.end());
  double lo = *lo_it, hi = *hi_it;
  if (hi == lo) hi = lo + 1;
  out += axes(lo, hi, x_label, y_label);
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  std::ostringstream pts;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double fx = ys.size() == 1 ? 0.5 : static_cast<double>(i) / static_cast<double>(ys.size() - 1);
    pts << (i ? " " : "") << kLeft + fx * pw << ',' << kTop + (1 - (ys[i] - lo) / (hi - lo)) * ph;
  }
  out += "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"" + pts.str() +
         "\"/>\n";
  return out + "</svg>\n";
}

std::string svg_bar_chart(const std::vector<std::string>& names,
                          const std::vector<std::vector<double>>& series,
                          const std::vector<std::string>& series_names, const std::string& title) {
  static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728"};
  std::string out = svg_open(title);
  double hi = 0;
  for (const auto& s : series)
    for (double v : s) hi = std::max(hi, v);
  if (hi <= 0) hi = 1;
  out += axes(0, hi, "", "");
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  const double group = names.empty() ? pw : pw / static_cast<double>(names.size());
  const double bar = group * 0.8 / static_cast<double>(std::max<std::size_t>(series.size(), 1));
  std::ostringstream s;
  for (std::size_t g = 0; g < names.size(); ++g) {
    for (std::size_t k = 0; k < series.size(); ++k) {
      const double v = g < series[k].size() ? series[k][g] : 0.0;
      const double h = std::max(0.0, v) / hi * ph;
      s << "<rect x=\"" << kLeft + g * group + group * 0.1 + k * bar << "\" y=\""
        << kTop + ph - h << "\" width=\"" << bar << "\" height=\"" << h << "\" fill=\""
        << colors[k % 4] << "\"/>\n";
    }
    s << "<text x=\"" << kLeft + (g + 0.5) * group << "\" y=\"" << kHeight - kBottom + 16
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
      << xml_escape(names[g]) << "</text>\n";
  }
  for (std::size_t k = 0; k < series_names.size(); ++k)
    s << "<text x=\"" << kWidth - kRight - 90 << "\" y=\"" << kTop + 14 * (k + 1) << "\" fill=\""
      << colors[k % 4] << "\" font-family=\"sans-serif\" font-size=\"12\">"
      << xml_escape(series_names[k]) << "</text>\n";
  return out + s.str() + "</svg>\n";
}

std::string svg_scatter(const ProjectionResult& proj, const std::string& title) {
  std::string out = svg_open(title);
  const std::size_t n = proj.coords.rows;
  double xlo = 0, xhi = 1, ylo = 0, yhi = 1;
  if (n > 0) {
    xlo = xhi = proj.coords(0, 0);
    ylo = yhi = proj.coords(0, 1);
    for (std::size_t i = 1; i < n; ++i) {
      xlo = std::min(xlo, proj.coords(i, 0));
      xhi = std::max(xhi, proj.coords(i, 0));
      ylo = std::min(ylo, proj.coords(i, 1));
      yhi = std::max(yhi, proj.coords(i, 1));
    }
  }
  if (xhi == xlo) xhi = xlo + 1;
  if (yhi == ylo) yhi = ylo + 1;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  std::ostringstream s;
  for (std::size_t i = 0; i < n; ++i) {
    const bool relation = i < proj.kinds.size() && proj.kinds[i] == "relation";
    const double px = kLeft + (proj.coords(i, 0) - xlo) / (xhi - xlo) * pw;
    const double py = kTop + (1 - (proj.coords(i, 1) - ylo) / (yhi - ylo)) * ph;
    s << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"" << (relation ? 5 : 3)
      << "\" fill=\"" << (relation ? "#d62728" : "#1f77b4") << "\"><title>"
      << xml_escape(i < proj.labels.size() ? proj.labels[i] : std::to_string(i))
      << "</title></circle>\n";
  }
  return out + s.str() + "</svg>\n";
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace

void export_plots(const TrainRecord& record, const MetricsReport& report,
                  const ProjectionResult* proj, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir.string() + "': " + ec.message());
  write_loss_csv(record, out_dir / "loss.csv");
  write_timing_csv(record, out_dir / "timing.csv");
  write_metrics_csv(report, out_dir / "metrics.csv");
  write_text(out_dir / "loss.svg", svg_line_plot(record.epoch_loss, "Training loss", "epoch", "mean loss"));
  write_text(out_dir / "mean_rank.svg",
             svg_bar_chart({"mean rank"}, {{report.mean_rank_raw}, {report.mean_rank_filtered}},
                           {"raw", "filtered"}, "Mean rank"));
  std::vector<std::string> names;
  for (std::size_t k : kHitsAt) names.push_back("hits@" + std::to_string(k));
  write_text(out_dir / "hits.svg",
             svg_bar_chart(names,
                           {std::vector<double>(report.hits_raw.begin(), report.hits_raw.end()),
                            std::vector<double>(report.hits_filtered.begin(), report.hits_filtered.end())},
                           {"raw", "filtered"}, "Hit ratios"));
  if (proj) {
    write_embedding_csv(*proj, out_dir / "embedding_2d.csv");
    write_text(out_dir / "embedding_2d.svg", svg_scatter(*proj, "Entity and relation embeddings"));
  }
}

}  // namespace kge
