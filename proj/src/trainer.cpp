#include "kge/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "kge/error.hpp"
#include "kge/text.hpp"

namespace kge {

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

std::optional<OptimizerKind> parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  return std::nullopt;
}

void HyperParams::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size: must be >= 1");
  if (epochs < 1) throw ConfigError("epochs: must be >= 1");
  if (hidden_size < 1) throw ConfigError("hidden_size: must be >= 1");
  if (hidden_size > 4096) throw ConfigError("hidden_size: must be <= 4096");
  if (!std::isfinite(learning_rate) || learning_rate <= 0)
    throw ConfigError("learning_rate: must be a finite value > 0");
  if (!std::isfinite(margin) || margin < 0) throw ConfigError("margin: must be a finite value >= 0");
  if (!std::isfinite(lambda_reg) || lambda_reg < 0)
    throw ConfigError("lambda_reg: must be a finite value >= 0");
}

void SgdOptimizer::step(ModelParams& params, const SparseGrad& grad) {
  const auto& tensors = grad.tensors();
  for (std::size_t s = 0; s < tensors.size(); ++s) {
    const auto& g = tensors[s];
    for (std::size_t i = 0; i < g.rows.size(); ++i) {
      auto row = params.tensor(s).row(g.rows[i]);
      const auto gr = g.at(i);
      for (std::size_t k = 0; k < row.size(); ++k) row[k] -= lr_ * gr[k];
    }
  }
}

AdamOptimizer::AdamOptimizer(double learning_rate, std::size_t num_tensors, double beta1,
                             double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps), state_(num_tensors) {}

void AdamOptimizer::step(ModelParams& params, const SparseGrad& grad) {
  const auto& tensors = grad.tensors();
  for (std::size_t s = 0; s < tensors.size(); ++s) {
    const auto& g = tensors[s];
    for (std::size_t i = 0; i < g.rows.size(); ++i) {
      auto row = params.tensor(s).row(g.rows[i]);
      const auto gr = g.at(i);
      RowState& st = state_[s][g.rows[i]];
      if (st.m.empty()) {
        st.m.assign(row.size(), 0.0);
        st.v.assign(row.size(), 0.0);
      }
      ++st.steps;
      const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(st.steps));
      const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(st.steps));
      for (std::size_t k = 0; k < row.size(); ++k) {
        st.m[k] = beta1_ * st.m[k] + (1 - beta1_) * gr[k];
        st.v[k] = beta2_ * st.v[k] + (1 - beta2_) * gr[k] * gr[k];
        row[k] -= lr_ * (st.m[k] / c1) / (std::sqrt(st.v[k] / c2) + eps_);
      }
    }
  }
}

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, double learning_rate,
                                          const ModelParams& params) {
  if (kind == OptimizerKind::adam)
    return std::make_unique<AdamOptimizer>(learning_rate, params.tensors().size());
  return std::make_unique<SgdOptimizer>(learning_rate);
}

LossSpec loss_spec(const HyperParams& hp) {
  return LossSpec{hp.loss_kind, hp.margin, hp.loss_kind == LossKind::softplus ? hp.lambda_reg : 0.0};
}

ModelSettings model_settings(const HyperParams& hp) {
  ModelSettings s;
  s.l1 = hp.L1_flag;
  return s;
}

SamplerConfig sampler_config(const HyperParams& hp, const TrainOptions& opts) {
  SamplerConfig cfg;
  cfg.strategy = hp.samp;
  cfg.batch_size = hp.batch_size;
  cfg.reject_train_positives = opts.reject_train_positives;
  cfg.seed = hp.seed;
  cfg.workers = opts.workers;
  cfg.queue_capacity = opts.queue_capacity;
  return cfg;
}

TrainResult train(const KgDataset& d, ModelKind kind, const HyperParams& hp,
                  const TrainOptions& opts) {
  return train(d,
               init_params(kind, d.num_entities(), d.num_relations(), hp.hidden_size, hp.seed,
                           model_settings(hp)),
               hp, opts);
}

namespace {

std::string offending_rows(const ModelParams& params, const SparseGrad& grad, const Batch& batch) {
  std::ostringstream out;
  std::size_t listed = 0;
  const auto& tensors = grad.tensors();
  for (std::size_t s = 0; s < tensors.size() && listed < 16; ++s) {
    for (std::uint32_t r : tensors[s].rows) {
      bool bad = false;
      for (double v : params.tensor(s).row(r)) bad = bad || !std::isfinite(v);
      if (bad && listed++ < 16) out << ' ' << params.tensor(s).shape.name << '[' << r << ']';
    }
  }
  if (listed == 0) {
    // parameters are finite but the scores overflowed; report the batch's entities
    for (std::size_t i = 0; i < batch.positives.size() && i < 8; ++i)
      out << " (" << batch.positives[i].head << ',' << batch.positives[i].relation << ','
          << batch.positives[i].tail << ')';
  }
  return out.str();
}

}  // namespace

TrainResult train(const KgDataset& d, ModelParams initial, const HyperParams& hp,
                  const TrainOptions& opts) {
  if (hp.epochs < 1) throw ConfigError("epochs: must be >= 1");
  if (!std::isfinite(hp.learning_rate) || hp.learning_rate < 0)
    throw ConfigError("learning_rate: must be a finite value >= 0");
  if (initial.num_entities() != d.num_entities() || initial.num_relations() != d.num_relations())
    throw ConfigError("model shape does not match the dataset vocabulary");

  TrainResult result{std::move(initial), {}};
  ModelParams& params = result.params;
  const LossSpec spec = loss_spec(hp);
  auto optimizer = make_optimizer(hp.opt, hp.learning_rate, params);
  const std::size_t eval_every = opts.eval_every == 0 ? hp.epochs : opts.eval_every;

  BatchStream stream(d, sampler_config(hp, opts), hp.epochs);
  const std::size_t per_epoch = stream.batches_per_epoch();
  SparseGrad grad(params);

  using clock = std::chrono::steady_clock;
  auto epoch_start = clock::now();
  double loss_sum = 0;
  std::size_t batches = 0;

  while (auto batch = stream.next()) {
    grad.clear();
    const double total = batch_loss_and_gradient(params, *batch, spec, &grad);
    if (!std::isfinite(total)) {
      stream.cancel();
      throw NumericError("non-finite loss at epoch " + std::to_string(batch->epoch + 1) +
                         ", batch " + std::to_string(batch->batch_index) +
                         "; offending rows:" + offending_rows(params, grad, *batch) +
                         ". Try a smaller learning_rate.");
    }
    optimizer->step(params, grad);
    apply_constraints(params, grad);
    loss_sum += total / static_cast<double>(batch->positives.size());

    if (++batches == per_epoch) {
      const double seconds = std::chrono::duration<double>(clock::now() - epoch_start).count();
      const std::size_t epoch = batch->epoch + 1;
      result.record.epoch_loss.push_back(loss_sum / static_cast<double>(per_epoch));
      result.record.epoch_seconds.push_back(seconds);
      if (opts.on_epoch)
        opts.on_epoch(EpochSummary{epoch, hp.epochs, result.record.epoch_loss.back(), seconds});
      if (opts.validate && !d.valid().empty() && (epoch % eval_every == 0 || epoch == hp.epochs)) {
        result.record.validation.emplace_back(
            epoch, evaluate(params, d, Split::valid, opts.eval_workers, opts.eval_max_triples));
      }
      loss_sum = 0;
      batches = 0;
      epoch_start = clock::now();
    }
  }
  result.record.saturations = stream.saturations();
  return result;
}

void write_loss_csv(const TrainRecord& record, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "epoch,mean_loss\n";
  for (std::size_t i = 0; i < record.epoch_loss.size(); ++i)
    out << i + 1 << ',' << format_double(record.epoch_loss[i]) << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

void write_timing_csv(const TrainRecord& record, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "epoch,seconds\n";
  for (std::size_t i = 0; i < record.epoch_seconds.size(); ++i)
    out << i + 1 << ',' << format_double(record.epoch_seconds[i]) << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace kge
