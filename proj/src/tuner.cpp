#include "kge/tuner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "kge/error.hpp"
#include "kge/evaluator.hpp"

namespace kge {

namespace {

bool same_value(const ParamValue& a, const ParamValue& b) {
  if (a.index() != b.index()) {
    // integers written to JSON may come back as doubles and vice versa
    auto num = [](const ParamValue& v) -> std::optional<double> {
      if (auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
      if (auto* d = std::get_if<double>(&v)) return *d;
      return std::nullopt;
    };
    auto x = num(a), y = num(b);
    return x && y && *x == *y;
  }
  return a == b;
}

std::optional<double> numeric(const ParamValue& v) {
  if (auto* d = std::get_if<double>(&v)) return *d;
  if (auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  return std::nullopt;
}

// Parzen estimator over [low, high] (already transformed to the search scale).
struct Parzen {
  std::vector<double> mus, sigmas;
  double low = 0, high = 1;

  Parzen(std::vector<double> obs, double lo, double hi) : low(lo), high(hi) {
    const double prior_mu = 0.5 * (lo + hi);
    const double range = hi - lo;
    obs.push_back(prior_mu);
    std::sort(obs.begin(), obs.end());
    const std::size_t n = obs.size();
    const double min_sigma = range / std::min(100.0, static_cast<double>(n) + 1.0);
    bool prior_done = false;
    for (std::size_t i = 0; i < n; ++i) {
      mus.push_back(obs[i]);
      if (!prior_done && obs[i] == prior_mu) {
        sigmas.push_back(range);
        prior_done = true;
        continue;
      }
      // bandwidth from the spacing to the neighbouring points (bounds at the ends)
      const double left = obs[i] - (i == 0 ? lo : obs[i - 1]);
      const double right = (i + 1 == n ? hi : obs[i + 1]) - obs[i];
      sigmas.push_back(std::clamp(std::max(left, right), min_sigma, range));
    }
  }

  static double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

  double log_pdf(double x) const {
    double total = 0;
    for (std::size_t i = 0; i < mus.size(); ++i) {
      const double z = (x - mus[i]) / sigmas[i];
      const double mass = normal_cdf((high - mus[i]) / sigmas[i]) - normal_cdf((low - mus[i]) / sigmas[i]);
      total += std::exp(-0.5 * z * z) / (sigmas[i] * std::sqrt(2 * std::numbers::pi) * std::max(mass, 1e-300));
    }
    return std::log(std::max(total / static_cast<double>(mus.size()), 1e-300));
  }

  double sample(Rng& rng) const {
    const std::size_t k = uniform_below(rng, mus.size());
    std::normal_distribution<double> normal(mus[k], sigmas[k]);
    for (int attempt = 0; attempt < 100; ++attempt) {
      const double x = normal(rng);
      if (x >= low && x <= high) return x;
    }
    return std::clamp(normal(rng), low, high);
  }
};

// Smoothed frequency model over a finite set of options (indices).
struct Counts {
  std::vector<double> weights;

  Counts(std::size_t options, const std::vector<std::size_t>& observed) : weights(options, 1.0) {
    for (std::size_t o : observed) weights[o] += 1.0;
    double total = 0;
    for (double w : weights) total += w;
    for (double& w : weights) w /= total;
  }

  double log_pmf(std::size_t o) const { return std::log(weights[o]); }

  std::size_t sample(Rng& rng) const {
    const double u = uniform01(rng);
    double acc = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    return weights.size() - 1;
  }
};

std::size_t option_count(const Domain& d) {
  if (auto* c = std::get_if<Categorical>(&d)) return c->choices.size();
  return std::get<IntGrid>(d).values.size();
}

std::optional<std::size_t> option_index(const Domain& d, const ParamValue& v) {
  if (auto* c = std::get_if<Categorical>(&d)) {
    for (std::size_t i = 0; i < c->choices.size(); ++i)
      if (same_value(c->choices[i], v)) return i;
    return std::nullopt;
  }
  const auto& g = std::get<IntGrid>(d).values;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (same_value(ParamValue{g[i]}, v)) return i;
  return std::nullopt;
}

ParamValue option_value(const Domain& d, std::size_t i) {
  if (auto* c = std::get_if<Categorical>(&d)) return c->choices[i];
  return std::get<IntGrid>(d).values[i];
}

bool is_discrete(const Domain& d) {
  return std::holds_alternative<Categorical>(d) || std::holds_alternative<IntGrid>(d);
}

// Continuous bounds on the scale the estimator works in (log for log-uniform).
std::pair<double, double> scaled_bounds(const Domain& d) {
  if (auto* l = std::get_if<LogUniform>(&d)) return {std::log(l->low), std::log(l->high)};
  const auto& u = std::get<Uniform>(d);
  return {u.low, u.high};
}

double to_scale(const Domain& d, double v) {
  return std::holds_alternative<LogUniform>(d) ? std::log(v) : v;
}

double from_scale(const Domain& d, double z) {
  if (auto* l = std::get_if<LogUniform>(&d)) return std::clamp(std::exp(z), l->low, l->high);
  return z;
}

// Every point of a space whose dimensions are all discrete; empty when a
// dimension is continuous or the grid is too large to list.
std::vector<Assignment> enumerate_points(const SearchSpace& space) {
  constexpr std::size_t kMaxPoints = 4096;
  std::vector<Assignment> points(1);
  for (const auto& [name, domain] : space.dims()) {
    if (!is_discrete(domain)) return {};
    const std::size_t n = option_count(domain);
    if (points.size() * n > kMaxPoints) return {};
    std::vector<Assignment> next;
    for (const Assignment& p : points)
      for (std::size_t i = 0; i < n; ++i) {
        next.push_back(p);
        next.back()[name] = option_value(domain, i);
      }
    points = std::move(next);
  }
  return points;
}

bool visited(const std::vector<Trial>& history, const Assignment& a) {
  return std::any_of(history.begin(), history.end(),
                     [&](const Trial& t) { return t.assignment == a; });
}

ParamValue random_value(const Domain& d, Rng& rng) {
  if (is_discrete(d)) return option_value(d, uniform_below(rng, option_count(d)));
  const auto [lo, hi] = scaled_bounds(d);
  return from_scale(d, lo + (hi - lo) * uniform01(rng));
}

}  // namespace

SearchSpace& SearchSpace::add(std::string name, Domain domain) {
  if (name.empty()) throw ConfigError("search space: empty dimension name");
  for (const auto& [n, _] : dims_)
    if (n == name) throw ConfigError(name + ": repeated search dimension");
  std::visit(
      [&](const auto& d) {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, Categorical>) {
          if (d.choices.empty()) throw ConfigError(name + ": empty categorical domain");
        } else if constexpr (std::is_same_v<D, IntGrid>) {
          if (d.values.empty()) throw ConfigError(name + ": empty integer grid");
        } else {
          if (!std::isfinite(d.low) || !std::isfinite(d.high) || !(d.low < d.high))
            throw ConfigError(name + ": bounds must be finite with low < high");
          if constexpr (std::is_same_v<D, LogUniform>)
            if (d.low <= 0) throw ConfigError(name + ": log-uniform bounds must be positive");
        }
      },
      domain);
  dims_.emplace_back(std::move(name), std::move(domain));
  return *this;
}

bool SearchSpace::contains(const Assignment& a) const {
  if (a.size() != dims_.size()) return false;
  for (const auto& [name, domain] : dims_) {
    auto it = a.find(name);
    if (it == a.end()) return false;
    if (is_discrete(domain)) {
      if (!option_index(domain, it->second)) return false;
      continue;
    }
    const auto v = numeric(it->second);
    if (!v) return false;
    const auto [lo, hi] = std::visit(
        [](const auto& d) -> std::pair<double, double> {
          using D = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<D, LogUniform> || std::is_same_v<D, Uniform>)
            return {d.low, d.high};
          else
            return {0, 0};
        },
        domain);
    if (*v < lo || *v > hi) return false;
  }
  return true;
}

SearchSpace SearchSpace::default_space() {
  SearchSpace s;
  s.add("L1_flag", Categorical{{true, false}});
  s.add("batch_size", IntGrid{{64, 128, 256, 512}});
  s.add("epochs", IntGrid{{10, 50, 100, 200}});
  s.add("hidden_size", IntGrid{{16, 32, 64, 128}});
  s.add("learning_rate", LogUniform{1e-4, 1e-1});
  s.add("margin", Uniform{0.1, 5.0});
  s.add("opt", Categorical{{std::string("sgd"), std::string("adam")}});
  s.add("samp", Categorical{{std::string("uniform"), std::string("bern")}});
  return s;
}

Json to_json(const ParamValue& v) {
  return std::visit([](const auto& x) { return Json(x); }, v);
}

namespace {

ParamValue value_from_json(const Json& v, const std::string& where) {
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number_float()) return v.get<double>();
  if (v.is_string()) return v.get<std::string>();
  throw ConfigError(where + ": unsupported value " + v.dump());
}

std::pair<double, double> bounds_from_json(const Json& v, const std::string& name) {
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    throw ConfigError(name + ": expected [low, high]");
  return {v[0].get<double>(), v[1].get<double>()};
}

}  // namespace

SearchSpace SearchSpace::from_json(const Json& doc) {
  if (!doc.is_object()) throw ConfigError("search space: expected a JSON object");
  SearchSpace s;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string& name = it.key();
    const Json& spec = it.value();
    if (!spec.is_object() || spec.size() != 1)
      throw ConfigError(name + ": expected {\"categorical\"|\"int_grid\"|\"log_uniform\"|\"uniform\": ...}");
    const std::string kind = spec.begin().key();
    const Json& body = spec.begin().value();
    if (kind == "categorical") {
      if (!body.is_array()) throw ConfigError(name + ": categorical expects an array");
      Categorical c;
      for (const auto& v : body) c.choices.push_back(value_from_json(v, name));
      s.add(name, std::move(c));
    } else if (kind == "int_grid") {
      if (!body.is_array()) throw ConfigError(name + ": int_grid expects an array");
      IntGrid g;
      for (const auto& v : body) {
        if (!v.is_number_integer()) throw ConfigError(name + ": int_grid values must be integers");
        g.values.push_back(v.get<std::int64_t>());
      }
      s.add(name, std::move(g));
    } else if (kind == "log_uniform") {
      const auto [lo, hi] = bounds_from_json(body, name);
      s.add(name, LogUniform{lo, hi});
    } else if (kind == "uniform") {
      const auto [lo, hi] = bounds_from_json(body, name);
      s.add(name, Uniform{lo, hi});
    } else {
      throw ConfigError(name + ": unknown domain kind '" + kind + "'");
    }
  }
  return s;
}

Json SearchSpace::to_json() const {
  Json out = Json::object();
  for (const auto& [name, domain] : dims_) {
    std::visit(
        [&](const auto& d) {
          using D = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<D, Categorical>) {
            Json arr = Json::array();
            for (const auto& c : d.choices) arr.push_back(kge::to_json(c));
            out[name] = {{"categorical", arr}};
          } else if constexpr (std::is_same_v<D, IntGrid>) {
            out[name] = {{"int_grid", d.values}};
          } else if constexpr (std::is_same_v<D, LogUniform>) {
            out[name] = {{"log_uniform", {d.low, d.high}}};
          } else {
            out[name] = {{"uniform", {d.low, d.high}}};
          }
        },
        domain);
  }
  return out;
}

Assignment random_assignment(const SearchSpace& space, Rng& rng) {
  Assignment a;
  for (const auto& [name, domain] : space.dims()) a[name] = random_value(domain, rng);
  return a;
}

Assignment suggest(const SearchSpace& space, std::span<const Trial> history, Rng& rng,
                   const TpeSettings& settings) {
  std::vector<const Trial*> done;
  for (const Trial& t : history)
    if (t.status == TrialStatus::done && std::isfinite(t.objective) && space.contains(t.assignment))
      done.push_back(&t);
  if (history.size() < settings.n_startup || done.size() < 2) return random_assignment(space, rng);

  std::stable_sort(done.begin(), done.end(),
                   [](const Trial* a, const Trial* b) { return a->objective < b->objective; });
  const auto n_good = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(settings.gamma * static_cast<double>(done.size()))), 1,
      done.size() - 1);

  struct DimModel {
    std::optional<Counts> good_counts, bad_counts;
    std::optional<Parzen> good_kde, bad_kde;
  };
  std::vector<DimModel> models;
  for (const auto& [name, domain] : space.dims()) {
    DimModel m;
    if (is_discrete(domain)) {
      std::vector<std::size_t> good, bad;
      for (std::size_t i = 0; i < done.size(); ++i)
        (i < n_good ? good : bad).push_back(*option_index(domain, done[i]->assignment.at(name)));
      m.good_counts.emplace(option_count(domain), good);
      m.bad_counts.emplace(option_count(domain), bad);
    } else {
      std::vector<double> good, bad;
      for (std::size_t i = 0; i < done.size(); ++i)
        (i < n_good ? good : bad).push_back(to_scale(domain, *numeric(done[i]->assignment.at(name))));
      const auto [lo, hi] = scaled_bounds(domain);
      m.good_kde.emplace(std::move(good), lo, hi);
      m.bad_kde.emplace(std::move(bad), lo, hi);
    }
    models.push_back(std::move(m));
  }

  Assignment best;
  double best_ratio = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < settings.n_candidates; ++c) {
    Assignment cand;
    double ratio = 0;
    for (std::size_t k = 0; k < space.dims().size(); ++k) {
      const auto& [name, domain] = space.dims()[k];
      const DimModel& m = models[k];
      if (m.good_counts) {
        const std::size_t o = m.good_counts->sample(rng);
        cand[name] = option_value(domain, o);
        ratio += m.good_counts->log_pmf(o) - m.bad_counts->log_pmf(o);
      } else {
        const double z = m.good_kde->sample(rng);
        cand[name] = from_scale(domain, z);
        ratio += m.good_kde->log_pdf(z) - m.bad_kde->log_pdf(z);
      }
    }
    if (ratio > best_ratio) {
      best_ratio = ratio;
      best = std::move(cand);
    }
  }
  return best;
}

Json trial_to_json(std::size_t index, const Trial& t) {
  Json params = Json::object();
  for (const auto& [k, v] : t.assignment) params[k] = to_json(v);
  Json out = {{"trial", index},
              {"status", t.status == TrialStatus::done ? "done" : "failed"},
              {"seconds", t.seconds},
              {"params", params}};
  out["objective"] = t.status == TrialStatus::done ? Json(t.objective) : Json(nullptr);
  return out;
}

Trial trial_from_json(const Json& doc) {
  if (!doc.is_object() || !doc.contains("params") || !doc.contains("status"))
    throw ConfigError("trials log: malformed record " + doc.dump());
  Trial t;
  const std::string status = doc.at("status").get<std::string>();
  if (status != "done" && status != "failed")
    throw ConfigError("trials log: unknown status '" + status + "'");
  t.status = status == "done" ? TrialStatus::done : TrialStatus::failed;
  if (t.status == TrialStatus::done) {
    if (!doc.contains("objective") || !doc.at("objective").is_number())
      throw ConfigError("trials log: done trial without objective");
    t.objective = doc.at("objective").get<double>();
  }
  if (doc.contains("seconds") && doc.at("seconds").is_number()) t.seconds = doc.at("seconds").get<double>();
  for (auto it = doc.at("params").begin(); it != doc.at("params").end(); ++it)
    t.assignment[it.key()] = value_from_json(it.value(), it.key());
  return t;
}

std::vector<Trial> read_trials_log(const std::filesystem::path& path) {
  std::vector<Trial> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(trial_from_json(Json::parse(line)));
    } catch (const Json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

TuneResult tune(const SearchSpace& space, std::size_t budget, const Objective& objective,
                const TuneOptions& options) {
  if (budget < 1) throw ConfigError("budget: must be >= 1");
  TuneResult result;
  std::ofstream log;
  if (options.trials_log) {
    result.history = read_trials_log(*options.trials_log);
    for (const Trial& t : result.history)
      if (!space.contains(t.assignment))
        throw ConfigError("trials log '" + options.trials_log->string() +
                          "' was written for a different search space");
    if (options.trials_log->has_parent_path())
      std::filesystem::create_directories(options.trials_log->parent_path());
    log.open(*options.trials_log, std::ios::app);
    if (!log) throw IoError("cannot append to '" + options.trials_log->string() + "'");
  }

  const std::vector<Assignment> grid = enumerate_points(space);
  while (result.history.size() < budget) {
    const std::size_t index = result.history.size();
    Rng rng = make_rng(options.seed, 0x54504531ULL, index);
    Trial trial;
    trial.assignment = options.random_search ? random_assignment(space, rng)
                                             : suggest(space, result.history, rng, options.tpe);
    if (!options.random_search && visited(result.history, trial.assignment)) {
      // finite grid: spend the trial on a point not yet evaluated
      std::vector<const Assignment*> fresh;
      for (const Assignment& p : grid)
        if (!visited(result.history, p)) fresh.push_back(&p);
      if (!fresh.empty()) trial.assignment = *fresh[uniform_below(rng, fresh.size())];
    }
    const auto start = std::chrono::steady_clock::now();
    try {
      trial.objective = objective(trial.assignment);
      trial.status = std::isfinite(trial.objective) ? TrialStatus::done : TrialStatus::failed;
    } catch (const NumericError&) {
      trial.status = TrialStatus::failed;
    }
    trial.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (log.is_open()) {
      log << trial_to_json(index, trial).dump() << '\n';
      log.flush();
    }
    if (options.on_trial) options.on_trial(index, trial);
    result.history.push_back(std::move(trial));
  }

  const Trial* best = nullptr;
  for (const Trial& t : result.history)
    if (t.status == TrialStatus::done && (!best || t.objective < best->objective)) best = &t;
  if (!best) throw NoResultError("all " + std::to_string(result.history.size()) + " trials failed");
  result.best = *best;
  return result;
}

HyperParams apply_assignment(const Assignment& a, HyperParams base) {
  RunConfig c;
  c.hp = base;
  for (const auto& [name, value] : a) {
    const ConfigKey* key = find_config_key(name);
    const bool tunable = key && name != "dataset" && name != "model" && name != "golden" &&
                         name != "out";
    if (!tunable) throw ConfigError(name + ": not a tunable hyperparameter");
    key->set(c, to_json(value));
  }
  return c.hp;
}

TuneResult tune_model(const KgDataset& d, const RunConfig& base, const SearchSpace& space,
                      std::size_t budget, const TuneOptions& options) {
  if (d.valid().empty()) throw UserError("tuning needs a non-empty valid split");
  // reject spaces that name non-hyperparameter keys before spending any budget
  Rng probe(0);
  apply_assignment(random_assignment(space, probe), base.hp);

  auto objective = [&](const Assignment& a) {
    HyperParams hp = apply_assignment(a, base.hp);
    hp.validate();
    TrainOptions opts = base.train_options();
    opts.validate = false;
    const TrainResult trained = train(d, base.model, hp, opts);
    return evaluate(trained.params, d, Split::valid, base.eval_workers).mean_rank_filtered;
  };
  return tune(space, budget, objective, options);
}

}  // namespace kge
