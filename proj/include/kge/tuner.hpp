#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "kge/config.hpp"
#include "kge/kg_store.hpp"
#include "kge/models.hpp"
#include "kge/rng.hpp"
#include "kge/trainer.hpp"

namespace kge {

using ParamValue = std::variant<bool, std::int64_t, double, std::string>;

struct Categorical {
  std::vector<ParamValue> choices;
};
struct IntGrid {
  std::vector<std::int64_t> values;
};
struct LogUniform {
  double low = 0, high = 0;
};
struct Uniform {
  double low = 0, high = 0;
};
using Domain = std::variant<Categorical, IntGrid, LogUniform, Uniform>;

using Assignment = std::map<std::string, ParamValue>;

class SearchSpace {
 public:
  // Throws ConfigError on an empty domain, non-finite or inverted bounds,
  // a non-positive log-uniform bound, or a repeated name.
  SearchSpace& add(std::string name, Domain domain);

  const std::vector<std::pair<std::string, Domain>>& dims() const { return dims_; }
  bool contains(const Assignment& a) const;

  // Hyperparameter search space used by `kge tune` when no --space is given.
  static SearchSpace default_space();

  // {"learning_rate": {"log_uniform": [1e-4, 0.1]}, "opt": {"categorical": ["sgd", "adam"]},
  //  "batch_size": {"int_grid": [64, 128]}, "margin": {"uniform": [0.1, 5]}}
  static SearchSpace from_json(const Json& doc);
  Json to_json() const;

 private:
  std::vector<std::pair<std::string, Domain>> dims_;
};

enum class TrialStatus { done, failed };

struct Trial {
  Assignment assignment;
  double objective = 0;  // lower is better; meaningful when done
  TrialStatus status = TrialStatus::done;
  double seconds = 0;
};

struct TpeSettings {
  std::size_t n_startup = 10;
  double gamma = 0.25;
  std::size_t n_candidates = 24;
};

Assignment random_assignment(const SearchSpace& space, Rng& rng);

// Tree-structured Parzen estimator. Uniform random while the history has
// fewer than n_startup trials; afterwards the done trials are split at the
// gamma quantile, each dimension gets an independent good and bad density,
// n_candidates points are drawn from the good densities and the one with
// the largest good/bad ratio is returned. Failed trials are ignored.
Assignment suggest(const SearchSpace& space, std::span<const Trial> history, Rng& rng,
                   const TpeSettings& settings = {});

using Objective = std::function<double(const Assignment&)>;

struct TuneOptions {
  std::uint64_t seed = 0;
  TpeSettings tpe;
  // Line-delimited JSON trial log; existing records are resumed.
  std::optional<std::filesystem::path> trials_log;
  bool random_search = false;
  std::function<void(std::size_t, const Trial&)> on_trial;
};

struct TuneResult {
  Trial best;
  std::vector<Trial> history;
};

// Runs trials until the history holds `budget` of them. An objective that
// returns a non-finite value or throws NumericError marks its trial failed.
// Throws NoResultError when no trial succeeds.
TuneResult tune(const SearchSpace& space, std::size_t budget, const Objective& objective,
                const TuneOptions& options = {});

// Keys are configuration keys; values are checked by the key's setter.
HyperParams apply_assignment(const Assignment& a, HyperParams base);

// Objective = filtered mean rank on the valid split after training on train.
TuneResult tune_model(const KgDataset& d, const RunConfig& base, const SearchSpace& space,
                      std::size_t budget, const TuneOptions& options = {});

Json to_json(const ParamValue& v);
Json trial_to_json(std::size_t index, const Trial& t);
Trial trial_from_json(const Json& doc);
std::vector<Trial> read_trials_log(const std::filesystem::path& path);

}  // namespace kge
