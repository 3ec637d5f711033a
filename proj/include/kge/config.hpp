#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "kge/models.hpp"
#include "kge/trainer.hpp"

namespace kge {

using Json = nlohmann::json;

enum class ProjectionMethod { pca, tsne };

std::string_view to_string(ProjectionMethod m);
std::optional<ProjectionMethod> parse_projection_method(std::string_view s);

struct ProjectionSettings {
  ProjectionMethod method = ProjectionMethod::tsne;
  double perplexity = 30.0;
  std::size_t iterations = 1000;
  std::size_t max_points = 2000;
};

struct RunConfig {
  std::filesystem::path dataset;
  ModelKind model = ModelKind::transe;
  HyperParams hp;
  std::size_t workers = 1;
  std::size_t queue_capacity = 8;
  bool reject_train_positives = false;
  std::size_t eval_workers = 1;
  std::size_t eval_every = 0;
  std::size_t eval_max_triples = 1000;
  std::filesystem::path out = "out";
  bool golden = false;
  ProjectionSettings projection;

  // Throws ConfigError naming the offending key.
  void validate() const;
  TrainOptions train_options() const;
};

// One entry per accepted configuration key; the same table drives JSON
// parsing, command line flags and the documented defaults.
struct ConfigKey {
  std::string name;
  std::string type;  // "bool", "int", "real", "string" or "a|b|c"
  std::string help;
  std::function<void(RunConfig&, const Json&)> set;
  std::function<Json(const RunConfig&)> get;
};

const std::vector<ConfigKey>& config_keys();
const ConfigKey* find_config_key(std::string_view name);

// Converts command line text to the JSON type the key expects.
Json parse_config_value(const ConfigKey& key, std::string_view text);

// Precedence: command line overrides > config file > golden preset (when
// `golden` is set) > built-in defaults. loss_kind defaults to the model
// family's loss when nobody sets it.
RunConfig load_config(const std::optional<std::filesystem::path>& path, const Json& overrides);
RunConfig load_config(const Json& file_doc, const Json& overrides);

// The eight keys of a golden setting, in key-sorted order.
const std::vector<std::string>& golden_keys();

HyperParams golden_preset(ModelKind kind);
// Throws ConfigError for a name outside the registry.
HyperParams golden_preset(std::string_view model_name);

// Golden-key subset of hp as a JSON object.
Json golden_json(const HyperParams& hp);
// Applies a JSON object of golden keys onto base; unknown keys are rejected.
HyperParams apply_golden_json(const Json& doc, HyperParams base = {});

void save_preset(const HyperParams& hp, const std::filesystem::path& path);
HyperParams load_preset(const std::filesystem::path& path);

// {'L1_flag': False, 'batch_size': 256, ...}
std::string format_golden_setting(const HyperParams& hp);

}  // namespace kge
