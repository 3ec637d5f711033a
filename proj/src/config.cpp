#include "kge/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>

#include "kge/error.hpp"
#include "kge/text.hpp"

namespace kge {

namespace detail {
const std::map<std::string, std::string>& preset_texts();
}

std::string_view to_string(ProjectionMethod m) { return m == ProjectionMethod::pca ? "pca" : "tsne"; }

std::optional<ProjectionMethod> parse_projection_method(std::string_view s) {
  if (s == "pca") return ProjectionMethod::pca;
  if (s == "tsne") return ProjectionMethod::tsne;
  return std::nullopt;
}

void RunConfig::validate() const {
  hp.validate();
  if (workers < 1 || workers > 256) throw ConfigError("workers: must be in [1, 256]");
  if (queue_capacity < 1) throw ConfigError("queue_capacity: must be >= 1");
  if (eval_workers < 1 || eval_workers > 256) throw ConfigError("eval_workers: must be in [1, 256]");
  if (!std::isfinite(projection.perplexity) || projection.perplexity < 2)
    throw ConfigError("perplexity: must be >= 2");
  if (projection.iterations < 1) throw ConfigError("tsne_iters: must be >= 1");
  if (projection.max_points < 2 || projection.max_points > 5000)
    throw ConfigError("max_points: must be in [2, 5000]");
  if (out.empty()) throw ConfigError("out: must not be empty");
}

TrainOptions RunConfig::train_options() const {
  TrainOptions o;
  o.workers = workers;
  o.queue_capacity = queue_capacity;
  o.reject_train_positives = reject_train_positives;
  o.eval_every = eval_every;
  o.eval_max_triples = eval_max_triples;
  o.eval_workers = eval_workers;
  return o;
}

namespace {

[[noreturn]] void bad(const std::string& key, const std::string& what) {
  throw ConfigError(key + ": " + what);
}

bool as_bool(const std::string& key, const Json& v) {
  if (!v.is_boolean()) bad(key, "expected true or false, got " + v.dump());
  return v.get<bool>();
}

std::size_t as_count(const std::string& key, const Json& v) {
  if (v.is_number_unsigned()) return v.get<std::size_t>();
  if (v.is_number_integer()) {
    if (v.get<std::int64_t>() < 0) bad(key, "must not be negative, got " + v.dump());
    return static_cast<std::size_t>(v.get<std::int64_t>());
  }
  bad(key, "expected an integer, got " + v.dump());
}

double as_real(const std::string& key, const Json& v) {
  if (!v.is_number()) bad(key, "expected a number, got " + v.dump());
  const double d = v.get<double>();
  if (!std::isfinite(d)) bad(key, "must be finite");
  return d;
}

std::string as_string(const std::string& key, const Json& v) {
  if (!v.is_string()) bad(key, "expected a string, got " + v.dump());
  return v.get<std::string>();
}

template <typename Parse>
auto as_enum(const std::string& key, const Json& v, Parse parse, const std::string& choices) {
  const std::string s = as_string(key, v);
  auto parsed = parse(s);
  if (!parsed) bad(key, "'" + s + "' is not one of " + choices);
  return *parsed;
}

std::vector<ConfigKey> build_keys() {
  std::vector<ConfigKey> k;
  auto add = [&](std::string name, std::string type, std::string help,
                 std::function<void(RunConfig&, const Json&)> set,
                 std::function<Json(const RunConfig&)> get) {
    k.push_back({std::move(name), std::move(type), std::move(help), std::move(set), std::move(get)});
  };

  add("dataset", "string", "dataset directory holding train.txt, valid.txt, test.txt",
      [](RunConfig& c, const Json& v) { c.dataset = as_string("dataset", v); },
      [](const RunConfig& c) { return Json(c.dataset.string()); });
  add("model", registered_model_names(), "model kind",
      [](RunConfig& c, const Json& v) {
        const std::string s = as_string("model", v);
        auto kind = parse_model_kind(s);
        if (!kind) bad("model", "unknown model '" + s + "'; registered: " + registered_model_names());
        c.model = *kind;
      },
      [](const RunConfig& c) { return Json(std::string(to_string(c.model))); });
  add("golden", "bool", "start from the model's golden hyperparameter preset",
      [](RunConfig& c, const Json& v) { c.golden = as_bool("golden", v); },
      [](const RunConfig& c) { return Json(c.golden); });
  add("L1_flag", "bool", "L1 (true) or L2 (false) distance for translational models",
      [](RunConfig& c, const Json& v) { c.hp.L1_flag = as_bool("L1_flag", v); },
      [](const RunConfig& c) { return Json(c.hp.L1_flag); });
  add("batch_size", "int", "positive triples per mini-batch",
      [](RunConfig& c, const Json& v) { c.hp.batch_size = as_count("batch_size", v); },
      [](const RunConfig& c) { return Json(c.hp.batch_size); });
  add("epochs", "int", "passes over the train split",
      [](RunConfig& c, const Json& v) { c.hp.epochs = as_count("epochs", v); },
      [](const RunConfig& c) { return Json(c.hp.epochs); });
  add("hidden_size", "int", "embedding dimension",
      [](RunConfig& c, const Json& v) { c.hp.hidden_size = as_count("hidden_size", v); },
      [](const RunConfig& c) { return Json(c.hp.hidden_size); });
  add("learning_rate", "real", "optimizer step size",
      [](RunConfig& c, const Json& v) { c.hp.learning_rate = as_real("learning_rate", v); },
      [](const RunConfig& c) { return Json(c.hp.learning_rate); });
  add("margin", "real", "hinge margin of the margin loss",
      [](RunConfig& c, const Json& v) { c.hp.margin = as_real("margin", v); },
      [](const RunConfig& c) { return Json(c.hp.margin); });
  add("opt", "sgd|adam", "optimizer",
      [](RunConfig& c, const Json& v) { c.hp.opt = as_enum("opt", v, parse_optimizer, "sgd|adam"); },
      [](const RunConfig& c) { return Json(std::string(to_string(c.hp.opt))); });
  add("samp", "uniform|bern", "negative sampling strategy",
      [](RunConfig& c, const Json& v) {
        c.hp.samp = as_enum("samp", v, parse_sampling_strategy, "uniform|bern");
      },
      [](const RunConfig& c) { return Json(std::string(to_string(c.hp.samp))); });
  add("loss_kind", "margin|softplus", "training loss (default depends on the model)",
      [](RunConfig& c, const Json& v) {
        c.hp.loss_kind = as_enum("loss_kind", v, parse_loss_kind, "margin|softplus");
      },
      [](const RunConfig& c) { return Json(std::string(to_string(c.hp.loss_kind))); });
  add("lambda_reg", "real", "L2 weight on touched rows for the softplus loss",
      [](RunConfig& c, const Json& v) { c.hp.lambda_reg = as_real("lambda_reg", v); },
      [](const RunConfig& c) { return Json(c.hp.lambda_reg); });
  add("seed", "int", "random seed for initialization and sampling",
      [](RunConfig& c, const Json& v) { c.hp.seed = as_count("seed", v); },
      [](const RunConfig& c) { return Json(c.hp.seed); });
  add("workers", "int", "batch generator threads (1 = deterministic)",
      [](RunConfig& c, const Json& v) { c.workers = as_count("workers", v); },
      [](const RunConfig& c) { return Json(c.workers); });
  add("queue_capacity", "int", "bounded batch queue capacity",
      [](RunConfig& c, const Json& v) { c.queue_capacity = as_count("queue_capacity", v); },
      [](const RunConfig& c) { return Json(c.queue_capacity); });
  add("reject_train_positives", "bool", "resample negatives that are train facts",
      [](RunConfig& c, const Json& v) {
        c.reject_train_positives = as_bool("reject_train_positives", v);
      },
      [](const RunConfig& c) { return Json(c.reject_train_positives); });
  add("eval_workers", "int", "evaluation threads",
      [](RunConfig& c, const Json& v) { c.eval_workers = as_count("eval_workers", v); },
      [](const RunConfig& c) { return Json(c.eval_workers); });
  add("eval_every", "int", "validate every N epochs (0 = after the last epoch)",
      [](RunConfig& c, const Json& v) { c.eval_every = as_count("eval_every", v); },
      [](const RunConfig& c) { return Json(c.eval_every); });
  add("eval_max_triples", "int", "valid triples ranked during training (0 = all)",
      [](RunConfig& c, const Json& v) { c.eval_max_triples = as_count("eval_max_triples", v); },
      [](const RunConfig& c) { return Json(c.eval_max_triples); });
  add("out", "string", "output directory",
      [](RunConfig& c, const Json& v) { c.out = as_string("out", v); },
      [](const RunConfig& c) { return Json(c.out.string()); });
  add("proj", "pca|tsne", "2-D projection method",
      [](RunConfig& c, const Json& v) {
        c.projection.method = as_enum("proj", v, parse_projection_method, "pca|tsne");
      },
      [](const RunConfig& c) { return Json(std::string(to_string(c.projection.method))); });
  add("perplexity", "real", "t-SNE perplexity",
      [](RunConfig& c, const Json& v) { c.projection.perplexity = as_real("perplexity", v); },
      [](const RunConfig& c) { return Json(c.projection.perplexity); });
  add("tsne_iters", "int", "t-SNE gradient iterations",
      [](RunConfig& c, const Json& v) { c.projection.iterations = as_count("tsne_iters", v); },
      [](const RunConfig& c) { return Json(c.projection.iterations); });
  add("max_points", "int", "projected points (seeded subsample above this)",
      [](RunConfig& c, const Json& v) { c.projection.max_points = as_count("max_points", v); },
      [](const RunConfig& c) { return Json(c.projection.max_points); });
  return k;
}

void apply_object(RunConfig& cfg, const Json& doc, std::string_view origin) {
  if (doc.is_null()) return;
  if (!doc.is_object()) throw ConfigError(std::string(origin) + ": expected a JSON object");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const ConfigKey* key = find_config_key(it.key());
    if (!key) throw ConfigError(it.key() + ": unknown configuration key (" + std::string(origin) + ")");
    key->set(cfg, it.value());
  }
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

const ConfigKey* find_config_key(std::string_view name) {
  for (const auto& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

Json parse_config_value(const ConfigKey& key, std::string_view text) {
  const std::string s(text);
  if (key.type == "bool") {
    if (s == "true" || s == "True" || s == "1") return true;
    if (s == "false" || s == "False" || s == "0") return false;
    bad(key.name, "expected true or false, got '" + s + "'");
  }
  if (key.type == "int") {
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
      bad(key.name, "expected a non-negative integer, got '" + s + "'");
    return v;
  }
  if (key.type == "real") {
    double v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
      bad(key.name, "expected a number, got '" + s + "'");
    return v;
  }
  return s;
}

RunConfig load_config(const std::optional<std::filesystem::path>& path, const Json& overrides) {
  Json doc = Json::object();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("config: cannot open '" + path->string() + "'");
    try {
      doc = Json::parse(in);
    } catch (const Json::parse_error& e) {
      throw ConfigError("config: '" + path->string() + "' is not valid JSON (" + e.what() + ")");
    }
  }
  return load_config(doc, overrides);
}

RunConfig load_config(const Json& file_doc, const Json& overrides) {
  // model and golden decide which base layer applies, so resolve them first
  RunConfig probe;
  for (const Json* layer : {&file_doc, &overrides}) {
    if (!layer->is_object()) continue;
    if (layer->contains("model")) find_config_key("model")->set(probe, (*layer)["model"]);
    if (layer->contains("golden")) find_config_key("golden")->set(probe, (*layer)["golden"]);
  }

  RunConfig cfg;
  cfg.model = probe.model;
  cfg.golden = probe.golden;
  if (cfg.golden) cfg.hp = golden_preset(cfg.model);
  cfg.hp.loss_kind = default_loss(cfg.model);
  apply_object(cfg, file_doc, "config file");
  apply_object(cfg, overrides, "command line");
  cfg.validate();
  return cfg;
}

const std::vector<std::string>& golden_keys() {
  static const std::vector<std::string> keys = {"L1_flag",       "batch_size", "epochs", "hidden_size",
                                                "learning_rate", "margin",     "opt",    "samp"};
  return keys;
}

Json golden_json(const HyperParams& hp) {
  RunConfig c;
  c.hp = hp;
  Json out = Json::object();
  for (const auto& name : golden_keys()) out[name] = find_config_key(name)->get(c);
  return out;
}

HyperParams apply_golden_json(const Json& doc, HyperParams base) {
  if (!doc.is_object()) throw ConfigError("preset: expected a JSON object");
  RunConfig c;
  c.hp = base;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (std::find(golden_keys().begin(), golden_keys().end(), it.key()) == golden_keys().end())
      throw ConfigError(it.key() + ": not a golden-setting key");
    find_config_key(it.key())->set(c, it.value());
  }
  return c.hp;
}

HyperParams golden_preset(ModelKind kind) {
  const auto& texts = detail::preset_texts();
  auto it = texts.find(std::string(to_string(kind)));
  if (it == texts.end())
    throw ConfigError("model: no golden preset shipped for '" + std::string(to_string(kind)) + "'");
  HyperParams hp = apply_golden_json(Json::parse(it->second));
  hp.loss_kind = default_loss(kind);
  return hp;
}

HyperParams golden_preset(std::string_view model_name) {
  auto kind = parse_model_kind(model_name);
  if (!kind)
    throw ConfigError("model: unknown model '" + std::string(model_name) +
                      "'; registered: " + registered_model_names());
  return golden_preset(*kind);
}

void save_preset(const HyperParams& hp, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << golden_json(hp).dump(2) << '\n';
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

HyperParams load_preset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("preset: cannot open '" + path.string() + "'");
  try {
    return apply_golden_json(Json::parse(in));
  } catch (const Json::parse_error& e) {
    throw ConfigError("preset: '" + path.string() + "' is not valid JSON (" + e.what() + ")");
  }
}

namespace {

std::string python_literal(const Json& v) {
  if (v.is_boolean()) return v.get<bool>() ? "True" : "False";
  if (v.is_string()) return "'" + v.get<std::string>() + "'";
  if (v.is_number_float()) {
    std::string s = format_double(v.get<double>());
    if (s.find_first_of(".en") == std::string::npos) s += ".0";
    return s;
  }
  return v.dump();
}

}  // namespace

std::string format_golden_setting(const HyperParams& hp) {
  const Json doc = golden_json(hp);
  std::string out = "{";
  bool first = true;
  for (const auto& name : golden_keys()) {
    if (!first) out += ", ";
    first = false;
    out += "'" + name + "': " + python_literal(doc[name]);
  }
  return out + "}";
}

}  // namespace kge
