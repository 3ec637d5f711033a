#include "kge/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include "kge/error.hpp"
#include "kge/kg_store.hpp"
#include "kge/models.hpp"
#include "kge/projector.hpp"
#include "kge/text.hpp"
#include "kge/trainer.hpp"
#include "kge/tuner.hpp"

namespace kge::cli {

namespace {

// Config keys each subcommand exposes as --<key> flags; empty = all of them.
std::vector<std::string> keys_for(std::string_view sub) {
  if (sub == "eval") return {"dataset", "out", "eval_workers"};
  if (sub == "project")
    return {"dataset", "out", "seed", "proj", "perplexity", "tsne_iters", "max_points"};
  std::vector<std::string> all;
  for (const auto& k : config_keys()) all.push_back(k.name);
  return all;
}

std::string dashed(std::string s) {
  std::replace(s.begin(), s.end(), '_', '-');
  return s;
}

std::string option_names(const std::string& key) {
  std::string names = "--" + key;
  if (key.find('_') != std::string::npos && key != "L1_flag") names += ",--" + dashed(key);
  return names;
}

std::string describe(const ConfigKey& key) {
  static const RunConfig defaults;
  std::string text = key.help;
  if (key.name == "loss_kind") return text;
  const Json d = key.get(defaults);
  if (d.is_string() && d.get<std::string>().empty()) return text;
  if (key.name == "golden") return text;
  return text + " (default " + (d.is_string() ? d.get<std::string>() : d.dump()) + ")";
}

std::string type_label(std::string type) {
  if (type.find('|') != std::string::npos) return type;
  std::transform(type.begin(), type.end(), type.begin(), [](unsigned char ch) {
    return static_cast<char>(std::toupper(ch));
  });
  return type;
}

struct Builder {
  Command cmd;
  std::map<std::string, std::map<std::string, std::string>> values;  // sub -> key -> text
  std::map<std::string, std::string> config_path;
  std::map<std::string, std::string> model_file;
  std::map<std::string, std::string> space, trials, split;
  std::unique_ptr<CLI::App> app;

  Builder() {
    app = std::make_unique<CLI::App>("Knowledge graph embedding: train, tune, evaluate and project.",
                                     "kge");
    app->require_subcommand(1, 1);
    app->footer(
        "Run 'kge <command> -h' for the flags of one command. Flags override --config values,\n"
        "which override the golden preset (--golden) and the built-in defaults.");
    add("train", "Train a model, evaluate it on the test split and export plots");
    add("tune", "Search hyperparameters with a tree-structured Parzen estimator");
    add("eval", "Evaluate a saved model on a dataset split");
    add("project", "Project a saved model's embeddings to 2-D");
  }

  void add(const std::string& sub, const std::string& description) {
    CLI::App* s = app->add_subcommand(sub, description);
    auto& vals = values[sub];
    s->add_option("--config", config_path[sub], "JSON file of configuration keys");
    s->add_flag("-q,--quiet", cmd.quiet, "no progress output on stderr");
    for (const auto& name : keys_for(sub)) {
      const ConfigKey* key = find_config_key(name);
      std::string& target = vals[name];
      if (name == "golden") {
        s->add_flag("--golden", target,
                    describe(*key) + "; also -ghp <bool>, --golden=<bool>");
      } else if (name == "model") {
        s->add_option("--model", target, describe(*key) + "; alias -mn")->type_name(key->type);
      } else {
        s->add_option(option_names(name), target, describe(*key))->type_name(type_label(key->type));
      }
    }
    if (sub == "tune") {
      s->add_option("--budget", cmd.budget, "number of trials (default 20)")
          ->check(CLI::PositiveNumber);
      s->add_option("--space", space[sub], "JSON search space (default: built-in space)");
      s->add_option("--trials", trials[sub], "trial log to write and resume (default <out>/trials.jsonl)");
      s->add_flag("--random", cmd.random_search, "uniform random search instead of TPE");
    }
    if (sub == "eval" || sub == "project")
      s->add_option("--model-file", model_file[sub], "saved model (default <out>/model.bin)");
    if (sub == "eval")
      s->add_option("--split", split[sub], "train|valid|test (default test)");
    if (sub == "train")
      s->footer("Writes model.bin, config.json, loss.csv, timing.csv, metrics.csv, ranks.csv,\n"
                "embedding_2d.csv and SVG plots into --out.");
    if (sub == "tune")
      s->footer("Prints the best setting as 'Found Golden Setting:' on stdout and saves it as\n"
                "<out>/golden_<model>.json.");
  }

  CLI::App* parsed_sub() const {
    for (CLI::App* s : app->get_subcommands()) return s;
    return nullptr;
  }

  void finish() {
    const CLI::App* s = parsed_sub();
    const std::string sub = s->get_name();
    cmd.name = sub;
    Json overrides = Json::object();
    for (const auto& [name, text] : values[sub]) {
      const CLI::Option* opt = s->get_option_no_throw("--" + name);
      if (!opt || opt->count() == 0) continue;
      overrides[name] = parse_config_value(*find_config_key(name), text);
    }
    std::optional<std::filesystem::path> file;
    if (!config_path[sub].empty()) file = config_path[sub];
    cmd.config = load_config(file, overrides);
    if (!space[sub].empty()) cmd.space = space[sub];
    if (!trials[sub].empty()) cmd.trials = trials[sub];
    if (!model_file[sub].empty()) cmd.model_file = model_file[sub];
    if (!split[sub].empty()) {
      auto sp = parse_split(split[sub]);
      if (!sp) throw ConfigError("split: '" + split[sub] + "' is not one of train|valid|test");
      cmd.split = *sp;
    }
  }
};

bool is_bool_word(const std::string& s) {
  static const char* words[] = {"true", "false", "True", "False", "1", "0"};
  return std::any_of(std::begin(words), std::end(words), [&](const char* w) { return s == w; });
}

// -mn and -ghp are multi-letter single-dash flags, which CLI11 rejects.
std::vector<std::string> rewrite_aliases(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "-mn") {
      out.emplace_back("--model");
    } else if (args[i].rfind("-mn=", 0) == 0) {
      out.push_back("--model=" + args[i].substr(4));
    } else if (args[i] == "-ghp") {
      if (i + 1 < args.size() && is_bool_word(args[i + 1]))
        out.push_back("--golden=" + args[++i]);
      else
        out.emplace_back("--golden");
    } else {
      out.push_back(args[i]);
    }
  }
  return out;
}

std::string hint_for(const std::exception& e) {
  if (dynamic_cast<const DatasetError*>(&e))
    return "check that --dataset names a directory with train.txt, valid.txt and test.txt";
  if (dynamic_cast<const ConfigError*>(&e)) return "run 'kge <command> -h' for accepted flags and values";
  if (dynamic_cast<const UserError*>(&e)) return "run 'kge <command> -h' for usage";
  if (dynamic_cast<const NumericError*>(&e)) return "lower learning_rate or switch to --opt adam";
  if (dynamic_cast<const CacheError*>(&e)) return "the file is damaged or was written by another version";
  if (dynamic_cast<const IoError*>(&e)) return "check that the output directory is writable";
  if (dynamic_cast<const NoResultError*>(&e)) return "widen the search space or raise --budget";
  return "please report this with the command line that triggered it";
}

class Progress {
 public:
  Progress(std::ostream& err, bool quiet) : err_(err), quiet_(quiet) {}
  template <typename... Ts>
  void line(const Ts&... parts) {
    if (quiet_) return;
    (err_ << ... << parts) << '\n';
    err_.flush();
  }
  bool quiet() const { return quiet_; }

 private:
  std::ostream& err_;
  bool quiet_;
};

void require_dataset(const RunConfig& c) {
  if (c.dataset.empty()) throw ConfigError("dataset: required; pass --dataset <dir>");
}

KgDataset open_dataset(const RunConfig& c, Progress& p) {
  require_dataset(c);
  KgDataset d = load_dataset(c.dataset);
  p.line("dataset ", c.dataset.string(), ": ", d.num_entities(), " entities, ", d.num_relations(),
         " relations, train/valid/test ", d.train().size(), "/", d.valid().size(), "/",
         d.test().size());
  if (d.summary().entities_unseen_in_train > 0)
    p.line("warning: ", d.summary().entities_unseen_in_train,
           " entities appear only in valid/test and keep their initial embeddings");
  return d;
}

void make_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

void write_json(const Json& doc, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << doc.dump(2) << '\n';
}

Json config_json(const RunConfig& c) {
  Json doc = Json::object();
  for (const auto& k : config_keys()) doc[k.name] = k.get(c);
  return doc;
}

std::string metrics_table(const MetricsReport& r) {
  std::ostringstream s;
  auto row = [&](const std::string& name, const std::string& raw, const std::string& filtered) {
    s << std::left << std::setw(12) << name << std::setw(22) << raw << filtered << '\n';
  };
  row("metric", "raw", "filtered");
  row("mean_rank", format_double(r.mean_rank_raw), format_double(r.mean_rank_filtered));
  for (std::size_t k : kHitsAt)
    row("hits@" + std::to_string(k), format_double(r.hits(k, false)), format_double(r.hits(k, true)));
  row("triples", std::to_string(r.num_triples), std::to_string(r.num_triples));
  return s.str();
}

// Projection for the plots written by `train`: a perplexity that does not fit
// the point count is lowered, and PCA is used when even 2 does not fit.
std::optional<ProjectionResult> training_projection(const ModelParams& params, const Vocab& vocab,
                                                    const RunConfig& c, Progress& p) {
  const EmbeddingPoints points =
      embedding_points(params, vocab, c.projection.max_points, c.hp.seed);
  const std::size_t n = points.x.rows;
  if (n < 2 || points.x.cols < 2) {
    p.line("note: too few points or dimensions for a 2-D projection; skipped");
    return std::nullopt;
  }
  ProjectionSettings s = c.projection;
  if (s.method == ProjectionMethod::tsne) {
    const double limit = static_cast<double>(n - 1) / 3.0;
    if (limit < 2) {
      p.line("note: ", n, " points are too few for t-SNE; using PCA");
      s.method = ProjectionMethod::pca;
    } else if (s.perplexity > limit) {
      p.line("note: perplexity lowered from ", format_double(s.perplexity), " to ",
             format_double(limit), " for ", n, " points");
      s.perplexity = limit;
    }
  }
  return project(points, s, c.hp.seed);
}

int do_train(const Command& cmd, std::ostream&, Progress& p) {
  const RunConfig& c = cmd.config;
  const KgDataset d = open_dataset(c, p);
  make_dir(c.out);
  write_json(config_json(c), c.out / "config.json");

  TrainOptions opts = c.train_options();
  opts.on_epoch = [&](const EpochSummary& e) {
    p.line("epoch ", e.epoch, "/", e.epochs, " loss ", format_double(e.mean_loss), " (",
           format_double(std::round(e.seconds * 1000) / 1000), " s)");
  };
  p.line("training ", to_string(c.model), " for ", c.hp.epochs, " epochs");
  TrainResult result = train(d, c.model, c.hp, opts);
  for (const auto& [epoch, report] : result.record.validation)
    p.line("valid after epoch ", epoch, ": filtered mean rank ",
           format_double(report.mean_rank_filtered), ", filtered hits@10 ",
           format_double(report.hits(10, true)));
  if (result.record.saturations > 0)
    p.line("note: ", result.record.saturations, " corruptions hit the rejection bound");
  save_params(result.params, c.out / "model.bin");

  MetricsReport report;
  if (!d.test().empty()) {
    const auto outcomes = rank_triples(result.params, d.test(), d, c.eval_workers);
    report = summarize(outcomes);
    write_ranks_csv(outcomes, d.vocab(), c.out / "ranks.csv");
    p.line("test: filtered mean rank ", format_double(report.mean_rank_filtered),
           ", filtered hits@10 ", format_double(report.hits(10, true)));
  } else {
    p.line("note: empty test split; metrics.csv holds zeros");
  }
  const auto proj = training_projection(result.params, d.vocab(), c, p);
  export_plots(result.record, report, proj ? &*proj : nullptr, c.out);
  p.line("wrote ", c.out.string());
  return 0;
}

int do_tune(const Command& cmd, std::ostream& out, Progress& p) {
  const RunConfig& c = cmd.config;
  const KgDataset d = open_dataset(c, p);
  if (d.valid().empty()) throw DatasetError("tuning needs a nonempty valid split");
  make_dir(c.out);

  SearchSpace space = SearchSpace::default_space();
  if (cmd.space) {
    std::ifstream in(*cmd.space);
    if (!in) throw ConfigError("space: cannot open '" + cmd.space->string() + "'");
    Json doc;
    try {
      doc = Json::parse(in);
    } catch (const Json::parse_error& e) {
      throw ConfigError("space: '" + cmd.space->string() + "' is not valid JSON (" + e.what() + ")");
    }
    space = SearchSpace::from_json(doc);
  }

  TuneOptions opts;
  opts.seed = c.hp.seed;
  opts.random_search = cmd.random_search;
  opts.trials_log = cmd.trials ? *cmd.trials : c.out / "trials.jsonl";
  opts.on_trial = [&](std::size_t i, const Trial& t) {
    if (t.status == TrialStatus::done)
      p.line("trial ", i + 1, "/", cmd.budget, ": filtered mean rank ", format_double(t.objective),
             " (", format_double(std::round(t.seconds * 100) / 100), " s)");
    else
      p.line("trial ", i + 1, "/", cmd.budget, ": failed");
  };
  const TuneResult result = tune_model(d, c, space, cmd.budget, opts);
  const HyperParams best = apply_assignment(result.best.assignment, c.hp);
  save_preset(best, c.out / ("golden_" + std::string(to_string(c.model)) + ".json"));
  out << "Found Golden Setting:\n" << format_golden_setting(best) << '\n';
  return 0;
}

ModelParams open_model(const Command& cmd, const KgDataset* d) {
  const std::filesystem::path path = cmd.model_file ? *cmd.model_file : cmd.config.out / "model.bin";
  if (!std::filesystem::exists(path))
    throw UserError("model file '" + path.string() + "' does not exist; run 'kge train' first");
  ModelParams params = load_params(path);
  if (d && (params.num_entities() != d->num_entities() ||
            params.num_relations() != d->num_relations()))
    throw UserError("model '" + path.string() + "' has " + std::to_string(params.num_entities()) +
                    " entities and " + std::to_string(params.num_relations()) +
                    " relations but the dataset has " + std::to_string(d->num_entities()) + " and " +
                    std::to_string(d->num_relations()));
  return params;
}

int do_eval(const Command& cmd, std::ostream& out, Progress& p) {
  const RunConfig& c = cmd.config;
  const KgDataset d = open_dataset(c, p);
  const ModelParams params = open_model(cmd, &d);
  const auto& triples = split_triples(d, cmd.split);
  if (triples.empty())
    throw DatasetError("split '" + std::string(to_string(cmd.split)) + "' is empty");
  const auto outcomes = rank_triples(params, triples, d, c.eval_workers);
  const MetricsReport report = summarize(outcomes);
  make_dir(c.out);
  write_metrics_csv(report, c.out / "metrics.csv");
  write_ranks_csv(outcomes, d.vocab(), c.out / "ranks.csv");
  out << metrics_table(report);
  return 0;
}

int do_project(const Command& cmd, std::ostream&, Progress& p) {
  const RunConfig& c = cmd.config;
  std::optional<KgDataset> d;
  if (!c.dataset.empty()) d = open_dataset(c, p);
  const ModelParams params = open_model(cmd, d ? &*d : nullptr);
  const Vocab vocab = d ? d->vocab() : Vocab::synthetic(params.num_entities(), params.num_relations());
  const EmbeddingPoints points = embedding_points(params, vocab, c.projection.max_points, c.hp.seed);
  const ProjectionResult proj = project(points, c.projection, c.hp.seed);
  make_dir(c.out);
  write_embedding_csv(proj, c.out / "embedding_2d.csv");
  std::ofstream svg(c.out / "embedding_2d.svg");
  if (!svg) throw IoError("cannot write '" + (c.out / "embedding_2d.svg").string() + "'");
  svg << svg_scatter(proj, "Entity and relation embeddings");
  p.line(to_string(proj.method), " projection of ", proj.coords.rows, " points, ",
         proj.method == ProjectionMethod::tsne ? "KL " : "explained variance ",
         format_double(proj.final_objective));
  return 0;
}

}  // namespace

Parsed parse(const std::vector<std::string>& raw, std::ostream& out, std::ostream& err) {
  if (raw.empty() || raw[0] == "-h" || raw[0] == "--help") {
    (raw.empty() ? err : out) << help_text();
    return {std::nullopt, raw.empty() ? 1 : 0};
  }
  Builder b;
  std::vector<std::string> args = rewrite_aliases(raw);
  std::reverse(args.begin(), args.end());  // CLI11 consumes a reversed vector
  try {
    b.app->parse(args);
  } catch (const CLI::CallForHelp&) {
    const CLI::App* s = b.parsed_sub();
    out << (s ? help_text(s->get_name()) : help_text());
    return {std::nullopt, 0};
  } catch (const CLI::ParseError& e) {
    err << "kge: error: " << e.what() << " (hint: run 'kge -h' for usage)\n";
    return {std::nullopt, 1};
  }
  b.finish();
  return {std::move(b.cmd), 0};
}

int execute(const Command& cmd, std::ostream& out, std::ostream& err) {
  Progress p(err, cmd.quiet);
  if (cmd.name == "train") return do_train(cmd, out, p);
  if (cmd.name == "tune") return do_tune(cmd, out, p);
  if (cmd.name == "eval") return do_eval(cmd, out, p);
  if (cmd.name == "project") return do_project(cmd, out, p);
  throw Error("unknown command '" + cmd.name + "'");
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    Parsed parsed = parse(args, out, err);
    if (!parsed.command) return parsed.exit_code;
    return execute(*parsed.command, out, err);
  } catch (const UserError& e) {
    err << "kge: error: " << e.what() << " (hint: " << hint_for(e) << ")\n";
    return 1;
  } catch (const Error& e) {
    err << "kge: failure: " << e.what() << " (hint: " << hint_for(e) << ")\n";
    return 2;
  } catch (const std::exception& e) {
    err << "kge: internal error: " << e.what() << " (hint: " << hint_for(e) << ")\n";
    return 2;
  }
}

std::string help_text(std::string_view subcommand) {
  Builder b;
  if (!subcommand.empty()) {
    return b.app->get_subcommand(std::string(subcommand))->help();
  }
  std::string text = b.app->help();
  for (std::string_view sub : kSubcommands) {
    text += "\n";
    text += b.app->get_subcommand(std::string(sub))->help("kge", CLI::AppFormatMode::Sub);
  }
  return text;
}

std::vector<std::string> accepted_flags(std::string_view subcommand) {
  Builder b;
  const CLI::App* s = b.app->get_subcommand(std::string(subcommand));
  std::vector<std::string> flags;
  for (const CLI::Option* opt : s->get_options()) {
    for (const auto& n : opt->get_snames()) flags.push_back("-" + n);
    for (const auto& n : opt->get_lnames()) flags.push_back("--" + n);
  }
  if (s->get_option_no_throw("--model")) flags.emplace_back("-mn");
  if (s->get_option_no_throw("--golden")) flags.emplace_back("-ghp");
  std::sort(flags.begin(), flags.end());
  return flags;
}

}  // namespace kge::cli
