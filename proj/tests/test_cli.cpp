#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <sstream>

#include "kge/cli.hpp"
#include "kge/models.hpp"
#include "kge/tuner.hpp"
#include "oracles.hpp"

using namespace kge;

namespace {

// Copy of the toy dataset, so the loader's cache never lands in the source tree.
const std::string& toy() {
  static const oracle::TempDir dir("toy");
  static const std::string path = [] {
    std::filesystem::copy(KGE_TOY_DIR, dir / "toy");
    return (dir / "toy").string();
  }();
  return path;
}

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> fast_train(const oracle::TempDir& dir, const std::string& model = "transe") {
  return {"train", "-mn", model, "--dataset", toy(), "--out", (dir / "out").string(), "--epochs", "3",
          "--hidden-size", "8", "--proj", "pca", "-q"};
}

// Sample text for a flag so that parsing succeeds.
std::string sample_value(const std::string& flag) {
  static const std::map<std::string, std::string> special = {
      {"--model", "distmult"}, {"-mn", "distmult"}, {"--opt", "adam"},
      {"--samp", "uniform"},   {"--loss_kind", "softplus"}, {"--loss-kind", "softplus"},
      {"--proj", "pca"},       {"--split", "valid"},  {"--learning_rate", "0.5"},
      {"--learning-rate", "0.5"}, {"--margin", "2.5"}, {"--lambda_reg", "0.001"},
      {"--lambda-reg", "0.001"}, {"--perplexity", "5"}, {"--L1_flag", "false"},
      {"--reject_train_positives", "true"}, {"--reject-train-positives", "true"},
      {"--max_points", "50"}, {"--max-points", "50"}, {"--workers", "2"}};
  if (auto it = special.find(flag); it != special.end()) return it->second;
  return "3";
}

}  // namespace

TEST_CASE("train writes the pipeline outputs") {
  oracle::TempDir dir("cli_train");
  const Outcome r = run_cli(fast_train(dir));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const char* f : {"model.bin", "config.json", "loss.csv", "timing.csv", "metrics.csv",
                        "ranks.csv", "loss.svg", "mean_rank.svg", "hits.svg", "embedding_2d.csv",
                        "embedding_2d.svg"})
    CHECK_MESSAGE(std::filesystem::exists(dir / "out" / f), f);
  const std::string loss = oracle::read_file(dir / "out" / "loss.csv");
  CHECK(std::count(loss.begin(), loss.end(), '\n') == 4);
}

TEST_CASE("golden flag and the -ghp alias apply the preset") {
  oracle::TempDir dir("cli_golden");
  for (std::vector<std::string> flag : {std::vector<std::string>{"--golden"},
                                        std::vector<std::string>{"-ghp", "True"},
                                        std::vector<std::string>{"-ghp"}}) {
    auto args = fast_train(dir, "transh");
    args.insert(args.begin() + 1, flag.begin(), flag.end());
    const Outcome r = run_cli(args);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const Json cfg = Json::parse(oracle::read_file(dir / "out" / "config.json"));
    const HyperParams preset = golden_preset(ModelKind::transh);
    CHECK(cfg["golden"] == true);
    CHECK(cfg["learning_rate"] == preset.learning_rate);
    CHECK(cfg["batch_size"] == preset.batch_size);
    CHECK(cfg["epochs"] == 3);  // explicit flag beats the preset
  }
  auto args = fast_train(dir);
  args.insert(args.begin() + 1, {"-ghp", "False"});
  REQUIRE(run_cli(args).code == 0);
  CHECK(Json::parse(oracle::read_file(dir / "out" / "config.json"))["golden"] == false);
}

TEST_CASE("unknown model exits 1 and lists the registered kinds") {
  oracle::TempDir dir("cli_model");
  const Outcome r = run_cli({"train", "-mn", "nosuchmodel", "--dataset", toy(), "--out", dir.path().string()});
  CHECK(r.code == 1);
  for (ModelKind k : all_model_kinds()) CHECK(r.err.find(std::string(to_string(k))) != std::string::npos);
  CHECK(r.err.find("hint") != std::string::npos);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
}

TEST_CASE("help covers every subcommand and flag") {
  const Outcome r = run_cli({"-h"});
  CHECK(r.code == 0);
  for (auto sub : cli::kSubcommands) {
    CHECK(r.out.find(std::string(sub)) != std::string::npos);
    for (const std::string& f : cli::accepted_flags(sub))
      CHECK_MESSAGE(r.out.find(f) != std::string::npos, f);
  }
  CHECK(r.out.find("-mn") != std::string::npos);
  CHECK(r.out.find("-ghp") != std::string::npos);
  CHECK(run_cli({}).code == 1);
  CHECK(run_cli({"train", "--help"}).code == 0);
}

TEST_CASE("documented flags and accepted flags agree") {
  const oracle::TempDir dir("cli_flags");
  const std::string config_file = (dir / "c.json").string();
  std::ofstream(config_file) << "{}";
  const std::regex flag_re(R"((^|[\s,\[])(--?[A-Za-z][A-Za-z0-9_-]*))");
  for (auto sub : cli::kSubcommands) {
    const std::string help = cli::help_text(sub);
    std::set<std::string> documented;
    for (auto it = std::sregex_iterator(help.begin(), help.end(), flag_re); it != std::sregex_iterator(); ++it)
      documented.insert((*it)[2].str());
    const auto flags = cli::accepted_flags(sub);
    const std::set<std::string> accepted(flags.begin(), flags.end());
    for (const auto& f : documented) CHECK_MESSAGE(accepted.contains(f), sub, " documents ", f);
    for (const auto& f : accepted) CHECK_MESSAGE(documented.contains(f), sub, " accepts ", f);

    // every accepted flag parses with a sample value
    for (const auto& f : accepted) {
      if (f == "-h" || f == "--help") continue;
      std::vector<std::string> args = {std::string(sub)};
      if (f != "--dataset") args.insert(args.end(), {"--dataset", toy()});
      args.push_back(f);
      const bool is_switch = f == "-q" || f == "--quiet" || f == "--golden" || f == "-ghp" || f == "--random";
      if (f == "--config") args.push_back(config_file);
      else if (!is_switch) args.push_back(sample_value(f));
      std::ostringstream out, err;
      const cli::Parsed p = cli::parse(args, out, err);
      CHECK_MESSAGE(p.command.has_value(), sub, " ", f, ": ", err.str());
    }
  }
}

TEST_CASE("exit codes per error class") {
  oracle::TempDir dir("cli_codes");
  SUBCASE("missing dataset is a user error") {
    const Outcome r = run_cli({"train", "--dataset", (dir / "nope").string(), "--out", dir.path().string()});
    CHECK(r.code == 1);
  }
  SUBCASE("missing config file is a user error") {
    const Outcome r = run_cli({"train", "--dataset", toy(), "--config", (dir / "none.json").string()});
    CHECK(r.code == 1);
  }
  SUBCASE("unknown key in a config file is a user error") {
    std::ofstream(dir / "bad.json") << R"({"learning_rat": 0.1})";
    const Outcome r = run_cli({"train", "--dataset", toy(), "--config", (dir / "bad.json").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("learning_rat") != std::string::npos);
  }
  SUBCASE("unknown flag is a user error") {
    CHECK(run_cli({"train", "--learning_rat", "0.1"}).code == 1);
  }
  SUBCASE("non-finite loss is an internal failure") {
    const Outcome r = run_cli({"train", "-mn", "distmult", "--dataset", toy(), "--out", (dir / "o").string(),
                               "--learning-rate", "1e300", "--epochs", "50", "--opt", "sgd"});
    CHECK(r.code == 2);
    CHECK(r.err.find("non-finite") != std::string::npos);
  }
  SUBCASE("eval without a model file is a user error") {
    const Outcome r = run_cli({"eval", "--dataset", toy(), "--out", dir.path().string()});
    CHECK(r.code == 1);
  }
}

TEST_CASE("eval and project reuse a trained model") {
  oracle::TempDir dir("cli_reuse");
  REQUIRE(run_cli(fast_train(dir, "complex")).code == 0);
  const std::string model = (dir / "out" / "model.bin").string();
  const Outcome e = run_cli({"eval", "--dataset", toy(), "--model-file", model, "--out",
                             (dir / "eval").string(), "--split", "valid"});
  REQUIRE_MESSAGE(e.code == 0, e.err);
  CHECK(e.out.find("mean_rank") != std::string::npos);
  CHECK(std::filesystem::exists(dir / "eval" / "metrics.csv"));

  const Outcome p = run_cli({"project", "--dataset", toy(), "--model-file", model, "--out",
                             (dir / "proj").string(), "--perplexity", "5", "--tsne-iters", "100"});
  REQUIRE_MESSAGE(p.code == 0, p.err);
  const std::string csv = oracle::read_file(dir / "proj" / "embedding_2d.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 103);  // header + 100 entities + 2 relations
}

TEST_CASE("tune prints the golden setting") {
  oracle::TempDir dir("cli_tune");
  std::ofstream(dir / "space.json") << R"({"learning_rate": {"log_uniform": [0.001, 0.1]},
                                           "L1_flag": {"categorical": [true, false]}})";
  const Outcome r = run_cli({"tune", "-mn", "transe", "--dataset", toy(), "--out", dir.path().string(),
                             "--budget", "3", "--epochs", "2", "--hidden-size", "8", "--space",
                             (dir / "space.json").string(), "-q"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const std::regex shape(
      R"(Found Golden Setting:\n\{'L1_flag': (True|False), 'batch_size': \d+, 'epochs': 2, 'hidden_size': 8, )"
      R"('learning_rate': [0-9.e-]+, 'margin': [0-9.e-]+, 'opt': '(sgd|adam)', 'samp': '(bern|uniform)'\}\n)");
  CHECK_MESSAGE(std::regex_search(r.out, shape), r.out);
  CHECK(std::filesystem::exists(dir / "golden_transe.json"));
  CHECK(read_trials_log(dir / "trials.jsonl").size() == 3);
}
