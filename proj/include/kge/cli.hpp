#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kge/config.hpp"
#include "kge/evaluator.hpp"

namespace kge::cli {

struct Command {
  std::string name;  // train, tune, eval or project
  RunConfig config;
  bool quiet = false;

  // tune
  std::size_t budget = 20;
  std::optional<std::filesystem::path> space;
  std::optional<std::filesystem::path> trials;
  bool random_search = false;

  // eval / project
  std::optional<std::filesystem::path> model_file;
  Split split = Split::test;
};

struct Parsed {
  std::optional<Command> command;  // empty when the invocation is already finished
  int exit_code = 0;
};

// Parses argv (without the program name). Help and usage errors are written
// to out/err and reported through exit_code with no command.
Parsed parse(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int execute(const Command& cmd, std::ostream& out, std::ostream& err);

// parse + execute with the exit code contract: 0 success, 1 user error,
// 2 internal failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

inline constexpr std::string_view kSubcommands[] = {"train", "tune", "eval", "project"};

// Help text of one subcommand, or of the whole tool for an empty name.
std::string help_text(std::string_view subcommand = {});

// Every flag spelling a subcommand accepts, including the -mn / -ghp aliases.
std::vector<std::string> accepted_flags(std::string_view subcommand);

}  // namespace kge::cli
