// dyvec command line: train-base, extract, optimize, eval, ablate, transfer.
//
// Every subcommand reads a JSON experiment config; --seed and --out override
// the config's "seed" and "out" fields. Failures print one line
//
//   error: <code>: <message>
//
// to stderr and exit nonzero.

#include "dyvec/error.hpp"
#include "dyvec/harness.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>

namespace {

using dyvec::harness::ExperimentConfig;

struct Args {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

ExperimentConfig resolve(const Args& args) {
  ExperimentConfig c = dyvec::harness::load_config(args.config);
  if (args.seed) c.seed = *args.seed;
  if (args.out) c.out = *args.out;
  return c;
}

void log_line(const std::string& line) {
  std::cerr << line << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DyVec: dynamic latent vectors for zero-shot intervention on a toy transformer"};
  app.require_subcommand(1);

  using Command = std::function<std::string(const ExperimentConfig&)>;
  const std::map<std::string, std::pair<std::string, Command>> commands = {
      {"train-base",
       {"meta-train the base model and measure the held-out ICL gate",
        [](const ExperimentConfig& c) { return dyvec::harness::cmd_train_base(c, log_line); }}},
      {"extract", {"extract an aggregated latent tensor for one task", dyvec::harness::cmd_extract}},
      {"optimize", {"search injection positions and strategy for a latent", dyvec::harness::cmd_optimize}},
      {"eval", {"evaluate a method on the held-out queries of a task", dyvec::harness::cmd_eval}},
      {"ablate",
       {"sweep sources, extraction modes, granularities and seeds",
        [](const ExperimentConfig& c) { return dyvec::harness::cmd_ablate(c, log_line); }}},
      {"transfer", {"cross latent segments with foreign position sets", dyvec::harness::cmd_transfer}},
  };

  std::map<std::string, Args> args;
  std::map<CLI::App*, std::string> names;
  for (const auto& [name, entry] : commands) {
    auto* sub = app.add_subcommand(name, entry.first);
    auto& a = args[name];
    sub->add_option("config", a.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", a.seed, "override the config seed");
    sub->add_option("--out", a.out, "override the output directory");
    names[sub] = name;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: usage: " << e.what() << '\n';
    return 2;
  }

  const std::string name = names.at(app.get_subcommands().front());
  try {
    const auto config = resolve(args.at(name));
    std::cout << commands.at(name).second(config) << '\n';
    return 0;
  } catch (const dyvec::Error& e) {
    std::cerr << "error: " << dyvec::to_string(e.code()) << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
}
