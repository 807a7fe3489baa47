#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ddk/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"data-driven representation, prediction, and control toolkit"};
  app.require_subcommand(1);

  std::string config;
  std::string out = "out";
  std::uint64_t seed = 0;
  ddk::Index reps = 1;

  auto add = [&](const std::string& name, const std::string& desc) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", config, "scenario JSON file")->required();
    sub->add_option("--out", out, "output directory");
    sub->add_option("--seed", seed, "master seed for all randomized work");
    sub->add_option("--reps", reps, "number of seeded repetitions");
    return sub;
  };
  add("collect", "simulate a system and export trajectory recordings");
  add("predict", "compare open-loop predictors against the simulated truth");
  add("control", "run receding-horizon campaigns and report realized costs");
  add("diagnose", "rank growth, excitation checks, and nonexistence certificates");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::cerr << ddk::Json{{"error", {{"type", "config"}, {"message", e.what()}}}}.dump()
              << '\n';
    return 2;
  }
  return ddk::run_command(app.get_subcommands().front()->get_name(), config, out, seed, reps,
                          std::cerr);
}
