// indexflow CLI: config-driven runs of the idealized, planted and empirical
// dynamics, dimension sweeps of the weak-recovery time, and the built-in
// invariant suite. Exit codes: 0 ok, 1 config error, 2 numerical
// divergence, 3 I/O failure.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "indexflow/lab.hpp"
#include "indexflow/validation.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";

void apply_thread_cap() {
#ifdef _OPENMP
  if (const char* env = std::getenv("INDEXFLOW_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) omp_set_num_threads(cap);
  }
#endif
}

int run(const std::string& mode, const std::string& config) {
  const auto result = indexflow::lab::run_scenario(config, mode);
  if (result.exit_code != indexflow::lab::kExitOk)
    std::cerr << "indexflow: " << result.message << '\n';
  return result.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint gradient-flow learning of single-index models"};
  app.require_subcommand(1);

  std::string joint_cfg, planted_cfg, train_cfg, sweep_cfg;
  auto* joint = app.add_subcommand("simulate-joint", "integrate the reduced joint dynamics");
  joint->add_option("config", joint_cfg, "TOML scenario file")->required();
  auto* planted = app.add_subcommand("simulate-planted", "integrate the planted scalar flow");
  planted->add_option("config", planted_cfg, "TOML scenario file")->required();
  auto* train = app.add_subcommand("train", "run joint gradient descent on a sampled dataset");
  train->add_option("config", train_cfg, "TOML scenario file")->required();
  auto* sweep = app.add_subcommand("sweep-tau", "hitting-time scaling sweep over dimensions");
  sweep->add_option("config", sweep_cfg, "TOML scenario file")->required();
  auto* validate = app.add_subcommand("validate", "run the built-in invariant suite");
  auto* version = app.add_subcommand("version", "print the version and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : indexflow::lab::kExitConfig;
  }

  apply_thread_cap();

  if (version->parsed()) {
    std::cout << "indexflow " << kVersion << '\n';
    return 0;
  }
  if (validate->parsed())
    return indexflow::lab::run_validation(std::cout) ? indexflow::lab::kExitOk
                                                     : indexflow::lab::kExitDiverged;
  if (joint->parsed()) return run("joint", joint_cfg);
  if (planted->parsed()) return run("planted", planted_cfg);
  if (train->parsed()) return run("train", train_cfg);
  if (sweep->parsed()) return run("sweep", sweep_cfg);
  return indexflow::lab::kExitConfig;
}
