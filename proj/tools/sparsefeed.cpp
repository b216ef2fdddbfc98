#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sparsefeed/commands.hpp"

int main(int argc, char** argv) {
  using namespace sparsefeed;
  CLI::App app{"Simulated distributed SGD with sparsified communication and error feedback"};
  app.require_subcommand(1);

  std::string config_path, out_path, grid_path, plot_dir;
  std::vector<std::string> compare_paths;
  std::string suite = "fast";
  std::uint64_t validate_seed = 1;
  unsigned jobs = 1;

  auto* run = app.add_subcommand("run", "Run one experiment and write its metrics CSV");
  run->add_option("config", config_path, "Experiment config file")->required();
  run->add_option("--out", out_path, "Metrics CSV path");

  auto* sweep = app.add_subcommand("sweep", "Run a config over a parameter grid");
  sweep->add_option("config", config_path, "Template config file")->required();
  sweep->add_option("--grid", grid_path, "Grid file, one `key = v1, v2` line per axis")->required();
  sweep->add_option("--out", out_path, "Output directory");
  sweep->add_option("--jobs", jobs, "Cells run concurrently");

  auto* validate = app.add_subcommand("validate", "Run the diagnostic checks");
  validate->add_option("--suite", suite, "fast or full")->check(CLI::IsMember({"fast", "full"}));
  validate->add_option("--seed", validate_seed, "Seed for the randomized checks");

  auto* compare = app.add_subcommand("compare", "Run several configs and emit plot series");
  compare->add_option("configs", compare_paths, "Config files")->required();
  compare->add_option("--emit-plots", plot_dir, "Directory for <series>.<metric>.dat files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  if (*run) return cmd_run(config_path, out_path, std::cout, std::cerr);
  if (*sweep) return cmd_sweep(config_path, grid_path, out_path, jobs, std::cout, std::cerr);
  if (*validate)
    return cmd_validate(suite == "full" ? Suite::full : Suite::fast, validate_seed, std::cout,
                        std::cerr);
  return cmd_compare(compare_paths, plot_dir, std::cout, std::cerr);
}
