#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedsim/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::size_t workers = 1;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

fedsim::ExperimentConfig load_with_overrides(const CommonOpts& opts) {
  fedsim::ExperimentConfig cfg = fedsim::load_config(opts.config_path);
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  if (opts.seed_set) cfg.round.seed = opts.seed;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning simulator: FedAvg, FedProx, Freeze and FedUV "
               "local training on synthetic non-IID partitions"};
  app.require_subcommand(1);

  CommonOpts opts;
  bool corrupt = false;
  std::string plot_kind = "loss_curves";
  std::string plot_out = "out";
  std::vector<std::string> metrics_files;

  CLI::App* run = app.add_subcommand("run", "Run an experiment and write metrics");
  run->add_option("--config", opts.config_path, "Experiment config file")->required();
  run->add_option("--out", opts.out_dir, "Output directory (overrides config)");
  run->add_option("--workers", opts.workers, "Parallel client workers");
  run->add_option("--seed", opts.seed, "Override the config seed")
      ->each([&opts](const std::string&) { opts.seed_set = true; });

  CLI::App* inspect = app.add_subcommand(
      "partition-inspect", "Print per-client class histograms without training");
  inspect->add_option("--config", opts.config_path, "Experiment config file")->required();
  inspect->add_option("--out", opts.out_dir, "Directory for the CSV summary");
  inspect->add_option("--seed", opts.seed, "Override the config seed")
      ->each([&opts](const std::string&) { opts.seed_set = true; });

  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "Verify every loss gradient against finite differences");
  std::uint64_t gradcheck_seed = 1;
  gradcheck->add_option("--seed", gradcheck_seed, "Seed for the random instances");
  gradcheck->add_flag("--corrupt", corrupt,
                      "Skew one gradient to prove the checker detects failures");

  CLI::App* plot = app.add_subcommand("plot", "Render SVG charts from metrics files");
  plot->add_option("--kind", plot_kind,
                   "loss_curves | accuracy_curves | singular_values")
      ->required();
  plot->add_option("--out", plot_out, "Output directory");
  plot->add_option("files", metrics_files, "Metrics CSV files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (run->parsed()) {
      const fedsim::ExperimentConfig cfg = load_with_overrides(opts);
      const std::string path = fedsim::run_command(cfg, opts.workers);
      std::cout << "metrics written to " << path << "\n";
      return kExitOk;
    }
    if (inspect->parsed()) {
      const fedsim::ExperimentConfig cfg = load_with_overrides(opts);
      std::string csv_path;
      if (!opts.out_dir.empty() || !cfg.out_dir.empty()) {
        const std::string dir = opts.out_dir.empty() ? cfg.out_dir : opts.out_dir;
        csv_path = dir + "/partition_summary.csv";
      }
      fedsim::partition_inspect(cfg, std::cout, csv_path);
      if (!csv_path.empty()) std::cout << "summary written to " << csv_path << "\n";
      return kExitOk;
    }
    if (gradcheck->parsed()) {
      const fedsim::GradcheckReport report = fedsim::run_gradcheck(gradcheck_seed, corrupt);
      for (const fedsim::GradcheckLine& line : report.lines) {
        std::printf("%-20s max_rel_error=%.3e %s\n", line.family.c_str(),
                    line.max_rel_error, line.pass ? "PASS" : "FAIL");
      }
      return report.all_pass ? kExitOk : kExitRuntime;
    }
    if (plot->parsed()) {
      const fedsim::PlotKind kind = fedsim::plot_kind_from_name(plot_kind);
      const std::string path = fedsim::plot_command(metrics_files, kind, plot_out);
      std::cout << "plot written to " << path << "\n";
      return kExitOk;
    }
  } catch (const fedsim::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}
