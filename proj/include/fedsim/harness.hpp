#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/federation.hpp"
#include "fedsim/model.hpp"

namespace fedsim {

// Configuration or input validation problem; the CLI maps it to exit code 1.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct DataConfig {
  enum class Source { synthetic, csv };
  Source source = Source::synthetic;
  SyntheticSpec synth;  // input_dim mirrors the model section
  std::string csv_path;
  CsvSchema csv_schema;
  double test_fraction = 0.1;
};

struct PartitionConfig {
  PartitionKind kind = PartitionKind::dirichlet;
  double alpha = 1.0;
  std::size_t domains = 0;
  std::vector<double> domain_angles;
  std::vector<double> domain_scales;
  std::vector<double> domain_bias;
};

struct ExperimentConfig {
  RoundConfig round;
  MlpConfig model;  // num_classes resolved from the dataset
  DataConfig data;
  PartitionConfig partition;
  std::string out_dir = "out";
  std::size_t repeats = 1;
  bool lambda_auto = true;  // variance weight resolved to D/4 at run time

  void validate() const;  // throws ConfigError with the offending key path
};

// Parses the sectioned key=value config file. Unknown keys, type mismatches
// and constraint violations throw ConfigError naming section.key.
ExperimentConfig load_config(const std::string& path);

// Serializes a fully resolved config; load_config(save_config(cfg)) == cfg.
void save_config(const std::string& path, const ExperimentConfig& cfg);
std::string config_to_string(const ExperimentConfig& cfg);

struct MetricsRow {
  std::uint64_t run_seed = 0;
  std::size_t round = 0;
  std::string strategy;
  double ce = 0.0;
  double l_v = 0.0;
  double l_u = 0.0;
  double prox = 0.0;
  double total = 0.0;
  double test_accuracy = 0.0;
  double sv_mean = 0.0;
  std::vector<double> sv_values;  // descending
  double wall_seconds = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "run_seed,round,strategy,ce,l_v,l_u,prox,total,test_accuracy,sv_mean,"
    "sv_values,wall_seconds";

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);

// Dataset, split and partition for one run seed, all derived from the seed.
struct PreparedRun {
  Dataset train;
  Dataset test;
  PartitionPlan plan;
  MlpConfig model;       // num_classes filled in
  RoundConfig round;     // seed and resolved lambda filled in
};
PreparedRun prepare_run(const ExperimentConfig& cfg, std::uint64_t run_seed);

// Executes repeats runs (seeds base, base+1, ...), writes metrics.csv and
// manifest.ini under cfg.out_dir and returns the metrics path. The output
// directory is protected by a lock file for the duration of the run.
std::string run_command(const ExperimentConfig& cfg, std::size_t workers);

// Per-client class histograms and imbalance summary; no training.
void partition_inspect(const ExperimentConfig& cfg, std::ostream& text_out,
                       const std::string& csv_path);

struct GradcheckLine {
  std::string family;
  double max_rel_error = 0.0;
  bool pass = false;
};
struct GradcheckReport {
  std::vector<GradcheckLine> lines;
  bool all_pass = false;
};
// Finite-difference verification of every loss gradient. `corrupt` skews one
// analytic gradient so tests can confirm the checker reports failures.
GradcheckReport run_gradcheck(std::uint64_t seed, bool corrupt = false);

enum class PlotKind { loss_curves, accuracy_curves, singular_values };
PlotKind plot_kind_from_name(const std::string& name);

// Renders one SVG per call overlaying the given metrics files; returns the
// output path. Deterministic for identical inputs.
std::string plot_command(const std::vector<std::string>& csv_paths, PlotKind kind,
                         const std::string& out_dir);

}  // namespace fedsim
