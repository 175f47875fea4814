#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>

#include "fedsim/harness.hpp"

namespace fedsim {

namespace {

// Exclusive lock on an output directory; concurrent runs must use distinct
// directories.
class DirLock {
 public:
  explicit DirLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw std::runtime_error("output directory " + dir.string() +
                               " is locked by another run (remove " + path_.string() +
                               " if stale)");
    }
  }
  ~DirLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      std::error_code ec;
      std::filesystem::remove(path_, ec);
    }
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

std::vector<DomainTransform> build_transforms(const ExperimentConfig& cfg) {
  std::vector<DomainTransform> transforms(cfg.partition.domains);
  const std::size_t dim = cfg.model.input_dim;
  for (std::size_t i = 0; i < transforms.size(); ++i) {
    DomainTransform& t = transforms[i];
    t.rot_dim_a = (2 * i) % dim;
    t.rot_dim_b = (2 * i + 1) % dim;
    t.angle = cfg.partition.domain_angles.empty() ? 0.0 : cfg.partition.domain_angles[i];
    t.scale = cfg.partition.domain_scales.empty() ? 1.0 : cfg.partition.domain_scales[i];
    const double b = cfg.partition.domain_bias.empty() ? 0.0 : cfg.partition.domain_bias[i];
    if (b != 0.0) t.bias.assign(dim, b);
  }
  return transforms;
}

}  // namespace

PreparedRun prepare_run(const ExperimentConfig& cfg, std::uint64_t run_seed) {
  cfg.validate();
  const RngStream root(run_seed);

  Dataset full;
  if (cfg.data.source == DataConfig::Source::synthetic) {
    SyntheticSpec spec = cfg.data.synth;
    spec.input_dim = cfg.model.input_dim;
    RngStream data_rng = root.child(stream_label::kDataset);
    full = gen_blobs(spec, data_rng);
  } else {
    full = load_csv_dataset(cfg.data.csv_path, cfg.data.csv_schema);
    if (full.features.cols() != cfg.model.input_dim) {
      throw ConfigError("model.input_dim: csv file has " +
                        std::to_string(full.features.cols()) + " feature columns, config says " +
                        std::to_string(cfg.model.input_dim));
    }
  }

  if (cfg.partition.kind == PartitionKind::by_domain) {
    RngStream domain_rng = root.child(stream_label::kDomain);
    full = apply_domain_shift(full, build_transforms(cfg), domain_rng);
  }

  RngStream split_rng = root.child(stream_label::kSplit);
  auto [train, test] = split_train_test(full, cfg.data.test_fraction, split_rng);

  PreparedRun run;
  run.model = cfg.model;
  run.model.num_classes = train.num_classes;
  run.round = cfg.round;
  run.round.seed = run_seed;
  if (cfg.lambda_auto) {
    run.round.strategy.uv.lambda = static_cast<double>(train.num_classes) / 4.0;
  }

  RngStream part_rng = root.child(stream_label::kPartition);
  switch (cfg.partition.kind) {
    case PartitionKind::dirichlet:
      run.plan = dirichlet_partition(train.labels, cfg.round.num_clients,
                                     cfg.partition.alpha, part_rng);
      break;
    case PartitionKind::iid:
      run.plan = iid_partition(train.size(), cfg.round.num_clients, part_rng);
      break;
    case PartitionKind::by_domain:
      run.plan = by_domain_partition(train, cfg.round.num_clients);
      break;
  }

  run.train = std::move(train);
  run.test = std::move(test);
  return run;
}

std::string run_command(const ExperimentConfig& cfg, std::size_t workers) {
  cfg.validate();
  std::filesystem::create_directories(cfg.out_dir);
  DirLock lock{std::filesystem::path(cfg.out_dir)};

  std::vector<MetricsRow> rows;
  ExperimentConfig resolved = cfg;
  for (std::size_t rep = 0; rep < cfg.repeats; ++rep) {
    const std::uint64_t run_seed = cfg.round.seed + rep;
    PreparedRun run = prepare_run(cfg, run_seed);
    if (rep == 0 && cfg.lambda_auto) {
      resolved.lambda_auto = false;
      resolved.round.strategy.uv.lambda = run.round.strategy.uv.lambda;
    }
    const auto reports =
        run_experiment(run.round, run.model, run.train, run.test, run.plan, workers);
    for (const RoundReport& r : reports) {
      MetricsRow row;
      row.run_seed = run_seed;
      row.round = r.round;
      row.strategy = strategy_name(cfg.round.strategy.kind);
      row.ce = r.mean_stats.ce;
      row.l_v = r.mean_stats.l_v;
      row.l_u = r.mean_stats.l_u;
      row.prox = r.mean_stats.prox;
      row.total = r.mean_stats.total;
      row.test_accuracy = r.test_accuracy;
      row.sv_mean = r.sv_mean;
      row.sv_values = r.classifier_singular_values;
      row.wall_seconds = r.wall_seconds;
      rows.push_back(std::move(row));
    }
  }

  const std::string metrics_path =
      (std::filesystem::path(cfg.out_dir) / "metrics.csv").string();
  write_metrics_csv(metrics_path, rows);
  save_config((std::filesystem::path(cfg.out_dir) / "manifest.ini").string(), resolved);
  return metrics_path;
}

void partition_inspect(const ExperimentConfig& cfg, std::ostream& text_out,
                       const std::string& csv_path) {
  PreparedRun run = prepare_run(cfg, cfg.round.seed);
  const std::size_t classes = run.train.num_classes;

  std::ofstream csv;
  if (!csv_path.empty()) {
    const auto parent = std::filesystem::path(csv_path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    csv.open(csv_path);
    if (!csv) throw std::runtime_error("partition_inspect: cannot open " + csv_path);
    csv << "client,total,max_share,gini";
    for (std::size_t c = 0; c < classes; ++c) csv << ",class_" << c;
    csv << "\n";
  }

  text_out << "partition: " << run.plan.clients() << " clients, " << run.train.size()
           << " train samples, " << classes << " classes\n";
  for (std::size_t k = 0; k < run.plan.clients(); ++k) {
    std::vector<std::size_t> hist(classes, 0);
    for (std::size_t idx : run.plan.assignments[k]) ++hist[run.train.labels[idx]];
    const double total = static_cast<double>(run.plan.assignments[k].size());
    double max_share = 0.0;
    for (std::size_t h : hist) max_share = std::max(max_share, static_cast<double>(h) / total);
    // Mean absolute difference Gini over the class shares; 0 = uniform.
    double gini_num = 0.0;
    for (std::size_t a = 0; a < classes; ++a) {
      for (std::size_t b = 0; b < classes; ++b) {
        gini_num += std::abs(static_cast<double>(hist[a]) - static_cast<double>(hist[b]));
      }
    }
    const double gini = gini_num / (2.0 * static_cast<double>(classes) * total);

    text_out << "client " << k << ": n=" << run.plan.assignments[k].size()
             << " max_share=" << std::fixed << std::setprecision(3) << max_share
             << " gini=" << gini << " hist=[";
    for (std::size_t c = 0; c < classes; ++c) text_out << (c ? " " : "") << hist[c];
    text_out << "]\n";
    text_out.unsetf(std::ios::fixed);

    if (csv.is_open()) {
      csv << k << ',' << run.plan.assignments[k].size() << ',' << max_share << ',' << gini;
      for (std::size_t c = 0; c < classes; ++c) csv << ',' << hist[c];
      csv << "\n";
    }
  }
}

}  // namespace fedsim
