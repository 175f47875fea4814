// Acceptance suite: runs every exit criterion at its stated tolerance and
// prints one pass/fail line per criterion. Exits nonzero if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fedsim/harness.hpp"
#include "fedsim/svd.hpp"

using namespace fedsim;

namespace {

int g_failures = 0;

class Criterion {
 public:
  explicit Criterion(int number, std::string title)
      : number_(number), title_(std::move(title)), start_(std::chrono::steady_clock::now()) {}

  void expect(bool ok, const std::string& detail) {
    if (!ok) pass_ = false;
    details_.push_back(detail);
  }

  ~Criterion() {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::printf("[%s] criterion %d: %s (%.1fs)\n", pass_ ? "PASS" : "FAIL", number_,
                title_.c_str(), secs);
    for (const std::string& d : details_) std::printf("       %s\n", d.c_str());
    std::fflush(stdout);
    if (!pass_) ++g_failures;
  }

 private:
  int number_;
  std::string title_;
  std::vector<std::string> details_;
  bool pass_ = true;
  std::chrono::steady_clock::time_point start_;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Shared desk-scale setup for criteria 6-9: 10-class blobs over input 32 with
// 5000 samples (4500 train after the 90/10 split), K=10, E=5, R=30, B=64.
// ---------------------------------------------------------------------------

ExperimentConfig desk_scale_config(StrategyKind kind) {
  ExperimentConfig cfg;
  cfg.round.rounds = 30;
  cfg.round.local_epochs = 5;
  cfg.round.num_clients = 10;
  cfg.round.batch_size = 64;
  cfg.round.lr = 0.01;
  cfg.round.momentum = 0.9;
  cfg.round.weight_decay = 1e-5;
  cfg.round.strategy.kind = kind;
  cfg.round.strategy.uv.mu = 0.5;
  cfg.lambda_auto = true;  // lambda = D/4 = 2.5
  cfg.round.strategy.mu_prox = 0.01;
  cfg.model.input_dim = 32;
  cfg.model.encoder_dims = {64};
  cfg.model.projector_dim = 64;
  cfg.data.synth.num_classes = 10;
  cfg.data.synth.samples_per_class = 500;
  cfg.data.synth.cluster_spread = 2.5;
  cfg.data.synth.class_mean_scale = 3.0;
  cfg.data.test_fraction = 0.1;
  cfg.partition.kind = PartitionKind::dirichlet;
  cfg.partition.alpha = 0.01;
  return cfg;
}

struct RunOutcome {
  double final_accuracy = 0.0;
  double final_sv_mean = 0.0;
  double median_wall_seconds = 0.0;  // robust against scheduler spikes
};

RunOutcome execute(const ExperimentConfig& cfg, std::uint64_t seed) {
  PreparedRun run = prepare_run(cfg, seed);
  const auto reports =
      run_experiment(run.round, run.model, run.train, run.test, run.plan, 2);
  RunOutcome out;
  out.final_accuracy = reports.back().test_accuracy;
  out.final_sv_mean = reports.back().sv_mean;
  std::vector<double> walls;
  walls.reserve(reports.size());
  for (const RoundReport& r : reports) walls.push_back(r.wall_seconds);
  std::sort(walls.begin(), walls.end());
  out.median_wall_seconds = walls.size() % 2 == 1
                                ? walls[walls.size() / 2]
                                : 0.5 * (walls[walls.size() / 2 - 1] +
                                         walls[walls.size() / 2]);
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string without_wall_column(const std::string& csv) {
  std::stringstream in(csv);
  std::string line;
  std::string out;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      out += line + "\n";
      continue;
    }
    out += line.substr(0, line.rfind(',')) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------

void criterion_1() {
  Criterion c(1, "closed-form loss values");
  c.expect(std::abs(variance_threshold(10) - 0.3) <= 1e-6,
           "variance_threshold(10) = " + fmt(variance_threshold(10)));
  c.expect(std::abs(variance_threshold(2) - 0.5) <= 1e-6,
           "variance_threshold(2) = " + fmt(variance_threshold(2)));

  const Matrix pair(2, 3, {0.2, -1.0, 4.0, 1.7, 2.5, -0.5});
  const double two_rows = uniformity_loss(pair).loss;
  c.expect(std::abs(two_rows - std::exp(-0.5)) <= 1e-12,
           "uniformity of two distinct rows = " + fmt(two_rows));

  const Matrix three(3, 1, {0.0, 1.0, 3.0});
  const double three_rows = uniformity_loss(three).loss;
  c.expect(std::abs(three_rows - 0.6046) <= 1e-4,
           "uniformity of rows [0],[1],[3] = " + fmt(three_rows));
}

void criterion_2() {
  Criterion c(2, "gradient suite vs central finite differences");
  const GradcheckReport report = run_gradcheck(1);
  for (const GradcheckLine& line : report.lines) {
    c.expect(line.pass, line.family + " max relative error " + fmt(line.max_rel_error));
  }
}

void criterion_3() {
  Criterion c(3, "dirichlet partition statistics");
  SyntheticSpec spec;
  spec.num_classes = 10;
  spec.input_dim = 4;
  spec.samples_per_class = 50;
  RngStream data_rng(77);
  const Dataset ds = gen_blobs(spec, data_rng);
  const std::size_t clients = 10;

  // alpha = 1 over 200 seeds: per-client mean class proportion vs 1/K.
  std::vector<double> client_share_sum(clients, 0.0);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    RngStream rng = RngStream(seed).child(3);
    const PartitionPlan plan = dirichlet_partition(ds.labels, clients, 1.0, rng);
    plan.validate(ds.size());
    for (std::size_t k = 0; k < clients; ++k) {
      std::vector<std::size_t> hist(10, 0);
      for (std::size_t idx : plan.assignments[k]) ++hist[ds.labels[idx]];
      double mean_share = 0.0;
      for (std::size_t h : hist) mean_share += static_cast<double>(h) / 50.0 / 10.0;
      client_share_sum[k] += mean_share;
    }
  }
  double worst = 0.0;
  for (double s : client_share_sum) worst = std::max(worst, std::abs(s / 200.0 - 0.1));
  c.expect(worst <= 0.02, "alpha=1 worst client deviation " + fmt(worst));

  // alpha = 0.01: median max-class-share pooled over clients x 10 seeds.
  std::vector<double> max_shares;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RngStream rng = RngStream(seed).child(4);
    const PartitionPlan plan = dirichlet_partition(ds.labels, clients, 0.01, rng);
    plan.validate(ds.size());
    for (const auto& client : plan.assignments) {
      std::vector<std::size_t> hist(10, 0);
      for (std::size_t idx : client) ++hist[ds.labels[idx]];
      max_shares.push_back(
          static_cast<double>(*std::max_element(hist.begin(), hist.end())) /
          static_cast<double>(client.size()));
    }
  }
  std::sort(max_shares.begin(), max_shares.end());
  const double median_share =
      0.5 * (max_shares[max_shares.size() / 2 - 1] + max_shares[max_shares.size() / 2]);
  c.expect(median_share > 0.9, "alpha=0.01 median max-class-share " + fmt(median_share));
}

void criterion_4() {
  Criterion c(4, "federation identities");
  MlpConfig mcfg;
  mcfg.input_dim = 8;
  mcfg.encoder_dims = {16};
  mcfg.projector_dim = 16;
  mcfg.num_classes = 4;

  // Aggregate of identical models is bit-identical, any counts.
  RngStream rng(13);
  const ModelParams theta = init_params(mcfg, rng);
  c.expect(bit_identical(aggregate({theta, theta, theta}, {1, 2, 3}), theta),
           "aggregate of three identical copies is bit-identical");

  // Hand-weighted oracle: values 1 and 3 at counts 1 and 3 average to 2.5.
  ModelParams one;
  one.layers.push_back(Layer{Matrix(1, 1, {1.0}), {}, false, false});
  ModelParams three;
  three.layers.push_back(Layer{Matrix(1, 1, {3.0}), {}, false, false});
  const double mixed = aggregate({one, three}, {1, 3}).layers[0].weights(0, 0);
  c.expect(mixed == 2.5, "weighted mean of (1, n=1) and (3, n=3) = " + fmt(mixed));

  // R=1/K=1/rho=1 federated run equals centralized training bit-exactly.
  SyntheticSpec spec;
  spec.num_classes = 4;
  spec.input_dim = 8;
  spec.samples_per_class = 100;
  RngStream data_rng(23);
  const Dataset train = gen_blobs(spec, data_rng);
  RngStream test_rng(24);
  const Dataset test = gen_blobs(spec, test_rng);

  RoundConfig rcfg;
  rcfg.rounds = 1;
  rcfg.local_epochs = 5;
  rcfg.num_clients = 1;
  rcfg.participation = 1.0;
  rcfg.batch_size = 32;
  rcfg.seed = 77;
  rcfg.strategy.kind = StrategyKind::fedavg;

  PartitionPlan plan;
  plan.kind = PartitionKind::iid;
  plan.assignments.resize(1);
  plan.assignments[0].resize(train.size());
  std::iota(plan.assignments[0].begin(), plan.assignments[0].end(), 0);

  ModelParams federated;
  run_experiment(rcfg, mcfg, train, test, plan, 1, &federated);

  const RngStream root(rcfg.seed);
  RngStream init_rng = root.child(stream_label::kInit);
  ModelParams central = init_params(mcfg, init_rng);
  SgdState opt = SgdState::make(central, rcfg.lr, rcfg.momentum, rcfg.weight_decay);
  RngStream client_rng = root.child(stream_label::kClient).child(0).child(0);
  for (std::size_t epoch = 0; epoch < rcfg.local_epochs; ++epoch) {
    RngStream epoch_rng = client_rng.child(epoch);
    for (const auto& batch_idx : batches(plan.assignments[0], rcfg.batch_size, epoch_rng)) {
      Matrix x(batch_idx.size(), train.features.cols());
      std::vector<int> y(batch_idx.size());
      for (std::size_t i = 0; i < batch_idx.size(); ++i) {
        const double* src = train.features.row_ptr(batch_idx[i]);
        std::copy(src, src + train.features.cols(), x.row_ptr(i));
        y[i] = train.labels[batch_idx[i]];
      }
      const ForwardCache cache = forward(central, x);
      const CrossEntropyResult ce = cross_entropy(cache.logits(), y);
      const Gradients grads = backward(central, cache, ce.grad_logits, Matrix());
      sgd_step(central, grads, opt);
    }
  }
  c.expect(bit_identical(federated, central),
           "R=1/K=1/rho=1 run equals centralized training bit-exactly");

  // Freeze keeps the global classifier bit-identical across 30 rounds.
  RoundConfig fcfg = rcfg;
  fcfg.rounds = 30;
  fcfg.local_epochs = 2;
  fcfg.num_clients = 4;
  fcfg.seed = 99;
  fcfg.strategy.kind = StrategyKind::freeze;
  RngStream part_rng(5);
  const PartitionPlan fplan = iid_partition(train.size(), 4, part_rng);
  ModelParams final_frozen;
  run_experiment(fcfg, mcfg, train, test, fplan, 2, &final_frozen);

  const RngStream froot(fcfg.seed);
  RngStream finit = froot.child(stream_label::kInit);
  RngStream ffreeze = froot.child(stream_label::kFreeze);
  const ModelParams expected = freeze_classifier(init_params(mcfg, finit), ffreeze);
  c.expect(bit_identical(final_frozen.classifier().weights, expected.classifier().weights),
           "frozen classifier bit-identical across 30 rounds");
}

void criterion_5() {
  Criterion c(5, "determinism under parallelism (1 vs 8 workers)");
  ExperimentConfig cfg = desk_scale_config(StrategyKind::feduv);
  cfg.round.rounds = 4;
  cfg.round.num_clients = 8;
  cfg.data.synth.num_classes = 6;
  cfg.data.synth.samples_per_class = 100;
  cfg.partition.alpha = 0.5;
  cfg.round.seed = 3;
  cfg.repeats = 1;

  const auto base = std::filesystem::temp_directory_path() / "fedsim_acceptance_c5";
  std::filesystem::remove_all(base);
  cfg.out_dir = (base / "w1").string();
  const std::string seq = run_command(cfg, 1);
  cfg.out_dir = (base / "w8").string();
  const std::string par = run_command(cfg, 8);
  c.expect(without_wall_column(slurp(seq)) == without_wall_column(slurp(par)),
           "metrics CSVs byte-identical apart from wall_seconds");
  std::filesystem::remove_all(base);
}

struct DeskScaleResults {
  RunOutcome fedavg_dir[3];
  RunOutcome fedavg_iid[3];
  RunOutcome feduv_dir[3];
  RunOutcome fedprox_dir[3];
  // Wall-time medians from every timing pass, per strategy.
  std::vector<double> fedavg_walls;
  std::vector<double> feduv_walls;
  std::vector<double> fedprox_walls;
};

DeskScaleResults run_desk_scale() {
  DeskScaleResults r;
  const ExperimentConfig fedavg = desk_scale_config(StrategyKind::fedavg);
  ExperimentConfig fedavg_iid = fedavg;
  fedavg_iid.partition.kind = PartitionKind::iid;
  const ExperimentConfig feduv = desk_scale_config(StrategyKind::feduv);
  const ExperimentConfig fedprox = desk_scale_config(StrategyKind::fedprox);

  for (std::uint64_t s = 0; s < 3; ++s) r.fedavg_iid[s] = execute(fedavg_iid, s + 1);

  // Timing grid: warmup, then two passes over every (seed, strategy) with
  // the strategy order rotated between cells so slow machine drift cancels
  // out of the comparison. Accuracy and spectra are worker-count and
  // repetition independent, so pass 0 supplies them.
  execute(fedavg, 1);
  const StrategyKind order[3] = {StrategyKind::fedavg, StrategyKind::fedprox,
                                 StrategyKind::feduv};
  for (int pass = 0; pass < 2; ++pass) {
    for (std::uint64_t s = 0; s < 3; ++s) {
      const int rotation = (pass * 3 + static_cast<int>(s)) % 3;
      for (int i = 0; i < 3; ++i) {
        const StrategyKind kind = order[(i + rotation) % 3];
        const ExperimentConfig& cfg =
            kind == StrategyKind::fedavg ? fedavg
            : kind == StrategyKind::fedprox ? fedprox
                                            : feduv;
        const RunOutcome out = execute(cfg, s + 1);
        switch (kind) {
          case StrategyKind::fedavg:
            r.fedavg_walls.push_back(out.median_wall_seconds);
            if (pass == 0) r.fedavg_dir[s] = out;
            break;
          case StrategyKind::fedprox:
            r.fedprox_walls.push_back(out.median_wall_seconds);
            if (pass == 0) r.fedprox_dir[s] = out;
            break;
          case StrategyKind::feduv:
            r.feduv_walls.push_back(out.median_wall_seconds);
            if (pass == 0) r.feduv_dir[s] = out;
            break;
          default:
            break;
        }
      }
    }
  }
  return r;
}

void criterion_6(const DeskScaleResults& r) {
  Criterion c(6, "classifier singular values degrade under label shift");
  int wins = 0;
  std::string detail;
  for (int s = 0; s < 3; ++s) {
    const bool ok = r.fedavg_dir[s].final_sv_mean < r.fedavg_iid[s].final_sv_mean;
    wins += ok;
    detail += "seed " + std::to_string(s + 1) + ": alpha=0.01 sv " +
              fmt(r.fedavg_dir[s].final_sv_mean) + (ok ? " < " : " >= ") + "iid sv " +
              fmt(r.fedavg_iid[s].final_sv_mean) + "  ";
  }
  c.expect(wins >= 2, detail + "(" + std::to_string(wins) + "/3 seeds)");
}

void criterion_7(const DeskScaleResults& r) {
  Criterion c(7, "feduv beats fedavg at alpha=0.01 (accuracy and spectrum)");
  int acc_wins = 0;
  int sv_wins = 0;
  std::string detail;
  for (int s = 0; s < 3; ++s) {
    acc_wins += r.feduv_dir[s].final_accuracy >= r.fedavg_dir[s].final_accuracy;
    sv_wins += r.feduv_dir[s].final_sv_mean > r.fedavg_dir[s].final_sv_mean;
    detail += "seed " + std::to_string(s + 1) + ": acc " +
              fmt(r.feduv_dir[s].final_accuracy) + " vs " +
              fmt(r.fedavg_dir[s].final_accuracy) + ", sv " +
              fmt(r.feduv_dir[s].final_sv_mean) + " vs " +
              fmt(r.fedavg_dir[s].final_sv_mean) + "  ";
  }
  c.expect(acc_wins >= 2, "accuracy wins " + std::to_string(acc_wins) + "/3: " + detail);
  c.expect(sv_wins >= 2, "spectrum wins " + std::to_string(sv_wins) + "/3");
}

void criterion_8() {
  Criterion c(8, "uniformity beats variance-only on feature shift");
  ExperimentConfig base = desk_scale_config(StrategyKind::feduv);
  base.round.num_clients = 4;
  base.partition.kind = PartitionKind::by_domain;
  base.partition.domains = 4;
  base.partition.domain_angles = {0.0, 1.3, 2.6, 3.9};
  base.partition.domain_scales = {1.0, 0.625, 1.6, 0.85};
  base.partition.domain_bias = {0.0, 1.0, -1.0, 2.0};
  base.lambda_auto = false;

  ExperimentConfig uniformity_only = base;
  uniformity_only.round.strategy.uv.mu = 0.5;
  uniformity_only.round.strategy.uv.lambda = 0.0;
  ExperimentConfig variance_only = base;
  variance_only.round.strategy.uv.mu = 0.0;
  variance_only.round.strategy.uv.lambda = 2.5;

  int wins = 0;
  std::string detail;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const RunOutcome u = execute(uniformity_only, s + 1);
    const RunOutcome v = execute(variance_only, s + 1);
    const bool ok = u.final_accuracy >= v.final_accuracy;
    wins += ok;
    detail += "seed " + std::to_string(s + 1) + ": only-L_U " + fmt(u.final_accuracy) +
              (ok ? " >= " : " < ") + "only-L_V " + fmt(v.final_accuracy) + "  ";
  }
  c.expect(wins >= 2, detail + "(" + std::to_string(wins) + "/3 seeds)");
}

void criterion_9(const DeskScaleResults& r) {
  Criterion c(9, "per-round wall time: feduv ~ fedavg, fedprox >= fedavg");
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  const double fedavg = mean(r.fedavg_walls);
  const double feduv = mean(r.feduv_walls);
  const double fedprox = mean(r.fedprox_walls);
  const std::string timing =
      "median s/round averaged over " + std::to_string(r.fedavg_walls.size()) +
      " runs each: fedavg " + fmt(fedavg) + ", feduv " + fmt(feduv) + ", fedprox " +
      fmt(fedprox) + " (absolute values machine-dependent)";
  c.expect(std::abs(feduv - fedavg) <= 0.15 * fedavg, timing);
  c.expect(fedprox >= fedavg, "fedprox >= fedavg on the pooled comparison");
}

}  // namespace

int main() {
  std::printf("fedsim acceptance suite\n");
  std::printf("shared setup: 10-class blobs, input 32, 5000 samples, K=10, E=5, R=30, "
              "B=64, lr 0.01, momentum 0.9, wd 1e-5, seeds 1-3\n\n");
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  const auto t0 = std::chrono::steady_clock::now();
  const DeskScaleResults desk = run_desk_scale();
  std::printf("[info] shared simulations for criteria 6/7/9: 22 runs in %.1fs\n",
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  criterion_6(desk);
  criterion_7(desk);
  criterion_8();
  criterion_9(desk);
  std::printf("\n%d of 9 criteria passed\n", 9 - g_failures);
  return g_failures == 0 ? 0 : 1;
}
