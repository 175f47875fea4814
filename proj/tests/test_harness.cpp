#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedsim/harness.hpp"

using namespace fedsim;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string write_config(const std::filesystem::path& dir, const std::string& body) {
  const auto path = dir / "config.ini";
  std::ofstream out(path);
  out << body;
  return path.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Strips the trailing wall_seconds field from every data line.
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
    const std::size_t cut = line.rfind(',');
    out += line.substr(0, cut) + "\n";
  }
  return out;
}

// A small fast experiment used across the harness tests.
const char* kSmallConfig =
    "[experiment]\n"
    "strategy = feduv\n"
    "rounds = 3\n"
    "local_epochs = 2\n"
    "clients = 6\n"
    "batch_size = 16\n"
    "seed = 11\n"
    "repeats = 2\n"
    "[model]\n"
    "input_dim = 8\n"
    "encoder_dims = 12\n"
    "projector_dim = 12\n"
    "[data]\n"
    "classes = 4\n"
    "samples_per_class = 60\n"
    "test_fraction = 0.2\n"
    "[partition]\n"
    "kind = dirichlet\n"
    "alpha = 0.5\n";

}  // namespace

TEST_CASE("load_config resolves the documented defaults from a minimal file") {
  const auto dir = temp_dir("fedsim_cfg_minimal");
  const std::string path = write_config(dir,
                                        "[experiment]\n"
                                        "strategy = fedavg\n"
                                        "[data]\n"
                                        "source = synthetic\n");
  const ExperimentConfig cfg = load_config(path);
  CHECK(cfg.round.strategy.kind == StrategyKind::fedavg);
  CHECK(cfg.round.local_epochs == 10);
  CHECK(cfg.round.participation == 1.0);
  CHECK(cfg.round.lr == 0.01);
  CHECK(cfg.round.momentum == 0.9);
  CHECK(cfg.round.weight_decay == 1e-5);
  CHECK(cfg.repeats == 1);
  CHECK(cfg.lambda_auto);
  std::filesystem::remove_all(dir);
}

TEST_CASE("load_config rejects bad values naming the key path") {
  const auto dir = temp_dir("fedsim_cfg_bad");

  const std::string rho = write_config(dir,
                                       "[experiment]\n"
                                       "strategy = fedavg\n"
                                       "participation = 1.5\n");
  try {
    load_config(rho);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("experiment.participation") != std::string::npos);
  }

  const std::string unknown = write_config(dir,
                                           "[experiment]\n"
                                           "strategy = fedavg\n"
                                           "learning_rate = 0.1\n");
  try {
    load_config(unknown);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("experiment.learning_rate") != std::string::npos);
  }

  const std::string type_mismatch = write_config(dir,
                                                 "[experiment]\n"
                                                 "strategy = fedavg\n"
                                                 "lr = fast\n");
  try {
    load_config(type_mismatch);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("experiment.lr") != std::string::npos);
  }

  const std::string no_strategy = write_config(dir, "[data]\nsource = synthetic\n");
  CHECK_THROWS_AS(load_config(no_strategy), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("config round-trips through the manifest serialization") {
  const auto dir = temp_dir("fedsim_cfg_roundtrip");
  const std::string path = write_config(dir, kSmallConfig);
  ExperimentConfig cfg = load_config(path);
  cfg.lambda_auto = false;  // resolved form, as the manifest stores it
  cfg.round.strategy.uv.lambda = 1.0;
  cfg.round.strategy.uv.sigma_override = 2.5;

  const auto manifest = (dir / "manifest.ini").string();
  save_config(manifest, cfg);
  const ExperimentConfig back = load_config(manifest);
  CHECK(config_to_string(back) == config_to_string(cfg));
  std::filesystem::remove_all(dir);
}

TEST_CASE("metrics csv header is pinned and rows round-trip") {
  CHECK(std::string(kMetricsHeader) ==
        "run_seed,round,strategy,ce,l_v,l_u,prox,total,test_accuracy,sv_mean,"
        "sv_values,wall_seconds");

  const auto dir = temp_dir("fedsim_metrics");
  MetricsRow row;
  row.run_seed = 42;
  row.round = 3;
  row.strategy = "feduv";
  row.ce = 1.25;
  row.l_v = 0.0625;
  row.l_u = 0.5;
  row.prox = 0.0;
  row.total = 1.875;
  row.test_accuracy = 0.75;
  row.sv_mean = 1.5;
  row.sv_values = {2.0, 1.0};
  row.wall_seconds = 0.125;
  const std::string path = (dir / "metrics.csv").string();
  write_metrics_csv(path, {row});
  const auto rows = read_metrics_csv(path);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].run_seed == 42);
  CHECK(rows[0].strategy == "feduv");
  CHECK(rows[0].ce == 1.25);
  CHECK(rows[0].sv_values == std::vector<double>{2.0, 1.0});

  // Malformed rows are rejected with their row number.
  {
    std::ofstream out(path);
    out << kMetricsHeader << "\n";
    out << "1,0,fedavg,1,1,1,0,3,0.5,1.0,1.0\n";  // 11 fields instead of 12
  }
  try {
    read_metrics_csv(path);
    FAIL("expected error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("run_command writes repeats x rounds rows and reruns bit-identically") {
  const auto dir = temp_dir("fedsim_run");
  ExperimentConfig cfg = load_config(write_config(dir, kSmallConfig));
  cfg.out_dir = (dir / "out_a").string();
  const std::string first = run_command(cfg, 1);
  const auto rows = read_metrics_csv(first);
  CHECK(rows.size() == 2 * 3);  // repeats x rounds
  CHECK(rows[0].run_seed == 11);
  CHECK(rows[3].run_seed == 12);
  CHECK(std::filesystem::exists(std::filesystem::path(cfg.out_dir) / "manifest.ini"));
  // The manifest resolves lambda to D/4.
  const ExperimentConfig manifest =
      load_config((std::filesystem::path(cfg.out_dir) / "manifest.ini").string());
  CHECK_FALSE(manifest.lambda_auto);
  CHECK(manifest.round.strategy.uv.lambda == 1.0);  // D = 4

  cfg.out_dir = (dir / "out_b").string();
  const std::string second = run_command(cfg, 1);
  CHECK(without_wall_column(slurp(first)) == without_wall_column(slurp(second)));
  std::filesystem::remove_all(dir);
}

TEST_CASE("run_command metrics are identical for 1 and 4 workers") {
  const auto dir = temp_dir("fedsim_workers");
  ExperimentConfig cfg = load_config(write_config(dir, kSmallConfig));
  cfg.repeats = 1;
  cfg.out_dir = (dir / "w1").string();
  const std::string seq = run_command(cfg, 1);
  cfg.out_dir = (dir / "w4").string();
  const std::string par = run_command(cfg, 4);
  CHECK(without_wall_column(slurp(seq)) == without_wall_column(slurp(par)));
  std::filesystem::remove_all(dir);
}

TEST_CASE("run_command refuses a locked output directory") {
  const auto dir = temp_dir("fedsim_lock");
  ExperimentConfig cfg = load_config(write_config(dir, kSmallConfig));
  cfg.out_dir = (dir / "out").string();
  std::filesystem::create_directories(cfg.out_dir);
  {
    std::ofstream lock(std::filesystem::path(cfg.out_dir) / ".lock");
  }
  CHECK_THROWS_AS(run_command(cfg, 1), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("partition_inspect histogram totals match client sizes") {
  const auto dir = temp_dir("fedsim_inspect");
  ExperimentConfig cfg = load_config(write_config(dir, kSmallConfig));
  std::ostringstream text;
  const std::string csv_path = (dir / "summary.csv").string();
  partition_inspect(cfg, text, csv_path);
  CHECK(text.str().find("client 0") != std::string::npos);

  std::ifstream csv(csv_path);
  std::string line;
  std::getline(csv, line);
  CHECK(line.rfind("client,total,max_share,gini", 0) == 0);
  std::size_t total = 0;
  while (std::getline(csv, line)) {
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    REQUIRE(fields.size() == 4 + 4);  // fixed columns + one per class
    std::size_t hist_sum = 0;
    for (std::size_t c = 0; c < 4; ++c) hist_sum += std::stoul(fields[4 + c]);
    CHECK(hist_sum == std::stoul(fields[1]));
    total += hist_sum;
  }
  CHECK(total == 192);  // train side of the 80/20 split of 240 samples
  std::filesystem::remove_all(dir);
}

TEST_CASE("partition_inspect shows concentration at alpha=0.01") {
  const auto dir = temp_dir("fedsim_inspect_alpha");
  std::string body(kSmallConfig);
  body.replace(body.find("alpha = 0.5"), 11, "alpha = 0.01");
  ExperimentConfig cfg = load_config(write_config(dir, body));
  const std::string csv_path = (dir / "summary.csv").string();
  std::ostringstream text;
  partition_inspect(cfg, text, csv_path);
  std::ifstream csv(csv_path);
  std::string line;
  std::getline(csv, line);
  double best = 0.0;
  while (std::getline(csv, line)) {
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    best = std::max(best, std::stod(fields[2]));
  }
  CHECK(best > 0.9);
  std::filesystem::remove_all(dir);
}

TEST_CASE("gradcheck passes clean and reports corrupted gradients") {
  const GradcheckReport clean = run_gradcheck(1);
  CHECK(clean.all_pass);
  REQUIRE(clean.lines.size() == 5);
  for (const GradcheckLine& line : clean.lines) {
    CHECK(line.pass);
    CHECK(line.max_rel_error < 1e-4);
  }

  const GradcheckReport corrupted = run_gradcheck(1, true);
  CHECK_FALSE(corrupted.all_pass);
}

TEST_CASE("plot_command renders labeled series deterministically") {
  const auto dir = temp_dir("fedsim_plot");
  ExperimentConfig cfg = load_config(write_config(dir, kSmallConfig));
  cfg.repeats = 1;
  cfg.out_dir = (dir / "uv").string();
  const std::string uv_csv = run_command(cfg, 2);

  std::string fedavg_body(kSmallConfig);
  fedavg_body.replace(fedavg_body.find("strategy = feduv"), 16, "strategy = fedavg");
  ExperimentConfig cfg2 = load_config(write_config(dir, fedavg_body));
  cfg2.repeats = 1;
  cfg2.out_dir = (dir / "avg").string();
  const std::string avg_csv = run_command(cfg2, 2);

  const std::string out1 =
      plot_command({uv_csv, avg_csv}, PlotKind::loss_curves, (dir / "plots").string());
  const std::string svg = slurp(out1);
  CHECK(svg.find("feduv") != std::string::npos);
  CHECK(svg.find("fedavg") != std::string::npos);
  CHECK(svg.find("<polyline") != std::string::npos);
  CHECK(svg.find("round") != std::string::npos);

  // Deterministic output for identical inputs.
  const std::string out2 =
      plot_command({uv_csv, avg_csv}, PlotKind::loss_curves, (dir / "plots2").string());
  CHECK(slurp(out1) == slurp(out2));

  // Singular value plot carries the min/max band.
  const std::string sv =
      plot_command({uv_csv}, PlotKind::singular_values, (dir / "plots").string());
  CHECK(slurp(sv).find("<polygon") != std::string::npos);

  const std::string acc =
      plot_command({uv_csv, avg_csv}, PlotKind::accuracy_curves, (dir / "plots").string());
  CHECK(std::filesystem::exists(acc));

  // An empty metrics file is an error, not an empty image.
  const std::string empty_csv = (dir / "empty.csv").string();
  {
    std::ofstream out(empty_csv);
    out << kMetricsHeader << "\n";
  }
  CHECK_THROWS(plot_command({empty_csv}, PlotKind::loss_curves, (dir / "plots").string()));

  CHECK(plot_kind_from_name("singular_values") == PlotKind::singular_values);
  CHECK_THROWS_AS(plot_kind_from_name("pie"), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("prepare_run shares the dataset across partition kinds at equal seed") {
  const auto dir = temp_dir("fedsim_prepare");
  ExperimentConfig cfg = load_config(write_config(dir, kSmallConfig));
  const PreparedRun dirichlet = prepare_run(cfg, 11);

  std::string iid_body(kSmallConfig);
  const std::string dirichlet_block = "kind = dirichlet\nalpha = 0.5\n";
  iid_body.replace(iid_body.find(dirichlet_block), dirichlet_block.size(), "kind = iid\n");
  ExperimentConfig cfg2 = load_config(write_config(dir, iid_body));
  const PreparedRun iid = prepare_run(cfg2, 11);

  CHECK(dirichlet.train.features == iid.train.features);
  CHECK(dirichlet.test.features == iid.test.features);
  CHECK(dirichlet.model.num_classes == 4);
  CHECK(dirichlet.round.strategy.uv.lambda == 1.0);  // auto lambda = D/4
  std::filesystem::remove_all(dir);
}

TEST_CASE("by_domain config builds transforms and partitions by tag") {
  const auto dir = temp_dir("fedsim_bydomain");
  const char* body =
      "[experiment]\n"
      "strategy = feduv\n"
      "rounds = 2\n"
      "local_epochs = 1\n"
      "clients = 4\n"
      "batch_size = 16\n"
      "seed = 3\n"
      "[model]\n"
      "input_dim = 8\n"
      "encoder_dims = 12\n"
      "projector_dim = 12\n"
      "[data]\n"
      "classes = 4\n"
      "samples_per_class = 60\n"
      "test_fraction = 0.2\n"
      "[partition]\n"
      "kind = by_domain\n"
      "domains = 4\n"
      "domain_angles = 0,0.8,1.6,2.4\n"
      "domain_scales = 1.0,0.7,1.3,0.9\n"
      "domain_bias = 0,0.5,-0.5,1.0\n";
  ExperimentConfig cfg = load_config(write_config(dir, body));
  const PreparedRun run = prepare_run(cfg, 3);
  CHECK(run.plan.kind == PartitionKind::by_domain);
  CHECK(run.plan.clients() == 4);
  CHECK_FALSE(run.train.domain_tags.empty());
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t idx : run.plan.assignments[k]) {
      CHECK(run.train.domain_tags[idx] == static_cast<int>(k));
    }
  }

  // Domain count must match the client count.
  std::string bad(body);
  bad.replace(bad.find("clients = 4"), 11, "clients = 5");
  CHECK_THROWS_AS(load_config(write_config(dir, bad)), ConfigError);
  std::filesystem::remove_all(dir);
}
