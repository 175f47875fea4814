#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "fedsim/harness.hpp"

namespace fedsim {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// section -> key -> value, in file order for error reporting.
using KvMap = std::map<std::string, std::map<std::string, std::string>>;

KvMap parse_ini(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  KvMap kv;
  std::string section;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    // Strip comments: '#' or ';' at line start or preceded by whitespace.
    for (std::size_t i = 0; i < line.size(); ++i) {
      if ((line[i] == '#' || line[i] == ';') &&
          (i == 0 || std::isspace(static_cast<unsigned char>(line[i - 1])))) {
        line.erase(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError(path + ":" + std::to_string(line_no) + ": malformed section");
      }
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) {
        throw ConfigError(path + ":" + std::to_string(line_no) + ": empty section name");
      }
      kv[section];
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    }
    if (section.empty()) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": key before any section");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": empty key");
    }
    if (kv[section].count(key)) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": duplicate key " +
                        section + "." + key);
    }
    kv[section][key] = value;
  }
  return kv;
}

// Tracks which keys were consumed so leftovers can be rejected by path.
class KvReader {
 public:
  explicit KvReader(KvMap kv) : kv_(std::move(kv)) {}

  bool has(const std::string& section, const std::string& key) {
    auto s = kv_.find(section);
    return s != kv_.end() && s->second.count(key) > 0;
  }

  std::string take(const std::string& section, const std::string& key) {
    consumed_[section].insert(consumed_[section].end(), key);
    return kv_[section][key];
  }

  std::string take_string(const std::string& section, const std::string& key,
                          const std::string& fallback) {
    if (!has(section, key)) return fallback;
    return take(section, key);
  }

  double take_double(const std::string& section, const std::string& key, double fallback) {
    if (!has(section, key)) return fallback;
    return parse_double(section, key, take(section, key));
  }

  std::uint64_t take_u64(const std::string& section, const std::string& key,
                         std::uint64_t fallback) {
    if (!has(section, key)) return fallback;
    const std::string raw = take(section, key);
    try {
      std::size_t used = 0;
      const std::uint64_t v = std::stoull(raw, &used);
      if (used != raw.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError(section + "." + key + ": expected a nonnegative integer, got '" +
                        raw + "'");
    }
  }

  bool take_bool(const std::string& section, const std::string& key, bool fallback) {
    if (!has(section, key)) return fallback;
    const std::string raw = take(section, key);
    if (raw == "true" || raw == "1") return true;
    if (raw == "false" || raw == "0") return false;
    throw ConfigError(section + "." + key + ": expected true or false, got '" + raw + "'");
  }

  std::vector<double> take_double_list(const std::string& section, const std::string& key) {
    if (!has(section, key)) return {};
    const std::string raw = take(section, key);
    std::vector<double> out;
    std::stringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ',')) {
      out.push_back(parse_double(section, key, trim(item)));
    }
    return out;
  }

  std::vector<std::size_t> take_size_list(const std::string& section, const std::string& key,
                                          std::vector<std::size_t> fallback) {
    if (!has(section, key)) return fallback;
    const std::string raw = take(section, key);
    std::vector<std::size_t> out;
    std::stringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      try {
        std::size_t used = 0;
        const unsigned long v = std::stoul(item, &used);
        if (used != item.size()) throw std::invalid_argument("");
        out.push_back(v);
      } catch (...) {
        throw ConfigError(section + "." + key + ": expected an integer list, got '" + raw +
                          "'");
      }
    }
    return out;
  }

  double parse_double(const std::string& section, const std::string& key,
                      const std::string& raw) {
    try {
      std::size_t used = 0;
      const double v = std::stod(raw, &used);
      if (used != raw.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError(section + "." + key + ": expected a number, got '" + raw + "'");
    }
  }

  void reject_unknown() const {
    for (const auto& [section, keys] : kv_) {
      auto consumed = consumed_.find(section);
      for (const auto& [key, value] : keys) {
        const bool known = consumed != consumed_.end() &&
                           std::find(consumed->second.begin(), consumed->second.end(),
                                     key) != consumed->second.end();
        if (!known) throw ConfigError("unknown key " + section + "." + key);
      }
    }
  }

 private:
  KvMap kv_;
  std::map<std::string, std::vector<std::string>> consumed_;
};

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& path, const std::string& msg) {
    throw ConfigError(path + ": " + msg);
  };
  if (round.rounds < 1) fail("experiment.rounds", "must be >= 1");
  if (round.local_epochs < 1) fail("experiment.local_epochs", "must be >= 1");
  if (round.num_clients < 1) fail("experiment.clients", "must be >= 1");
  if (round.batch_size < 1) fail("experiment.batch_size", "must be >= 1");
  if (round.participation <= 0.0 || round.participation > 1.0) {
    fail("experiment.participation", "must be in (0, 1]");
  }
  if (round.lr <= 0.0) fail("experiment.lr", "must be > 0");
  if (round.momentum < 0.0 || round.momentum >= 1.0) {
    fail("experiment.momentum", "must be in [0, 1)");
  }
  if (round.weight_decay < 0.0) fail("experiment.weight_decay", "must be >= 0");
  if (repeats < 1) fail("experiment.repeats", "must be >= 1");
  if (round.strategy.mu_prox < 0.0) fail("experiment.mu_prox", "must be >= 0");
  if (round.strategy.uv.mu < 0.0) fail("experiment.mu", "must be >= 0");
  if (!lambda_auto && round.strategy.uv.lambda < 0.0) {
    fail("experiment.lambda", "must be >= 0 or auto");
  }
  if (round.strategy.uv.sigma_override && *round.strategy.uv.sigma_override <= 0.0) {
    fail("experiment.sigma", "must be > 0");
  }

  if (model.input_dim < 2) fail("model.input_dim", "must be >= 2");
  if (model.projector_dim < 1) fail("model.projector_dim", "must be >= 1");
  for (std::size_t d : model.encoder_dims) {
    if (d < 1) fail("model.encoder_dims", "entries must be >= 1");
  }

  if (data.source == DataConfig::Source::synthetic) {
    if (data.synth.num_classes < 2) fail("data.classes", "must be >= 2");
    if (data.synth.samples_per_class < 2) fail("data.samples_per_class", "must be >= 2");
    if (data.synth.cluster_spread < 0.0) fail("data.cluster_spread", "must be >= 0");
    if (data.synth.class_mean_scale <= 0.0) fail("data.class_mean_scale", "must be > 0");
    if (round.strategy.kind == StrategyKind::freeze &&
        model.projector_dim < data.synth.num_classes) {
      fail("model.projector_dim", "must be >= data.classes for the freeze strategy");
    }
  } else {
    if (data.csv_path.empty()) fail("data.csv_path", "required for csv source");
  }
  if (data.test_fraction <= 0.0 || data.test_fraction >= 1.0) {
    fail("data.test_fraction", "must be in (0, 1)");
  }

  if (partition.kind == PartitionKind::dirichlet && partition.alpha <= 0.0) {
    fail("partition.alpha", "must be > 0");
  }
  if (partition.kind == PartitionKind::by_domain) {
    if (partition.domains < 2) fail("partition.domains", "must be >= 2");
    if (partition.domains != round.num_clients) {
      fail("partition.domains", "must equal experiment.clients for by_domain");
    }
    auto check_len = [&](const std::vector<double>& v, const std::string& key) {
      if (!v.empty() && v.size() != partition.domains) {
        fail("partition." + key, "needs one entry per domain");
      }
    };
    check_len(partition.domain_angles, "domain_angles");
    check_len(partition.domain_scales, "domain_scales");
    check_len(partition.domain_bias, "domain_bias");
    for (double s : partition.domain_scales) {
      if (s <= 0.0) fail("partition.domain_scales", "entries must be > 0");
    }
  }
  if (out_dir.empty()) fail("output.dir", "must not be empty");
}

ExperimentConfig load_config(const std::string& path) {
  KvReader kv(parse_ini(path));
  ExperimentConfig cfg;

  const std::string strategy = kv.take_string("experiment", "strategy", "");
  if (strategy.empty()) throw ConfigError("experiment.strategy: required");
  try {
    cfg.round.strategy.kind = strategy_from_name(strategy);
  } catch (const std::invalid_argument&) {
    throw ConfigError("experiment.strategy: unknown strategy '" + strategy + "'");
  }

  cfg.round.rounds = kv.take_u64("experiment", "rounds", 30);
  cfg.round.local_epochs = kv.take_u64("experiment", "local_epochs", 10);
  cfg.round.num_clients = kv.take_u64("experiment", "clients", 10);
  cfg.round.participation = kv.take_double("experiment", "participation", 1.0);
  cfg.round.batch_size = kv.take_u64("experiment", "batch_size", 64);
  cfg.round.lr = kv.take_double("experiment", "lr", 0.01);
  cfg.round.momentum = kv.take_double("experiment", "momentum", 0.9);
  cfg.round.weight_decay = kv.take_double("experiment", "weight_decay", 1e-5);
  cfg.round.seed = kv.take_u64("experiment", "seed", 1);
  cfg.repeats = kv.take_u64("experiment", "repeats", 1);
  cfg.round.strategy.mu_prox = kv.take_double("experiment", "mu_prox", 0.01);
  cfg.round.strategy.uv.mu = kv.take_double("experiment", "mu", 0.5);
  if (kv.has("experiment", "lambda")) {
    const std::string lambda = kv.take("experiment", "lambda");
    if (lambda == "auto") {
      cfg.lambda_auto = true;
    } else {
      cfg.lambda_auto = false;
      cfg.round.strategy.uv.lambda = kv.parse_double("experiment", "lambda", lambda);
    }
  }
  if (kv.has("experiment", "sigma")) {
    cfg.round.strategy.uv.sigma_override =
        kv.take_double("experiment", "sigma", 0.0);
  }
  cfg.round.strategy.uv.hyperspherical =
      kv.take_bool("experiment", "hyperspherical", true);

  cfg.model.input_dim = kv.take_u64("model", "input_dim", 32);
  cfg.model.encoder_dims = kv.take_size_list("model", "encoder_dims", {64});
  cfg.model.projector_dim = kv.take_u64("model", "projector_dim", 64);

  const std::string source = kv.take_string("data", "source", "synthetic");
  if (source == "synthetic") {
    cfg.data.source = DataConfig::Source::synthetic;
  } else if (source == "csv") {
    cfg.data.source = DataConfig::Source::csv;
  } else {
    throw ConfigError("data.source: expected synthetic or csv, got '" + source + "'");
  }
  cfg.data.synth.num_classes = kv.take_u64("data", "classes", 10);
  cfg.data.synth.samples_per_class = kv.take_u64("data", "samples_per_class", 500);
  cfg.data.synth.cluster_spread = kv.take_double("data", "cluster_spread", 2.5);
  cfg.data.synth.class_mean_scale = kv.take_double("data", "class_mean_scale", 3.0);
  cfg.data.synth.input_dim = cfg.model.input_dim;
  cfg.data.test_fraction = kv.take_double("data", "test_fraction", 0.1);
  cfg.data.csv_path = kv.take_string("data", "csv_path", "");
  cfg.data.csv_schema.has_header = kv.take_bool("data", "has_header", true);
  cfg.data.csv_schema.label_column = kv.take_string("data", "label_column", "label");

  const std::string kind = kv.take_string("partition", "kind", "dirichlet");
  if (kind == "dirichlet") {
    cfg.partition.kind = PartitionKind::dirichlet;
  } else if (kind == "iid") {
    cfg.partition.kind = PartitionKind::iid;
  } else if (kind == "by_domain") {
    cfg.partition.kind = PartitionKind::by_domain;
  } else {
    throw ConfigError("partition.kind: expected dirichlet, iid or by_domain, got '" + kind +
                      "'");
  }
  cfg.partition.alpha = kv.take_double("partition", "alpha", 1.0);
  cfg.partition.domains = kv.take_u64("partition", "domains", 0);
  cfg.partition.domain_angles = kv.take_double_list("partition", "domain_angles");
  cfg.partition.domain_scales = kv.take_double_list("partition", "domain_scales");
  cfg.partition.domain_bias = kv.take_double_list("partition", "domain_bias");

  cfg.out_dir = kv.take_string("output", "dir", "out");

  kv.reject_unknown();
  cfg.validate();
  return cfg;
}

std::string config_to_string(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "[experiment]\n";
  out << "strategy = " << strategy_name(cfg.round.strategy.kind) << "\n";
  out << "rounds = " << cfg.round.rounds << "\n";
  out << "local_epochs = " << cfg.round.local_epochs << "\n";
  out << "clients = " << cfg.round.num_clients << "\n";
  out << "participation = " << fmt_double(cfg.round.participation) << "\n";
  out << "batch_size = " << cfg.round.batch_size << "\n";
  out << "lr = " << fmt_double(cfg.round.lr) << "\n";
  out << "momentum = " << fmt_double(cfg.round.momentum) << "\n";
  out << "weight_decay = " << fmt_double(cfg.round.weight_decay) << "\n";
  out << "seed = " << cfg.round.seed << "\n";
  out << "repeats = " << cfg.repeats << "\n";
  out << "mu_prox = " << fmt_double(cfg.round.strategy.mu_prox) << "\n";
  out << "mu = " << fmt_double(cfg.round.strategy.uv.mu) << "\n";
  if (cfg.lambda_auto) {
    out << "lambda = auto\n";
  } else {
    out << "lambda = " << fmt_double(cfg.round.strategy.uv.lambda) << "\n";
  }
  if (cfg.round.strategy.uv.sigma_override) {
    out << "sigma = " << fmt_double(*cfg.round.strategy.uv.sigma_override) << "\n";
  }
  out << "hyperspherical = " << (cfg.round.strategy.uv.hyperspherical ? "true" : "false")
      << "\n";
  out << "\n[model]\n";
  out << "input_dim = " << cfg.model.input_dim << "\n";
  out << "encoder_dims = ";
  for (std::size_t i = 0; i < cfg.model.encoder_dims.size(); ++i) {
    out << (i ? "," : "") << cfg.model.encoder_dims[i];
  }
  out << "\n";
  out << "projector_dim = " << cfg.model.projector_dim << "\n";
  out << "\n[data]\n";
  if (cfg.data.source == DataConfig::Source::synthetic) {
    out << "source = synthetic\n";
    out << "classes = " << cfg.data.synth.num_classes << "\n";
    out << "samples_per_class = " << cfg.data.synth.samples_per_class << "\n";
    out << "cluster_spread = " << fmt_double(cfg.data.synth.cluster_spread) << "\n";
    out << "class_mean_scale = " << fmt_double(cfg.data.synth.class_mean_scale) << "\n";
  } else {
    out << "source = csv\n";
    out << "csv_path = " << cfg.data.csv_path << "\n";
    out << "has_header = " << (cfg.data.csv_schema.has_header ? "true" : "false") << "\n";
    out << "label_column = " << cfg.data.csv_schema.label_column << "\n";
  }
  out << "test_fraction = " << fmt_double(cfg.data.test_fraction) << "\n";
  out << "\n[partition]\n";
  switch (cfg.partition.kind) {
    case PartitionKind::dirichlet:
      out << "kind = dirichlet\n";
      out << "alpha = " << fmt_double(cfg.partition.alpha) << "\n";
      break;
    case PartitionKind::iid:
      out << "kind = iid\n";
      break;
    case PartitionKind::by_domain: {
      out << "kind = by_domain\n";
      out << "domains = " << cfg.partition.domains << "\n";
      auto emit_list = [&out](const std::string& key, const std::vector<double>& v) {
        if (v.empty()) return;
        out << key << " = ";
        for (std::size_t i = 0; i < v.size(); ++i) out << (i ? "," : "") << fmt_double(v[i]);
        out << "\n";
      };
      emit_list("domain_angles", cfg.partition.domain_angles);
      emit_list("domain_scales", cfg.partition.domain_scales);
      emit_list("domain_bias", cfg.partition.domain_bias);
      break;
    }
  }
  out << "\n[output]\n";
  out << "dir = " << cfg.out_dir << "\n";
  return out.str();
}

void save_config(const std::string& path, const ExperimentConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_config: cannot open " + path);
  out << config_to_string(cfg);
}

}  // namespace fedsim
