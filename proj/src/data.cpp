#include "fedsim/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fedsim {

void Dataset::validate() const {
  if (features.rows() != labels.size()) {
    throw std::invalid_argument("Dataset: feature rows and label count differ");
  }
  if (!domain_tags.empty() && domain_tags.size() != labels.size()) {
    throw std::invalid_argument("Dataset: domain tag count differs from sample count");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw std::invalid_argument("Dataset: label out of range");
    }
  }
}

void PartitionPlan::validate(std::size_t n) const {
  std::vector<char> seen(n, 0);
  std::size_t total = 0;
  for (const auto& client : assignments) {
    for (std::size_t idx : client) {
      if (idx >= n || seen[idx]) {
        throw std::invalid_argument("PartitionPlan: not an exact partition");
      }
      seen[idx] = 1;
      ++total;
    }
  }
  if (total != n) {
    throw std::invalid_argument("PartitionPlan: not an exact partition");
  }
}

Dataset gen_blobs(const SyntheticSpec& spec, RngStream& rng) {
  if (spec.num_classes < 1 || spec.input_dim < 2 || spec.samples_per_class < 1 ||
      spec.cluster_spread < 0.0 || spec.class_mean_scale <= 0.0) {
    throw std::invalid_argument("gen_blobs: invalid spec");
  }
  const std::size_t n = spec.num_classes * spec.samples_per_class;
  Dataset ds;
  ds.num_classes = spec.num_classes;
  ds.features = Matrix(n, spec.input_dim);
  ds.labels.resize(n);

  RngStream mean_rng = rng.child(0);
  RngStream sample_rng = rng.child(1);

  Matrix means(spec.num_classes, spec.input_dim);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    double norm = 0.0;
    while (norm < 1e-12) {
      norm = 0.0;
      for (std::size_t j = 0; j < spec.input_dim; ++j) {
        means(c, j) = mean_rng.next_gaussian();
        norm += means(c, j) * means(c, j);
      }
      norm = std::sqrt(norm);
    }
    for (std::size_t j = 0; j < spec.input_dim; ++j) {
      means(c, j) *= spec.class_mean_scale / norm;
    }
  }

  std::size_t row = 0;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s, ++row) {
      ds.labels[row] = static_cast<int>(c);
      for (std::size_t j = 0; j < spec.input_dim; ++j) {
        ds.features(row, j) = means(c, j) + spec.cluster_spread * sample_rng.next_gaussian();
      }
    }
  }
  return ds;
}

Dataset apply_domain_shift(const Dataset& ds, const std::vector<DomainTransform>& transforms,
                           RngStream& rng) {
  if (transforms.empty()) {
    throw std::invalid_argument("apply_domain_shift: no transforms");
  }
  const std::size_t dim = ds.features.cols();
  for (const DomainTransform& t : transforms) {
    if (t.scale <= 0.0) throw std::invalid_argument("apply_domain_shift: scale must be > 0");
    if (t.rot_dim_a == t.rot_dim_b || t.rot_dim_a >= dim || t.rot_dim_b >= dim) {
      throw std::invalid_argument("apply_domain_shift: bad rotation plane");
    }
    if (!t.bias.empty() && t.bias.size() != dim) {
      throw std::invalid_argument("apply_domain_shift: bias length mismatch");
    }
  }

  Dataset out = ds;
  out.domain_tags.assign(ds.size(), 0);

  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const std::size_t domains = transforms.size();
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    out.domain_tags[order[pos]] = static_cast<int>(pos % domains);
  }

  for (std::size_t i = 0; i < out.size(); ++i) {
    const DomainTransform& t = transforms[out.domain_tags[i]];
    double* row = out.features.row_ptr(i);
    const double c = std::cos(t.angle);
    const double s = std::sin(t.angle);
    const double a = row[t.rot_dim_a];
    const double b = row[t.rot_dim_b];
    row[t.rot_dim_a] = c * a - s * b;
    row[t.rot_dim_b] = s * a + c * b;
    for (std::size_t j = 0; j < dim; ++j) {
      row[j] *= t.scale;
      if (!t.bias.empty()) row[j] += t.bias[j];
    }
  }
  return out;
}

double sample_gamma(double alpha, RngStream& rng) {
  if (alpha <= 0.0) throw std::invalid_argument("sample_gamma: alpha must be > 0");
  if (alpha < 1.0) {
    const double u = rng.next_double_pos();
    return sample_gamma(alpha + 1.0, rng) * std::pow(u, 1.0 / alpha);
  }
  const double d = alpha - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = rng.next_gaussian();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.next_double_pos();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

namespace {

// Deal n items into num_clients buckets with the given proportions, using
// cumulative floor boundaries so counts match the proportions exactly.
std::vector<std::size_t> proportional_counts(std::size_t n, const std::vector<double>& props) {
  std::vector<std::size_t> counts(props.size(), 0);
  double cum = 0.0;
  std::size_t prev = 0;
  for (std::size_t k = 0; k < props.size(); ++k) {
    cum += props[k];
    std::size_t edge = (k + 1 == props.size())
                           ? n
                           : static_cast<std::size_t>(std::floor(cum * static_cast<double>(n)));
    edge = std::min(edge, n);
    counts[k] = edge - prev;
    prev = edge;
  }
  return counts;
}

}  // namespace

PartitionPlan dirichlet_partition(const std::vector<int>& labels, std::size_t num_clients,
                                  double alpha, RngStream& rng,
                                  std::vector<std::string>* log) {
  const std::size_t n = labels.size();
  if (num_clients < 1) throw std::invalid_argument("dirichlet_partition: need >= 1 client");
  if (num_clients > n) {
    throw std::invalid_argument("dirichlet_partition: more clients than samples");
  }
  if (alpha <= 0.0) throw std::invalid_argument("dirichlet_partition: alpha must be > 0");

  int num_classes = 0;
  for (int y : labels) num_classes = std::max(num_classes, y + 1);
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < n; ++i) by_class[labels[i]].push_back(i);

  PartitionPlan plan;
  plan.kind = PartitionKind::dirichlet;
  plan.alpha = alpha;

  constexpr int kMaxAttempts = 100;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    RngStream attempt_rng = rng.child(static_cast<std::uint64_t>(attempt));
    std::vector<std::vector<std::size_t>> assignments(num_clients);
    for (int c = 0; c < num_classes; ++c) {
      std::vector<std::size_t> idx = by_class[c];
      RngStream class_rng = attempt_rng.child(static_cast<std::uint64_t>(c));
      class_rng.shuffle(idx);

      std::vector<double> props(num_clients);
      double sum = 0.0;
      for (std::size_t k = 0; k < num_clients; ++k) {
        props[k] = sample_gamma(alpha, class_rng);
        sum += props[k];
      }
      if (sum <= 1e-300) {
        // All gammas underflowed (possible at tiny alpha): one client takes all.
        std::fill(props.begin(), props.end(), 0.0);
        props[class_rng.next_below(num_clients)] = 1.0;
      } else {
        for (double& p : props) p /= sum;
      }

      const std::vector<std::size_t> counts = proportional_counts(idx.size(), props);
      std::size_t pos = 0;
      for (std::size_t k = 0; k < num_clients; ++k) {
        assignments[k].insert(assignments[k].end(), idx.begin() + pos,
                              idx.begin() + pos + counts[k]);
        pos += counts[k];
      }
    }

    const bool any_empty = std::any_of(assignments.begin(), assignments.end(),
                                       [](const auto& a) { return a.empty(); });
    if (!any_empty) {
      plan.assignments = std::move(assignments);
      plan.validate(n);
      return plan;
    }
    if (attempt + 1 == kMaxAttempts) {
      // Backfill: move one sample from the currently largest client into each
      // empty one.
      for (std::size_t k = 0; k < num_clients; ++k) {
        if (!assignments[k].empty()) continue;
        std::size_t donor = 0;
        for (std::size_t j = 1; j < num_clients; ++j) {
          if (assignments[j].size() > assignments[donor].size()) donor = j;
        }
        if (assignments[donor].size() < 2) {
          throw std::runtime_error("dirichlet_partition: cannot backfill empty client");
        }
        assignments[k].push_back(assignments[donor].back());
        assignments[donor].pop_back();
        if (log) {
          log->push_back("dirichlet_partition: backfilled client " + std::to_string(k) +
                         " with one sample from client " + std::to_string(donor));
        }
      }
      plan.assignments = std::move(assignments);
      plan.validate(n);
      return plan;
    }
    if (log) {
      log->push_back("dirichlet_partition: attempt " + std::to_string(attempt) +
                     " left a client empty; resampling");
    }
  }
  throw std::runtime_error("dirichlet_partition: unreachable");
}

PartitionPlan iid_partition(std::size_t num_samples, std::size_t num_clients, RngStream& rng) {
  if (num_clients < 1) throw std::invalid_argument("iid_partition: need >= 1 client");
  if (num_clients > num_samples) {
    throw std::invalid_argument("iid_partition: more clients than samples");
  }
  std::vector<std::size_t> order(num_samples);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  PartitionPlan plan;
  plan.kind = PartitionKind::iid;
  plan.assignments.resize(num_clients);
  for (std::size_t pos = 0; pos < num_samples; ++pos) {
    plan.assignments[pos % num_clients].push_back(order[pos]);
  }
  plan.validate(num_samples);
  return plan;
}

PartitionPlan by_domain_partition(const Dataset& ds, std::size_t num_clients) {
  if (ds.domain_tags.empty()) {
    throw std::invalid_argument("by_domain_partition: dataset has no domain tags");
  }
  std::vector<char> present;
  for (int t : ds.domain_tags) {
    if (t < 0) throw std::invalid_argument("by_domain_partition: negative domain tag");
    if (static_cast<std::size_t>(t) >= present.size()) present.resize(t + 1, 0);
    present[t] = 1;
  }
  const std::size_t distinct = std::count(present.begin(), present.end(), 1);
  if (present.size() != num_clients || distinct != num_clients) {
    throw std::invalid_argument("by_domain_partition: dataset has " +
                                std::to_string(distinct) + " domains, expected " +
                                std::to_string(num_clients));
  }
  PartitionPlan plan;
  plan.kind = PartitionKind::by_domain;
  plan.assignments.resize(num_clients);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    plan.assignments[ds.domain_tags[i]].push_back(i);
  }
  plan.validate(ds.size());
  return plan;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, double test_fraction,
                                             RngStream& rng) {
  if (test_fraction <= 0.0 || test_fraction >= 1.0) {
    throw std::invalid_argument("split_train_test: fraction must be in (0, 1)");
  }
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_idx;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.size() < 2) {
      throw std::invalid_argument("split_train_test: class " + std::to_string(c) +
                                  " has fewer than 2 samples");
    }
    RngStream class_rng = rng.child(c);
    class_rng.shuffle(idx);
    std::size_t n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(idx.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, idx.size() - 1);
    test_idx.insert(test_idx.end(), idx.begin(), idx.begin() + n_test);
    train_idx.insert(train_idx.end(), idx.begin() + n_test, idx.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());

  auto gather = [&ds](const std::vector<std::size_t>& idx) {
    Dataset out;
    out.num_classes = ds.num_classes;
    out.features = Matrix(idx.size(), ds.features.cols());
    out.labels.resize(idx.size());
    if (!ds.domain_tags.empty()) out.domain_tags.resize(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const double* src = ds.features.row_ptr(idx[r]);
      std::copy(src, src + ds.features.cols(), out.features.row_ptr(r));
      out.labels[r] = ds.labels[idx[r]];
      if (!ds.domain_tags.empty()) out.domain_tags[r] = ds.domain_tags[idx[r]];
    }
    return out;
  };
  return {gather(train_idx), gather(test_idx)};
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

}  // namespace

Dataset load_csv_dataset(const std::string& path, const CsvSchema& schema,
                         std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv_dataset: cannot open " + path);

  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw std::runtime_error("load_csv_dataset: " + path + " is empty");

  std::size_t first_data = 0;
  std::vector<std::string> header;
  if (schema.has_header) {
    header = split_csv_line(lines[0]);
    first_data = 1;
    if (lines.size() == 1) {
      throw std::runtime_error("load_csv_dataset: " + path + " has a header but no rows");
    }
  }

  const std::size_t width = split_csv_line(lines[first_data]).size();
  auto column_index = [&](const std::string& name) -> std::size_t {
    if (schema.has_header) {
      for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) return i;
      }
    }
    try {
      const std::size_t idx = std::stoul(name);
      if (idx < width) return idx;
    } catch (...) {
    }
    throw std::runtime_error("load_csv_dataset: column '" + name + "' not found");
  };

  const std::size_t label_col = column_index(schema.label_column);
  std::vector<std::size_t> feature_cols;
  if (schema.feature_columns.empty()) {
    for (std::size_t i = 0; i < width; ++i) {
      if (i != label_col) feature_cols.push_back(i);
    }
  } else {
    for (const std::string& name : schema.feature_columns) {
      feature_cols.push_back(column_index(name));
    }
  }
  if (feature_cols.empty()) {
    throw std::runtime_error("load_csv_dataset: no feature columns");
  }

  const std::size_t n = lines.size() - first_data;
  Dataset ds;
  ds.features = Matrix(n, feature_cols.size());
  ds.labels.resize(n);

  int max_label = -1;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t line_no = first_data + r + 1;  // 1-based for messages
    const std::vector<std::string> fields = split_csv_line(lines[first_data + r]);
    if (fields.size() != width) {
      throw std::runtime_error("load_csv_dataset: line " + std::to_string(line_no) +
                               ": expected " + std::to_string(width) + " fields, got " +
                               std::to_string(fields.size()));
    }
    auto parse_double = [&](std::size_t col) {
      std::size_t used = 0;
      double v;
      try {
        v = std::stod(fields[col], &used);
      } catch (...) {
        throw std::runtime_error("load_csv_dataset: line " + std::to_string(line_no) +
                                 ": cannot parse '" + fields[col] + "'");
      }
      if (used != fields[col].size()) {
        throw std::runtime_error("load_csv_dataset: line " + std::to_string(line_no) +
                                 ": trailing characters in '" + fields[col] + "'");
      }
      return v;
    };
    const double label_val = parse_double(label_col);
    const int label = static_cast<int>(label_val);
    if (label < 0 || static_cast<double>(label) != label_val) {
      throw std::runtime_error("load_csv_dataset: line " + std::to_string(line_no) +
                               ": label must be a nonnegative integer");
    }
    ds.labels[r] = label;
    max_label = std::max(max_label, label);
    for (std::size_t j = 0; j < feature_cols.size(); ++j) {
      ds.features(r, j) = parse_double(feature_cols[j]);
    }
  }
  ds.num_classes = static_cast<std::size_t>(max_label) + 1;

  std::vector<char> seen(ds.num_classes, 0);
  for (int y : ds.labels) seen[y] = 1;
  for (std::size_t c = 0; c < seen.size(); ++c) {
    if (!seen[c] && warnings) {
      warnings->push_back("load_csv_dataset: label space not contiguous, class " +
                          std::to_string(c) + " absent");
    }
  }
  ds.validate();
  return ds;
}

void save_csv_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_csv_dataset: cannot open " + path);
  out << "label";
  for (std::size_t j = 0; j < ds.features.cols(); ++j) out << ",f" << j;
  out << "\n";
  char buf[32];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    for (std::size_t j = 0; j < ds.features.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", ds.features(i, j));
      out << ',' << buf;
    }
    out << "\n";
  }
}

std::vector<std::vector<std::size_t>> batches(const std::vector<std::size_t>& indices,
                                              std::size_t batch_size, RngStream& rng,
                                              bool* short_batch) {
  if (indices.empty()) throw std::invalid_argument("batches: empty index list");
  if (batch_size < 1) throw std::invalid_argument("batches: batch size must be >= 1");
  std::vector<std::size_t> order = indices;
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t pos = 0; pos < order.size(); pos += batch_size) {
    const std::size_t end = std::min(pos + batch_size, order.size());
    out.emplace_back(order.begin() + pos, order.begin() + end);
    if (short_batch && end - pos < 2) *short_batch = true;
  }
  return out;
}

}  // namespace fedsim
