#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedsim/matrix.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

struct Dataset {
  Matrix features;  // N x input_dim
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::vector<int> domain_tags;  // empty, or one tag per sample

  std::size_t size() const { return labels.size(); }
  void validate() const;  // throws std::invalid_argument
};

struct SyntheticSpec {
  std::size_t num_classes = 10;
  std::size_t input_dim = 32;
  std::size_t samples_per_class = 500;
  double cluster_spread = 2.5;    // Gaussian std around each class mean
  double class_mean_scale = 3.0;  // radius of the sphere the means live on
};

// Rotation in one coordinate plane, then uniform scale, then bias.
struct DomainTransform {
  std::size_t rot_dim_a = 0;
  std::size_t rot_dim_b = 1;
  double angle = 0.0;
  double scale = 1.0;
  std::vector<double> bias;  // empty means zero
};

enum class PartitionKind { dirichlet, iid, by_domain };

struct PartitionPlan {
  std::vector<std::vector<std::size_t>> assignments;  // per-client sample indices
  PartitionKind kind = PartitionKind::iid;
  std::optional<double> alpha;

  std::size_t clients() const { return assignments.size(); }
  // Exact-partition check: disjoint index lists covering [0, n).
  void validate(std::size_t n) const;
};

Dataset gen_blobs(const SyntheticSpec& spec, RngStream& rng);

// Splits samples evenly and randomly into |transforms| domains and applies
// each domain's transform to its samples. Labels are untouched.
Dataset apply_domain_shift(const Dataset& ds, const std::vector<DomainTransform>& transforms,
                           RngStream& rng);

// Per class, client proportions are drawn from Dir(alpha * 1_K) and the
// class's samples dealt accordingly. Resamples (up to 100 times) if a client
// ends up empty, then backfills one sample from the largest client.
PartitionPlan dirichlet_partition(const std::vector<int>& labels, std::size_t num_clients,
                                  double alpha, RngStream& rng,
                                  std::vector<std::string>* log = nullptr);

PartitionPlan iid_partition(std::size_t num_samples, std::size_t num_clients, RngStream& rng);

// Client k receives exactly the samples tagged with domain k.
PartitionPlan by_domain_partition(const Dataset& ds, std::size_t num_clients);

// Stratified by class; each class keeps at least one sample on both sides.
std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, double test_fraction,
                                             RngStream& rng);

struct CsvSchema {
  bool has_header = false;
  // Column name (requires a header) or a 0-based index in decimal.
  std::string label_column = "label";
  // Empty means every non-label column, in file order.
  std::vector<std::string> feature_columns;
};

Dataset load_csv_dataset(const std::string& path, const CsvSchema& schema,
                         std::vector<std::string>* warnings = nullptr);
void save_csv_dataset(const std::string& path, const Dataset& ds);

// Shuffled index batches for one epoch; every index appears exactly once.
// Any batch of size 1 sets *short_batch (the variance loss degenerates there).
std::vector<std::vector<std::size_t>> batches(const std::vector<std::size_t>& indices,
                                              std::size_t batch_size, RngStream& rng,
                                              bool* short_batch = nullptr);

// Gamma(alpha, 1) via Marsaglia-Tsang, deterministic under the stream.
double sample_gamma(double alpha, RngStream& rng);

}  // namespace fedsim
