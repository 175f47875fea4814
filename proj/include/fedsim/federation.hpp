#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fedsim/data.hpp"
#include "fedsim/model.hpp"
#include "fedsim/objectives.hpp"

namespace fedsim {

enum class StrategyKind { fedavg, fedprox, freeze, feduv };

const char* strategy_name(StrategyKind kind);
StrategyKind strategy_from_name(const std::string& name);

struct Strategy {
  StrategyKind kind = StrategyKind::fedavg;
  double mu_prox = 0.01;  // fedprox proximal strength
  LossWeights uv;         // feduv weights

  void validate() const;
};

struct RoundConfig {
  std::size_t rounds = 30;
  std::size_t local_epochs = 10;
  std::size_t num_clients = 10;
  double participation = 1.0;  // rho in (0, 1]
  std::size_t batch_size = 64;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  std::uint64_t seed = 0;
  Strategy strategy;

  std::size_t participants_per_round() const;
  void validate() const;
};

struct ClientState {
  std::size_t client_id = 0;
  std::vector<std::size_t> indices;

  std::size_t sample_count() const { return indices.size(); }
};

struct RoundReport {
  std::size_t round = 0;
  std::vector<std::size_t> participants;
  std::vector<LossBreakdown> client_stats;  // parallel to participants
  LossBreakdown mean_stats;                 // sample-count weighted across participants
  double test_accuracy = 0.0;
  std::vector<double> classifier_singular_values;  // descending
  double sv_mean = 0.0;
  double wall_seconds = 0.0;
};

// Labels for deriving the per-purpose random streams from the experiment
// seed, so every drawn value is a pure function of (seed, round, client).
namespace stream_label {
inline constexpr std::uint64_t kDataset = 0x64617461;    // dataset generation
inline constexpr std::uint64_t kDomain = 0x646f6d6e;     // domain assignment
inline constexpr std::uint64_t kSplit = 0x73706c74;      // train/test split
inline constexpr std::uint64_t kPartition = 0x70617274;  // client partition
inline constexpr std::uint64_t kInit = 0x696e6974;       // weight init
inline constexpr std::uint64_t kFreeze = 0x66727a65;     // orthonormal classifier
inline constexpr std::uint64_t kSampling = 0x73616d70;   // participant sampling
inline constexpr std::uint64_t kClient = 0x636c6e74;     // local training
}  // namespace stream_label

// Uniform sample without replacement of ceil(rho * num_clients) ids, ascending.
std::vector<std::size_t> sample_participants(std::size_t num_clients, double rho,
                                             RngStream& rng);

struct LocalTrainResult {
  ModelParams params;
  LossBreakdown stats;  // averaged over all local batches
};

// Copies the global parameters and runs local_epochs of mini-batch SGD with
// the strategy's objective, starting from fresh momentum buffers.
LocalTrainResult local_train(const ModelParams& global, const ClientState& client,
                             const Dataset& train, const RoundConfig& cfg, RngStream rng);

// Parameter-wise weighted mean with weights n_k / sum(n_k). Deltas are
// accumulated against the first update so averaging identical models is a
// bit-exact identity.
ModelParams aggregate(const std::vector<ModelParams>& models,
                      const std::vector<std::size_t>& sample_counts);

// Fraction of test samples whose argmax logit matches the label; ties break
// toward the smallest class index.
double evaluate(const ModelParams& params, const Dataset& test);

// The four-step round loop: broadcast, local training, upload, weighted
// averaging; repeated cfg.rounds times. Participating clients may train on up
// to `workers` threads; reports are identical for any worker count. When
// final_params is non-null it receives the last aggregated global model.
std::vector<RoundReport> run_experiment(const RoundConfig& cfg, const MlpConfig& model_cfg,
                                        const Dataset& train, const Dataset& test,
                                        const PartitionPlan& plan, std::size_t workers = 1,
                                        ModelParams* final_params = nullptr);

}  // namespace fedsim
