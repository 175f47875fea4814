#include "fedsim/federation.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "fedsim/svd.hpp"

namespace fedsim {

const char* strategy_name(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::fedavg: return "fedavg";
    case StrategyKind::fedprox: return "fedprox";
    case StrategyKind::freeze: return "freeze";
    case StrategyKind::feduv: return "feduv";
  }
  return "unknown";
}

StrategyKind strategy_from_name(const std::string& name) {
  if (name == "fedavg") return StrategyKind::fedavg;
  if (name == "fedprox") return StrategyKind::fedprox;
  if (name == "freeze") return StrategyKind::freeze;
  if (name == "feduv") return StrategyKind::feduv;
  throw std::invalid_argument("unknown strategy '" + name + "'");
}

void Strategy::validate() const {
  if (mu_prox < 0.0) throw std::invalid_argument("strategy: mu_prox must be >= 0");
  if (uv.mu < 0.0 || uv.lambda < 0.0) {
    throw std::invalid_argument("strategy: loss weights must be >= 0");
  }
}

std::size_t RoundConfig::participants_per_round() const {
  return static_cast<std::size_t>(
      std::ceil(participation * static_cast<double>(num_clients)));
}

void RoundConfig::validate() const {
  if (rounds < 1) throw std::invalid_argument("config: rounds must be >= 1");
  if (local_epochs < 1) throw std::invalid_argument("config: local_epochs must be >= 1");
  if (num_clients < 1) throw std::invalid_argument("config: clients must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
  if (participation <= 0.0 || participation > 1.0) {
    throw std::invalid_argument("config: participation must be in (0, 1]");
  }
  if (lr <= 0.0) throw std::invalid_argument("config: lr must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw std::invalid_argument("config: momentum must be in [0, 1)");
  }
  if (weight_decay < 0.0) throw std::invalid_argument("config: weight_decay must be >= 0");
  strategy.validate();
}

std::vector<std::size_t> sample_participants(std::size_t num_clients, double rho,
                                             RngStream& rng) {
  const std::size_t m = static_cast<std::size_t>(
      std::ceil(rho * static_cast<double>(num_clients)));
  std::vector<std::size_t> ids(num_clients);
  std::iota(ids.begin(), ids.end(), 0);
  // Partial Fisher-Yates: the first m slots become the sample.
  for (std::size_t i = 0; i < m && i + 1 < num_clients; ++i) {
    const std::size_t j = i + rng.next_below(num_clients - i);
    std::swap(ids[i], ids[j]);
  }
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return ids;
}

namespace {

Matrix gather_rows(const Matrix& src, const std::vector<std::size_t>& idx) {
  Matrix out(idx.size(), src.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const double* from = src.row_ptr(idx[r]);
    std::copy(from, from + src.cols(), out.row_ptr(r));
  }
  return out;
}

}  // namespace

LocalTrainResult local_train(const ModelParams& global, const ClientState& client,
                             const Dataset& train, const RoundConfig& cfg, RngStream rng) {
  if (client.indices.empty()) {
    throw std::invalid_argument("local_train: client has no samples");
  }
  LocalTrainResult result;
  result.params = global;
  SgdState opt = SgdState::make(result.params, cfg.lr, cfg.momentum, cfg.weight_decay);

  const Strategy& strat = cfg.strategy;
  const double c = variance_threshold(train.num_classes);
  LossWeights weights = strat.uv;
  if (strat.kind != StrategyKind::feduv) {
    weights.mu = 0.0;
    weights.lambda = 0.0;
  }

  LossBreakdown sum;
  std::size_t batches_seen = 0;

  bool short_batch = false;
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    RngStream epoch_rng = rng.child(epoch);
    const auto epoch_batches = batches(client.indices, cfg.batch_size, epoch_rng, &short_batch);
    for (const auto& batch_idx : epoch_batches) {
      const Matrix x = gather_rows(train.features, batch_idx);
      std::vector<int> y(batch_idx.size());
      for (std::size_t i = 0; i < batch_idx.size(); ++i) y[i] = train.labels[batch_idx[i]];

      const ForwardCache cache = forward(result.params, x);
      // The breakdown always carries l_v and l_u (at zero weight for the
      // non-feduv strategies) so runs stay comparable in the metrics.
      FeduvLossResult loss = feduv_loss(cache, y, weights, c);

      Gradients grads = backward(result.params, cache, loss.grad_logits, loss.grad_reps);

      if (strat.kind == StrategyKind::fedprox) {
        const ProxResult prox = fedprox_penalty(result.params, global, strat.mu_prox);
        loss.breakdown.prox = prox.loss;
        loss.breakdown.total += prox.loss;
        for (std::size_t li = 0; li < grads.weights.size(); ++li) {
          if (result.params.layers[li].frozen) continue;
          for (std::size_t t = 0; t < grads.weights[li].size(); ++t) {
            grads.weights[li].data()[t] += prox.grads.weights[li].data()[t];
          }
          for (std::size_t t = 0; t < grads.bias[li].size(); ++t) {
            grads.bias[li][t] += prox.grads.bias[li][t];
          }
        }
      }

      if (!std::isfinite(loss.breakdown.total)) {
        throw std::runtime_error("local_train: non-finite loss on client " +
                                 std::to_string(client.client_id));
      }

      sgd_step(result.params, grads, opt);

      sum.ce += loss.breakdown.ce;
      sum.l_v += loss.breakdown.l_v;
      sum.l_u += loss.breakdown.l_u;
      sum.prox += loss.breakdown.prox;
      sum.total += loss.breakdown.total;
      ++batches_seen;
    }
  }

  if (short_batch) {
    std::fprintf(stderr,
                 "warning: client %zu saw a single-sample batch; its variance "
                 "loss is the degenerate constant there\n",
                 client.client_id);
  }
  if (batches_seen > 0) {
    const double inv = 1.0 / static_cast<double>(batches_seen);
    result.stats = {sum.ce * inv, sum.l_v * inv, sum.l_u * inv, sum.prox * inv,
                    sum.total * inv};
  }
  return result;
}

ModelParams aggregate(const std::vector<ModelParams>& models,
                      const std::vector<std::size_t>& sample_counts) {
  if (models.empty()) throw std::invalid_argument("aggregate: no updates");
  if (models.size() != sample_counts.size()) {
    throw std::invalid_argument("aggregate: counts do not match updates");
  }
  for (const ModelParams& m : models) {
    if (!m.congruent_with(models.front())) {
      throw std::invalid_argument("aggregate: incongruent parameter shapes");
    }
  }
  if (models.size() == 1) return models.front();

  double total = 0.0;
  for (std::size_t n : sample_counts) total += static_cast<double>(n);
  if (total <= 0.0) throw std::invalid_argument("aggregate: zero total samples");

  // Weighted mean written as anchor + sum(n_k (theta_k - anchor)) / sum(n_k):
  // identical updates have all-zero deltas, which keeps the result bit-exact.
  ModelParams out = models.front();
  for (std::size_t li = 0; li < out.layers.size(); ++li) {
    auto accumulate = [&](auto get_span) {
      auto& anchor = get_span(out.layers[li]);
      std::vector<double> acc(anchor.size(), 0.0);
      for (std::size_t k = 0; k < models.size(); ++k) {
        const double w = static_cast<double>(sample_counts[k]);
        const auto& src = get_span(models[k].layers[li]);
        for (std::size_t t = 0; t < acc.size(); ++t) {
          acc[t] += w * (src[t] - anchor[t]);
        }
      }
      for (std::size_t t = 0; t < acc.size(); ++t) {
        if (acc[t] != 0.0) anchor[t] += acc[t] / total;
      }
    };
    accumulate([](auto& layer) -> auto& { return layer.weights.data(); });
    accumulate([](auto& layer) -> auto& { return layer.bias; });
  }
  return out;
}

double evaluate(const ModelParams& params, const Dataset& test) {
  if (test.size() == 0) throw std::invalid_argument("evaluate: empty test set");
  constexpr std::size_t kChunk = 512;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < test.size(); start += kChunk) {
    const std::size_t end = std::min(start + kChunk, test.size());
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Matrix x = gather_rows(test.features, idx);
    const ForwardCache cache = forward(params, x);
    const Matrix& logits = cache.logits();
    for (std::size_t i = 0; i < logits.rows(); ++i) {
      const double* row = logits.row_ptr(i);
      std::size_t best = 0;
      for (std::size_t j = 1; j < logits.cols(); ++j) {
        if (row[j] > row[best]) best = j;
      }
      if (static_cast<int>(best) == test.labels[start + i]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

std::vector<RoundReport> run_experiment(const RoundConfig& cfg, const MlpConfig& model_cfg,
                                        const Dataset& train, const Dataset& test,
                                        const PartitionPlan& plan, std::size_t workers,
                                        ModelParams* final_params) {
  cfg.validate();
  model_cfg.validate();
  if (plan.clients() != cfg.num_clients) {
    throw std::invalid_argument("run_experiment: plan has " +
                                std::to_string(plan.clients()) + " clients, config says " +
                                std::to_string(cfg.num_clients));
  }
  plan.validate(train.size());
  if (workers < 1) workers = 1;

  std::vector<ClientState> clients(cfg.num_clients);
  for (std::size_t k = 0; k < cfg.num_clients; ++k) {
    clients[k] = ClientState{k, plan.assignments[k]};
  }

  const RngStream root(cfg.seed);
  RngStream init_rng = root.child(stream_label::kInit);
  ModelParams global = init_params(model_cfg, init_rng);
  if (cfg.strategy.kind == StrategyKind::freeze) {
    RngStream freeze_rng = root.child(stream_label::kFreeze);
    global = freeze_classifier(std::move(global), freeze_rng);
  }

  std::vector<RoundReport> reports;
  reports.reserve(cfg.rounds);

  for (std::size_t round = 0; round < cfg.rounds; ++round) {
    const auto t0 = std::chrono::steady_clock::now();
    RoundReport report;
    report.round = round;

    RngStream sampling_rng = root.child(stream_label::kSampling).child(round);
    report.participants = sample_participants(cfg.num_clients, cfg.participation,
                                              sampling_rng);

    const std::size_t m = report.participants.size();
    std::vector<LocalTrainResult> results(m);
    auto train_one = [&](std::size_t slot) {
      const std::size_t k = report.participants[slot];
      RngStream client_rng =
          root.child(stream_label::kClient).child(round).child(k);
      results[slot] = local_train(global, clients[k], train, cfg, client_rng);
    };
    if (workers == 1 || m <= 1) {
      for (std::size_t slot = 0; slot < m; ++slot) train_one(slot);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::thread> pool;
      const std::size_t n_threads = std::min(workers, m);
      pool.reserve(n_threads);
      for (std::size_t t = 0; t < n_threads; ++t) {
        pool.emplace_back([&] {
          for (;;) {
            const std::size_t slot = next.fetch_add(1);
            if (slot >= m) return;
            train_one(slot);
          }
        });
      }
      for (std::thread& t : pool) t.join();
    }

    std::vector<ModelParams> updates;
    std::vector<std::size_t> counts;
    updates.reserve(m);
    counts.reserve(m);
    double weight_total = 0.0;
    for (std::size_t slot = 0; slot < m; ++slot) {
      const std::size_t k = report.participants[slot];
      updates.push_back(std::move(results[slot].params));
      counts.push_back(clients[k].sample_count());
      report.client_stats.push_back(results[slot].stats);
      const double w = static_cast<double>(clients[k].sample_count());
      report.mean_stats.ce += w * results[slot].stats.ce;
      report.mean_stats.l_v += w * results[slot].stats.l_v;
      report.mean_stats.l_u += w * results[slot].stats.l_u;
      report.mean_stats.prox += w * results[slot].stats.prox;
      report.mean_stats.total += w * results[slot].stats.total;
      weight_total += w;
    }
    report.mean_stats.ce /= weight_total;
    report.mean_stats.l_v /= weight_total;
    report.mean_stats.l_u /= weight_total;
    report.mean_stats.prox /= weight_total;
    report.mean_stats.total /= weight_total;

    global = aggregate(updates, counts);

    report.test_accuracy = evaluate(global, test);
    report.classifier_singular_values = svd_values(global.classifier().weights);
    double sv_sum = 0.0;
    for (double s : report.classifier_singular_values) sv_sum += s;
    report.sv_mean = sv_sum / static_cast<double>(report.classifier_singular_values.size());

    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    reports.push_back(std::move(report));
  }
  if (final_params) *final_params = std::move(global);
  return reports;
}

}  // namespace fedsim
