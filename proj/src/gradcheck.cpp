#include <cmath>
#include <functional>

#include "fedsim/harness.hpp"
#include "fedsim/objectives.hpp"

namespace fedsim {

namespace {

constexpr double kStep = 1e-5;
constexpr double kRelTol = 1e-4;
constexpr double kAbsFloor = 1e-6;

struct Accumulator {
  double max_rel = 0.0;
  bool pass = true;

  void record(double analytic, double numeric) {
    const double mag = std::max(std::abs(analytic), std::abs(numeric));
    const double err = std::abs(analytic - numeric);
    if (err > std::max(kAbsFloor, kRelTol * mag)) pass = false;
    if (mag > kAbsFloor) max_rel = std::max(max_rel, err / mag);
  }
};

// Central differences of f over every entry of x, compared against grad.
void check_matrix_grad(Matrix& x, const Matrix& grad,
                       const std::function<double()>& f, Accumulator& acc) {
  for (std::size_t t = 0; t < x.size(); ++t) {
    const double keep = x.data()[t];
    x.data()[t] = keep + kStep;
    const double up = f();
    x.data()[t] = keep - kStep;
    const double down = f();
    x.data()[t] = keep;
    acc.record(grad.data()[t], (up - down) / (2.0 * kStep));
  }
}

GradcheckLine check_cross_entropy(std::uint64_t seed, bool corrupt) {
  Accumulator acc;
  for (int trial = 0; trial < 20; ++trial) {
    RngStream rng = RngStream(seed).child(10).child(trial);
    Matrix logits = Matrix::gaussian(6, 5, rng);
    std::vector<int> labels(6);
    for (int& y : labels) y = static_cast<int>(rng.next_below(5));
    Matrix grad = cross_entropy(logits, labels).grad_logits;
    if (corrupt && trial == 0) grad(0, 0) += 1e-2;
    check_matrix_grad(logits, grad,
                      [&] { return cross_entropy(logits, labels).loss; }, acc);
  }
  return {"cross_entropy", acc.max_rel, acc.pass};
}

GradcheckLine check_variance_loss(std::uint64_t seed, bool corrupt) {
  const double c = variance_threshold(4);
  Accumulator acc;
  for (int trial = 0; trial < 20; ++trial) {
    RngStream rng = RngStream(seed).child(11).child(trial);
    Matrix logits = Matrix::gaussian(5, 4, rng);
    // Finite differences are invalid on a hinge kink; skip instances whose
    // column std sits within a few steps of the threshold.
    const auto stds = column_std(row_softmax(logits));
    bool near_kink = false;
    for (double s : stds) near_kink = near_kink || std::abs(s - c) < 50.0 * kStep;
    if (near_kink) continue;
    Matrix grad = variance_loss(logits, c).grad_logits;
    if (corrupt && trial == 0) grad(0, 0) += 1e-2;
    check_matrix_grad(logits, grad, [&] { return variance_loss(logits, c).loss; }, acc);
  }
  return {"variance_loss", acc.max_rel, acc.pass};
}

GradcheckLine check_uniformity_loss(std::uint64_t seed, bool corrupt) {
  Accumulator acc;
  for (int trial = 0; trial < 20; ++trial) {
    RngStream rng = RngStream(seed).child(12).child(trial);
    Matrix reps = Matrix::gaussian(6, 3, rng);
    // Sigma is a constant by definition; freeze it at the base point.
    const UniformityLossResult base = uniformity_loss(reps);
    Matrix grad = base.grad_reps;
    if (corrupt && trial == 0) grad(0, 0) += 1e-2;
    check_matrix_grad(
        reps, grad, [&] { return uniformity_loss_fixed_sigma(reps, base.sigma).loss; }, acc);
  }
  return {"uniformity_loss", acc.max_rel, acc.pass};
}

GradcheckLine check_fedprox(std::uint64_t seed, bool corrupt) {
  MlpConfig cfg;
  cfg.input_dim = 4;
  cfg.encoder_dims = {5};
  cfg.projector_dim = 5;
  cfg.num_classes = 3;
  Accumulator acc;
  for (int trial = 0; trial < 20; ++trial) {
    RngStream rng = RngStream(seed).child(13).child(trial);
    RngStream local_rng = rng.child(0);
    RngStream global_rng = rng.child(1);
    ModelParams local = init_params(cfg, local_rng);
    const ModelParams global = init_params(cfg, global_rng);
    const ProxResult base = fedprox_penalty(local, global, 0.01);
    std::vector<double> flat = local.flatten();
    std::vector<double> grad_flat;
    for (std::size_t li = 0; li < base.grads.weights.size(); ++li) {
      grad_flat.insert(grad_flat.end(), base.grads.weights[li].data().begin(),
                       base.grads.weights[li].data().end());
      grad_flat.insert(grad_flat.end(), base.grads.bias[li].begin(),
                       base.grads.bias[li].end());
    }
    if (corrupt && trial == 0) grad_flat[0] += 1e-2;
    for (std::size_t t = 0; t < flat.size(); ++t) {
      const double keep = flat[t];
      flat[t] = keep + kStep;
      local.unflatten(flat);
      const double up = fedprox_penalty(local, global, 0.01).loss;
      flat[t] = keep - kStep;
      local.unflatten(flat);
      const double down = fedprox_penalty(local, global, 0.01).loss;
      flat[t] = keep;
      local.unflatten(flat);
      acc.record(grad_flat[t], (up - down) / (2.0 * kStep));
    }
  }
  return {"fedprox_penalty", acc.max_rel, acc.pass};
}

GradcheckLine check_feduv_full(std::uint64_t seed, bool corrupt) {
  MlpConfig cfg;
  cfg.input_dim = 6;
  cfg.encoder_dims = {8};
  cfg.projector_dim = 8;
  cfg.num_classes = 4;
  const double c = variance_threshold(cfg.num_classes);
  Accumulator acc;
  for (int trial = 0; trial < 20; ++trial) {
    RngStream rng = RngStream(seed).child(14).child(trial);
    RngStream init_rng = rng.child(0);
    RngStream batch_rng = rng.child(1);
    ModelParams params = init_params(cfg, init_rng);
    const Matrix x = Matrix::gaussian(5, 6, batch_rng);
    std::vector<int> labels(5);
    for (int& y : labels) y = static_cast<int>(batch_rng.next_below(4));

    LossWeights weights;
    weights.mu = 0.5;
    weights.lambda = 1.0;
    weights.sigma_override = 0.5;  // fixed bandwidth so finite differences apply
    const ForwardCache base_cache = forward(params, x);

    auto loss_at = [&] {
      const ForwardCache cache = forward(params, x);
      return feduv_loss(cache, labels, weights, c).breakdown.total;
    };

    // Skip instances where a ReLU or the hinge sits on its kink.
    bool near_kink = false;
    for (std::size_t li = 0; li + 1 < params.layers.size(); ++li) {
      if (!params.layers[li].relu) continue;
      for (double z : base_cache.pre[li].data()) {
        near_kink = near_kink || std::abs(z) < 50.0 * kStep;
      }
    }
    for (double s : column_std(row_softmax(base_cache.logits()))) {
      near_kink = near_kink || std::abs(s - c) < 50.0 * kStep;
    }
    if (near_kink) continue;

    const FeduvLossResult loss = feduv_loss(base_cache, labels, weights, c);
    const Gradients grads = backward(params, base_cache, loss.grad_logits, loss.grad_reps);
    std::vector<double> grad_flat;
    for (std::size_t li = 0; li < grads.weights.size(); ++li) {
      grad_flat.insert(grad_flat.end(), grads.weights[li].data().begin(),
                       grads.weights[li].data().end());
      grad_flat.insert(grad_flat.end(), grads.bias[li].begin(), grads.bias[li].end());
    }
    if (corrupt && trial == 0) grad_flat[0] += 1e-2;

    std::vector<double> flat = params.flatten();
    for (std::size_t t = 0; t < flat.size(); ++t) {
      const double keep = flat[t];
      flat[t] = keep + kStep;
      params.unflatten(flat);
      const double up = loss_at();
      flat[t] = keep - kStep;
      params.unflatten(flat);
      const double down = loss_at();
      flat[t] = keep;
      params.unflatten(flat);
      acc.record(grad_flat[t], (up - down) / (2.0 * kStep));
    }
  }
  return {"feduv_full_network", acc.max_rel, acc.pass};
}

}  // namespace

GradcheckReport run_gradcheck(std::uint64_t seed, bool corrupt) {
  GradcheckReport report;
  report.lines.push_back(check_cross_entropy(seed, corrupt));
  report.lines.push_back(check_variance_loss(seed, corrupt));
  report.lines.push_back(check_uniformity_loss(seed, corrupt));
  report.lines.push_back(check_fedprox(seed, corrupt));
  report.lines.push_back(check_feduv_full(seed, corrupt));
  report.all_pass = true;
  for (const GradcheckLine& line : report.lines) report.all_pass = report.all_pass && line.pass;
  return report;
}

}  // namespace fedsim
