#include "fedsim/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fedsim {

double variance_threshold(std::size_t num_classes) {
  if (num_classes < 2) {
    throw std::invalid_argument("variance_threshold: need at least 2 classes");
  }
  const std::vector<double> stds = column_std(Matrix::identity(num_classes));
  double sum = 0.0;
  for (double s : stds) sum += s;
  return sum / static_cast<double>(num_classes);
}

CrossEntropyResult cross_entropy(const Matrix& logits, const std::vector<int>& labels) {
  const std::size_t batch = logits.rows();
  const std::size_t classes = logits.cols();
  if (batch == 0) throw std::invalid_argument("cross_entropy: empty batch");
  if (labels.size() != batch) {
    throw std::invalid_argument("cross_entropy: labels length mismatch");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) +
                                  " out of range [0, " + std::to_string(classes) + ")");
    }
  }
  CrossEntropyResult out;
  out.grad_logits = row_softmax(logits);
  double loss = 0.0;
  const double inv_b = 1.0 / static_cast<double>(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    const double* z = logits.row_ptr(i);
    double mx = z[0];
    for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, z[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < classes; ++j) sum += std::exp(z[j] - mx);
    loss += std::log(sum) + mx - z[labels[i]];
    double* g = out.grad_logits.row_ptr(i);
    g[labels[i]] -= 1.0;
    for (std::size_t j = 0; j < classes; ++j) g[j] *= inv_b;
  }
  out.loss = loss * inv_b;
  return out;
}

VarianceHingeResult variance_hinge_on_probs(const Matrix& probs, double c) {
  const std::size_t batch = probs.rows();
  const std::size_t classes = probs.cols();
  VarianceHingeResult out;
  out.grad_probs = Matrix(batch, classes);
  out.column_stds = column_std(probs);

  std::vector<double> mean(classes, 0.0);
  for (std::size_t i = 0; i < batch; ++i) {
    const double* row = probs.row_ptr(i);
    for (std::size_t j = 0; j < classes; ++j) mean[j] += row[j];
  }
  for (double& m : mean) m /= static_cast<double>(batch);

  const double inv_d = 1.0 / static_cast<double>(classes);
  const double inv_b = 1.0 / static_cast<double>(batch);
  double loss = 0.0;
  for (std::size_t j = 0; j < classes; ++j) {
    const double slack = c - out.column_stds[j];
    if (slack <= 0.0) continue;  // hinge inactive, exactly zero gradient
    loss += slack * inv_d;
    // d/dP_ij of -std_j/D = -(P_ij - mean_j) / (D * B * std_j)
    const double coef = -inv_d * inv_b / out.column_stds[j];
    for (std::size_t i = 0; i < batch; ++i) {
      out.grad_probs(i, j) = coef * (probs(i, j) - mean[j]);
    }
  }
  out.loss = loss;
  return out;
}

VarianceLossResult variance_loss(const Matrix& logits, double c) {
  const std::size_t batch = logits.rows();
  const std::size_t classes = logits.cols();
  if (batch == 0) throw std::invalid_argument("variance_loss: empty batch");
  VarianceLossResult out;
  if (batch == 1) {
    // Degenerate single-sample batch: the loss is pinned at c, no gradient.
    out.loss = c;
    out.grad_logits = Matrix(1, classes);
    return out;
  }
  const Matrix probs = row_softmax(logits);
  const VarianceHingeResult hinge = variance_hinge_on_probs(probs, c);
  out.loss = hinge.loss;
  // Chain through the row-wise softmax Jacobian:
  // dL/dz_ik = p_ik * (g_ik - sum_j g_ij p_ij)
  out.grad_logits = Matrix(batch, classes);
  for (std::size_t i = 0; i < batch; ++i) {
    const double* p = probs.row_ptr(i);
    const double* g = hinge.grad_probs.row_ptr(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < classes; ++j) dot += g[j] * p[j];
    double* gz = out.grad_logits.row_ptr(i);
    for (std::size_t j = 0; j < classes; ++j) gz[j] = p[j] * (g[j] - dot);
  }
  return out;
}

UniformityLossResult uniformity_loss_fixed_sigma(const Matrix& reps, double sigma) {
  const std::size_t n = reps.rows();
  const std::size_t d = reps.cols();
  UniformityLossResult out;
  out.grad_reps = Matrix(n, d);
  out.sigma = sigma;
  if (n <= 1) return out;  // no pairs, zero loss and gradient

  if (sigma < 1e-12) sigma = 1e-12;
  out.sigma = sigma;
  const Matrix d2 = pairwise_sq_dists(reps);
  const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  const double inv_two_sigma = 1.0 / (2.0 * sigma);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double e = std::exp(-d2(i, j) * inv_two_sigma);
      sum += e;
      // d/dx_i of e_ij = -e_ij/sigma * (x_i - x_j); mirrored for x_j.
      const double coef = -e / (sigma * pairs);
      const double* xi = reps.row_ptr(i);
      const double* xj = reps.row_ptr(j);
      double* gi = out.grad_reps.row_ptr(i);
      double* gj = out.grad_reps.row_ptr(j);
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = xi[t] - xj[t];
        gi[t] += coef * diff;
        gj[t] -= coef * diff;
      }
    }
  }
  out.loss = sum / pairs;
  return out;
}

UniformityLossResult uniformity_loss(const Matrix& reps) {
  const std::size_t n = reps.rows();
  if (n <= 1) return uniformity_loss_fixed_sigma(reps, 1e-12);
  const Matrix d2 = pairwise_sq_dists(reps);
  std::vector<double> dists;
  dists.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) dists.push_back(d2(i, j));
  }
  return uniformity_loss_fixed_sigma(reps, median(std::move(dists)));
}

namespace {

// Row-wise projection onto the unit sphere; rows below the floor norm are
// left at zero direction (their gradient is dropped).
Matrix normalize_rows(const Matrix& x, std::vector<double>& norms) {
  Matrix out(x.rows(), x.cols());
  norms.assign(x.rows(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* row = x.row_ptr(i);
    double sq = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) sq += row[j] * row[j];
    const double norm = std::sqrt(sq);
    norms[i] = norm;
    if (norm < 1e-12) continue;
    double* dst = out.row_ptr(i);
    for (std::size_t j = 0; j < x.cols(); ++j) dst[j] = row[j] / norm;
  }
  return out;
}

}  // namespace

FeduvLossResult feduv_loss(const ForwardCache& cache, const std::vector<int>& labels,
                           const LossWeights& weights, double c) {
  if (weights.mu < 0.0 || weights.lambda < 0.0) {
    throw std::invalid_argument("feduv_loss: negative loss weight");
  }
  FeduvLossResult out;
  CrossEntropyResult ce = cross_entropy(cache.logits(), labels);
  VarianceLossResult var = variance_loss(cache.logits(), c);

  const Matrix& reps = cache.representations();
  UniformityLossResult uni;
  if (weights.hyperspherical) {
    std::vector<double> norms;
    const Matrix directions = normalize_rows(reps, norms);
    uni = weights.sigma_override
              ? uniformity_loss_fixed_sigma(directions, *weights.sigma_override)
              : uniformity_loss(directions);
    // Pull the gradient back through y = x/|x|: dL/dx = (g - (g.y) y)/|x|.
    Matrix grad(reps.rows(), reps.cols());
    for (std::size_t i = 0; i < reps.rows(); ++i) {
      if (norms[i] < 1e-12) continue;
      const double* g = uni.grad_reps.row_ptr(i);
      const double* y = directions.row_ptr(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < reps.cols(); ++j) dot += g[j] * y[j];
      double* dst = grad.row_ptr(i);
      for (std::size_t j = 0; j < reps.cols(); ++j) {
        dst[j] = (g[j] - dot * y[j]) / norms[i];
      }
    }
    uni.grad_reps = std::move(grad);
  } else {
    uni = weights.sigma_override
              ? uniformity_loss_fixed_sigma(reps, *weights.sigma_override)
              : uniformity_loss(reps);
  }

  out.breakdown.ce = ce.loss;
  out.breakdown.l_v = var.loss;
  out.breakdown.l_u = uni.loss;
  out.breakdown.total = ce.loss + weights.lambda * var.loss + weights.mu * uni.loss;

  out.grad_logits = std::move(ce.grad_logits);
  for (std::size_t t = 0; t < out.grad_logits.size(); ++t) {
    out.grad_logits.data()[t] += weights.lambda * var.grad_logits.data()[t];
  }
  out.grad_reps = std::move(uni.grad_reps);
  for (double& v : out.grad_reps.data()) v *= weights.mu;
  return out;
}

ProxResult fedprox_penalty(const ModelParams& local, const ModelParams& global,
                           double mu_prox) {
  if (!local.congruent_with(global)) {
    throw std::invalid_argument("fedprox_penalty: parameter shapes differ");
  }
  ProxResult out;
  out.grads = Gradients::zeros_like(local);
  double sq = 0.0;
  for (std::size_t li = 0; li < local.layers.size(); ++li) {
    const auto& lw = local.layers[li].weights.data();
    const auto& gw = global.layers[li].weights.data();
    auto& grad_w = out.grads.weights[li].data();
    for (std::size_t t = 0; t < lw.size(); ++t) {
      const double diff = lw[t] - gw[t];
      sq += diff * diff;
      grad_w[t] = mu_prox * diff;
    }
    const auto& lb = local.layers[li].bias;
    const auto& gb = global.layers[li].bias;
    auto& grad_b = out.grads.bias[li];
    for (std::size_t t = 0; t < lb.size(); ++t) {
      const double diff = lb[t] - gb[t];
      sq += diff * diff;
      grad_b[t] = mu_prox * diff;
    }
  }
  out.loss = 0.5 * mu_prox * sq;
  return out;
}

}  // namespace fedsim
