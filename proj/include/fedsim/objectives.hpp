#pragma once

#include <optional>
#include <vector>

#include "fedsim/matrix.hpp"
#include "fedsim/model.hpp"

namespace fedsim {

struct LossWeights {
  double mu = 0.5;      // uniformity strength
  double lambda = 0.0;  // variance strength; the runtime default is D/4
  // Fixed RBF bandwidth; when unset the median of the pairwise squared
  // distances is used per batch.
  std::optional<double> sigma_override;
  // Project representations onto the unit sphere before the uniformity
  // energy. Keeps the energy acting on directions; without it the gradient
  // mostly inflates representation norms (the projector has no batch norm to
  // bound them).
  bool hyperspherical = true;
};

struct LossBreakdown {
  double ce = 0.0;
  double l_v = 0.0;   // unweighted variance hinge
  double l_u = 0.0;   // unweighted uniformity energy
  double prox = 0.0;  // proximal penalty, weight already applied
  double total = 0.0;
};

// Average class-wise std of the D x D identity probability table; the hinge
// target emulating a balanced batch. Population variance convention.
double variance_threshold(std::size_t num_classes);

struct CrossEntropyResult {
  double loss = 0.0;
  Matrix grad_logits;
};
CrossEntropyResult cross_entropy(const Matrix& logits, const std::vector<int>& labels);

// Hinge on the per-column std of a probability matrix, with the gradient
// taken w.r.t. the probabilities. Columns whose std already exceeds c get an
// exactly zero gradient.
struct VarianceHingeResult {
  double loss = 0.0;
  Matrix grad_probs;
  std::vector<double> column_stds;
};
VarianceHingeResult variance_hinge_on_probs(const Matrix& probs, double c);

struct VarianceLossResult {
  double loss = 0.0;
  Matrix grad_logits;
};
VarianceLossResult variance_loss(const Matrix& logits, double c);

struct UniformityLossResult {
  double loss = 0.0;
  Matrix grad_reps;
  double sigma = 0.0;  // bandwidth actually used
};
// Mean RBF energy over the distinct unordered row pairs; sigma is the median
// squared pairwise distance and is excluded from differentiation.
UniformityLossResult uniformity_loss(const Matrix& reps);
UniformityLossResult uniformity_loss_fixed_sigma(const Matrix& reps, double sigma);

struct FeduvLossResult {
  LossBreakdown breakdown;
  Matrix grad_logits;  // d(ce + lambda*l_v)/d logits
  Matrix grad_reps;    // mu * d(l_u)/d representations
};
FeduvLossResult feduv_loss(const ForwardCache& cache, const std::vector<int>& labels,
                           const LossWeights& weights, double c);

struct ProxResult {
  double loss = 0.0;
  Gradients grads;
};
// (mu_prox/2) * ||local - global||^2 over all parameters.
ProxResult fedprox_penalty(const ModelParams& local, const ModelParams& global,
                           double mu_prox);

}  // namespace fedsim
