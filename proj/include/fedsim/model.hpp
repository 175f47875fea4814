#pragma once

#include <cstddef>
#include <vector>

#include "fedsim/matrix.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

// Encoder widths feed a two-layer projector (linear -> ReLU -> linear) whose
// output is the representation; a final linear classifier maps it to logits.
struct MlpConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> encoder_dims;
  std::size_t projector_dim = 64;
  std::size_t num_classes = 0;

  void validate() const;  // throws std::invalid_argument
};

struct Layer {
  Matrix weights;            // out x in
  std::vector<double> bias;  // out
  bool relu = false;         // apply ReLU after the affine map
  bool frozen = false;
};

struct ModelParams {
  std::vector<Layer> layers;
  std::size_t encoder_layers = 0;  // layers [0, encoder_layers) form the encoder

  Layer& classifier() { return layers.back(); }
  const Layer& classifier() const { return layers.back(); }

  // Index of the layer whose activation is the representation g(X).
  std::size_t representation_layer() const { return layers.size() - 2; }

  std::size_t parameter_count() const;
  std::vector<double> flatten() const;
  void unflatten(const std::vector<double>& flat);
  bool congruent_with(const ModelParams& other) const;
};

bool bit_identical(const Matrix& a, const Matrix& b);
bool bit_identical(const ModelParams& a, const ModelParams& b);

struct ForwardCache {
  Matrix input;
  std::vector<Matrix> pre;   // per-layer pre-activation
  std::vector<Matrix> post;  // per-layer activation; post.back() is the logits

  const Matrix& logits() const { return post.back(); }
  const Matrix& representations() const { return post[post.size() - 2]; }
};

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> bias;

  static Gradients zeros_like(const ModelParams& params);
};

struct SgdState {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  std::vector<Matrix> vel_w;
  std::vector<std::vector<double>> vel_b;

  static SgdState make(const ModelParams& params, double lr, double momentum,
                       double weight_decay);
};

// He-scaled Gaussian weights, zero biases, nothing frozen.
ModelParams init_params(const MlpConfig& config, RngStream& rng);

ForwardCache forward(const ModelParams& params, const Matrix& x);

// grad_logits injects dL/d(logits); grad_reps (may be empty) injects an extra
// dL/d(representations) at the projector output. Frozen layers get exactly
// zero parameter gradients but still propagate upstream gradient.
Gradients backward(const ModelParams& params, const ForwardCache& cache,
                   const Matrix& grad_logits, const Matrix& grad_reps);

// v <- momentum*v + (g + weight_decay*w); w <- w - lr*v. Frozen layers and
// their buffers are untouched.
void sgd_step(ModelParams& params, const Gradients& grads, SgdState& state);

// Replaces the classifier with random orthonormal rows, zeroes its bias and
// sets the frozen flag. Requires num_classes <= projector_dim.
ModelParams freeze_classifier(ModelParams params, RngStream& rng);

}  // namespace fedsim
