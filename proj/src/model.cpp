#include "fedsim/model.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

#include "fedsim/svd.hpp"

namespace fedsim {

void MlpConfig::validate() const {
  if (input_dim < 1) throw std::invalid_argument("MlpConfig: input_dim must be >= 1");
  if (projector_dim < 1) throw std::invalid_argument("MlpConfig: projector_dim must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("MlpConfig: num_classes must be >= 2");
  for (std::size_t d : encoder_dims) {
    if (d < 1) throw std::invalid_argument("MlpConfig: encoder dims must be >= 1");
  }
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

std::vector<double> ModelParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const Layer& l : layers) {
    flat.insert(flat.end(), l.weights.data().begin(), l.weights.data().end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

void ModelParams::unflatten(const std::vector<double>& flat) {
  if (flat.size() != parameter_count()) {
    throw std::invalid_argument("ModelParams::unflatten: length mismatch");
  }
  std::size_t pos = 0;
  for (Layer& l : layers) {
    std::copy(flat.begin() + pos, flat.begin() + pos + l.weights.size(),
              l.weights.data().begin());
    pos += l.weights.size();
    std::copy(flat.begin() + pos, flat.begin() + pos + l.bias.size(), l.bias.begin());
    pos += l.bias.size();
  }
}

bool ModelParams::congruent_with(const ModelParams& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].weights.rows() != other.layers[i].weights.rows() ||
        layers[i].weights.cols() != other.layers[i].weights.cols() ||
        layers[i].bias.size() != other.layers[i].bias.size()) {
      return false;
    }
  }
  return true;
}

bool bit_identical(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return a.size() == 0 ||
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

bool bit_identical(const ModelParams& a, const ModelParams& b) {
  if (!a.congruent_with(b)) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    if (!bit_identical(a.layers[i].weights, b.layers[i].weights)) return false;
    if (!a.layers[i].bias.empty() &&
        std::memcmp(a.layers[i].bias.data(), b.layers[i].bias.data(),
                    a.layers[i].bias.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

Gradients Gradients::zeros_like(const ModelParams& params) {
  Gradients g;
  g.weights.reserve(params.layers.size());
  g.bias.reserve(params.layers.size());
  for (const Layer& l : params.layers) {
    g.weights.emplace_back(l.weights.rows(), l.weights.cols());
    g.bias.emplace_back(l.bias.size(), 0.0);
  }
  return g;
}

SgdState SgdState::make(const ModelParams& params, double lr, double momentum,
                        double weight_decay) {
  SgdState s;
  s.lr = lr;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  for (const Layer& l : params.layers) {
    s.vel_w.emplace_back(l.weights.rows(), l.weights.cols());
    s.vel_b.emplace_back(l.bias.size(), 0.0);
  }
  return s;
}

ModelParams init_params(const MlpConfig& config, RngStream& rng) {
  config.validate();
  ModelParams params;
  params.encoder_layers = config.encoder_dims.size();

  std::vector<std::pair<std::size_t, std::size_t>> shapes;  // (out, in)
  std::size_t prev = config.input_dim;
  for (std::size_t d : config.encoder_dims) {
    shapes.emplace_back(d, prev);
    prev = d;
  }
  shapes.emplace_back(config.projector_dim, prev);            // projector layer 1
  shapes.emplace_back(config.projector_dim, config.projector_dim);  // projector layer 2
  shapes.emplace_back(config.num_classes, config.projector_dim);    // classifier

  for (std::size_t i = 0; i < shapes.size(); ++i) {
    Layer l;
    l.weights = Matrix(shapes[i].first, shapes[i].second);
    const double scale = std::sqrt(2.0 / static_cast<double>(shapes[i].second));
    for (double& v : l.weights.data()) v = scale * rng.next_gaussian();
    l.bias.assign(shapes[i].first, 0.0);
    // ReLU after every layer except the projector output and the classifier.
    l.relu = (i + 2 < shapes.size());
    params.layers.push_back(std::move(l));
  }
  return params;
}

ForwardCache forward(const ModelParams& params, const Matrix& x) {
  if (params.layers.empty()) {
    throw std::invalid_argument("forward: model has no layers");
  }
  if (x.cols() != params.layers.front().weights.cols()) {
    throw std::invalid_argument("forward: input has " + std::to_string(x.cols()) +
                                " columns, expected " +
                                std::to_string(params.layers.front().weights.cols()));
  }
  ForwardCache cache;
  cache.input = x;
  cache.pre.reserve(params.layers.size());
  cache.post.reserve(params.layers.size());
  const Matrix* in = &cache.input;
  for (const Layer& l : params.layers) {
    Matrix z = matmul_nt(*in, l.weights);
    for (std::size_t i = 0; i < z.rows(); ++i) {
      double* row = z.row_ptr(i);
      for (std::size_t j = 0; j < z.cols(); ++j) row[j] += l.bias[j];
    }
    Matrix a = z;
    if (l.relu) {
      for (double& v : a.data()) v = v > 0.0 ? v : 0.0;
    }
    cache.pre.push_back(std::move(z));
    cache.post.push_back(std::move(a));
    in = &cache.post.back();
  }
  return cache;
}

Gradients backward(const ModelParams& params, const ForwardCache& cache,
                   const Matrix& grad_logits, const Matrix& grad_reps) {
  const std::size_t n_layers = params.layers.size();
  if (cache.post.size() != n_layers) {
    throw std::invalid_argument("backward: cache does not match model");
  }
  if (grad_logits.rows() != cache.logits().rows() ||
      grad_logits.cols() != cache.logits().cols()) {
    throw std::invalid_argument("backward: grad_logits shape mismatch");
  }
  if (!grad_reps.empty()) {
    if (n_layers < 2) {
      throw std::invalid_argument("backward: representation gradient needs >= 2 layers");
    }
    const Matrix& reps = cache.representations();
    if (grad_reps.rows() != reps.rows() || grad_reps.cols() != reps.cols()) {
      throw std::invalid_argument("backward: grad_reps shape mismatch");
    }
  }

  Gradients grads = Gradients::zeros_like(params);
  Matrix g = grad_logits;  // dL/d(pre-activation of current layer)
  for (std::size_t li = n_layers; li-- > 0;) {
    const Layer& l = params.layers[li];
    const Matrix& input_act = (li == 0) ? cache.input : cache.post[li - 1];
    if (!l.frozen) {
      grads.weights[li] = matmul_tn(g, input_act);
      std::vector<double>& gb = grads.bias[li];
      for (std::size_t i = 0; i < g.rows(); ++i) {
        const double* row = g.row_ptr(i);
        for (std::size_t j = 0; j < g.cols(); ++j) gb[j] += row[j];
      }
    }
    if (li == 0) break;
    Matrix gx = matmul(g, l.weights);  // dL/d(activation of layer li-1)
    if (!grad_reps.empty() && li - 1 == params.representation_layer()) {
      for (std::size_t t = 0; t < gx.size(); ++t) gx.data()[t] += grad_reps.data()[t];
    }
    if (params.layers[li - 1].relu) {
      const Matrix& z = cache.pre[li - 1];
      for (std::size_t t = 0; t < gx.size(); ++t) {
        if (z.data()[t] <= 0.0) gx.data()[t] = 0.0;  // subgradient at 0 is 0
      }
    }
    g = std::move(gx);
  }
  return grads;
}

void sgd_step(ModelParams& params, const Gradients& grads, SgdState& state) {
  if (grads.weights.size() != params.layers.size() ||
      state.vel_w.size() != params.layers.size()) {
    throw std::invalid_argument("sgd_step: incongruent shapes");
  }
  for (std::size_t li = 0; li < params.layers.size(); ++li) {
    Layer& l = params.layers[li];
    if (l.frozen) continue;
    if (grads.weights[li].size() != l.weights.size() ||
        state.vel_w[li].size() != l.weights.size()) {
      throw std::invalid_argument("sgd_step: incongruent shapes");
    }
    double* w = l.weights.data().data();
    const double* g = grads.weights[li].data().data();
    double* v = state.vel_w[li].data().data();
    for (std::size_t t = 0; t < l.weights.size(); ++t) {
      v[t] = state.momentum * v[t] + (g[t] + state.weight_decay * w[t]);
      w[t] -= state.lr * v[t];
    }
    double* b = l.bias.data();
    const double* gb = grads.bias[li].data();
    double* vb = state.vel_b[li].data();
    for (std::size_t t = 0; t < l.bias.size(); ++t) {
      vb[t] = state.momentum * vb[t] + (gb[t] + state.weight_decay * b[t]);
      b[t] -= state.lr * vb[t];
    }
  }
}

ModelParams freeze_classifier(ModelParams params, RngStream& rng) {
  Layer& cls = params.classifier();
  if (cls.weights.rows() > cls.weights.cols()) {
    throw std::invalid_argument(
        "freeze_classifier: num_classes exceeds projector_dim");
  }
  cls.weights = orthonormalize_rows(cls.weights, rng);
  std::fill(cls.bias.begin(), cls.bias.end(), 0.0);
  cls.frozen = true;
  return params;
}

}  // namespace fedsim
