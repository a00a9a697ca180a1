// Multilayer perceptron with explicit forward/backward passes, SGD with momentum,
// and a central-difference gradient checker.
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "labelforge/numerics.hpp"

namespace labelforge {

/// Weight (fan_in x fan_out) and bias (fan_out) of one affine layer. Also used
/// for gradients and momentum buffers, which mirror the parameter shapes.
struct Layer {
  Matrix weights;
  std::vector<double> biases;

  friend bool operator==(const Layer&, const Layer&) = default;
};

using Params = std::vector<Layer>;

struct Model {
  std::vector<std::size_t> layer_sizes;  // D, h1, ..., K
  Params layers;                         // layer_sizes.size() - 1 entries
  std::uint64_t seed = 0;

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t num_classes() const { return layer_sizes.back(); }
  std::size_t num_hidden() const { return layers.empty() ? 0 : layers.size() - 1; }

  friend bool operator==(const Model&, const Model&) = default;
};

inline Params zeros_like(const Params& p) {
  Params out;
  out.reserve(p.size());
  for (const auto& l : p) {
    out.push_back({Matrix(l.weights.rows(), l.weights.cols()), std::vector<double>(l.biases.size(), 0.0)});
  }
  return out;
}

inline std::size_t param_count(const Params& p) {
  std::size_t n = 0;
  for (const auto& l : p) n += l.weights.size() + l.biases.size();
  return n;
}

/// Visits every scalar parameter in layer order: weights row-major, then biases.
template <class P, class F>
void for_each_param(P& params, F&& f) {
  for (auto& l : params) {
    for (auto& w : l.weights.data()) f(w);
    for (auto& b : l.biases) f(b);
  }
}

/// Glorot-uniform weights, zero biases. Layer l draws from Rng(derive(seed, l)).
inline Model init_model(const std::vector<std::size_t>& layer_sizes, std::uint64_t seed) {
  if (layer_sizes.size() < 2) throw std::invalid_argument("init_model: need at least 2 layer sizes");
  for (auto s : layer_sizes) {
    if (s == 0) throw std::invalid_argument("init_model: layer sizes must be positive");
  }
  Model m;
  m.layer_sizes = layer_sizes;
  m.seed = seed;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const std::size_t fan_in = layer_sizes[l];
    const std::size_t fan_out = layer_sizes[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Rng rng(Rng::derive(seed, l));
    Layer layer{Matrix(fan_in, fan_out), std::vector<double>(fan_out, 0.0)};
    for (auto& w : layer.weights.data()) w = rng.uniform(-limit, limit);
    m.layers.push_back(std::move(layer));
  }
  return m;
}

struct ForwardCache {
  Matrix input;
  std::vector<Matrix> preacts;      // z_l for every layer; the last one is the logits
  std::vector<Matrix> activations;  // relu(z_l) for hidden layers only
  Matrix probs;

  const Matrix& logits() const { return preacts.back(); }
  /// Output of the last hidden layer (penultimate features).
  const Matrix& penultimate() const {
    if (activations.empty()) throw std::logic_error("model has no hidden layer");
    return activations.back();
  }
};

inline ForwardCache forward(const Model& model, const Matrix& batch) {
  if (batch.cols() != model.input_dim()) {
    throw ShapeError("forward: batch has " + std::to_string(batch.cols()) +
                     " columns, model expects " + std::to_string(model.input_dim()));
  }
  ForwardCache cache;
  cache.input = batch;
  const Matrix* a = &cache.input;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    Matrix z = gemm(*a, layer.weights);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      auto row = z.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += layer.biases[c];
    }
    cache.preacts.push_back(std::move(z));
    if (l + 1 < model.layers.size()) {
      Matrix act = cache.preacts.back();
      for (auto& v : act.data()) v = v > 0.0 ? v : 0.0;
      cache.activations.push_back(std::move(act));
      a = &cache.activations.back();
    }
  }
  cache.probs = softmax_rows(cache.logits());
  return cache;
}

/// Backpropagates dL/dlogits through the network.
inline Params backward(const Model& model, const ForwardCache& cache, const Matrix& dlogits) {
  const std::size_t n_layers = model.layers.size();
  if (cache.preacts.size() != n_layers || cache.activations.size() + 1 != n_layers) {
    throw ShapeError("backward: cache does not belong to this model");
  }
  if (dlogits.rows() != cache.input.rows() || dlogits.cols() != model.num_classes()) {
    throw ShapeError("backward: dlogits " + shape_str(dlogits.rows(), dlogits.cols()) +
                     " expected " + shape_str(cache.input.rows(), model.num_classes()));
  }
  Params grads(n_layers);
  Matrix dz = dlogits;
  for (std::size_t l = n_layers; l-- > 0;) {
    const Matrix& a_prev = l == 0 ? cache.input : cache.activations[l - 1];
    grads[l].weights = gemm(a_prev, dz, /*transpose_a=*/true);
    grads[l].biases.assign(dz.cols(), 0.0);
    for (std::size_t r = 0; r < dz.rows(); ++r) {
      const auto row = dz.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) grads[l].biases[c] += row[c];
    }
    if (l == 0) break;
    Matrix da = gemm(dz, model.layers[l].weights, false, /*transpose_b=*/true);
    const auto& z_prev = cache.preacts[l - 1].data();
    auto& dv = da.data();
    for (std::size_t i = 0; i < dv.size(); ++i) {
      if (!(z_prev[i] > 0.0)) dv[i] = 0.0;
    }
    dz = std::move(da);
  }
  return grads;
}

struct OptState {
  Params velocity;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

inline OptState make_opt_state(const Model& model, double lr, double momentum, double weight_decay) {
  return {zeros_like(model.layers), lr, momentum, weight_decay};
}

/// v <- mu*v + g + wd*theta;  theta <- theta - lr*v
inline void sgd_step(Model& model, const Params& grads, OptState& opt) {
  if (grads.size() != model.layers.size() || opt.velocity.size() != model.layers.size()) {
    throw ShapeError("sgd_step: parameter/gradient layer count mismatch");
  }
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& p = model.layers[l];
    const auto& g = grads[l];
    auto& v = opt.velocity[l];
    if (g.weights.size() != p.weights.size() || g.biases.size() != p.biases.size() ||
        v.weights.size() != p.weights.size() || v.biases.size() != p.biases.size()) {
      throw ShapeError("sgd_step: shape mismatch in layer " + std::to_string(l));
    }
    const auto update = [&](std::vector<double>& theta, const std::vector<double>& grad,
                            std::vector<double>& vel) {
      for (std::size_t i = 0; i < theta.size(); ++i) {
        vel[i] = opt.momentum * vel[i] + grad[i] + opt.weight_decay * theta[i];
        theta[i] -= opt.lr * vel[i];
      }
    };
    update(p.weights.data(), g.weights.data(), v.weights.data());
    update(p.biases, g.biases, v.biases);
  }
}

/// A scalar loss over a forward pass together with its gradient w.r.t. the logits.
struct LossEval {
  double loss = 0.0;
  Matrix dlogits;
};

using LossFn = std::function<LossEval(const ForwardCache&)>;

namespace detail {

// True when some hidden ReLU sits on different sides of its kink in the two passes.
inline bool relu_pattern_changed(const ForwardCache& a, const ForwardCache& b) {
  for (std::size_t l = 0; l + 1 < a.preacts.size(); ++l) {
    const auto& za = a.preacts[l].data();
    const auto& zb = b.preacts[l].data();
    for (std::size_t i = 0; i < za.size(); ++i) {
      if ((za[i] > 0.0) != (zb[i] > 0.0)) return true;
    }
  }
  return false;
}

}  // namespace detail

/// Relative error ||a - n|| / (||a|| + ||n||) between the analytic gradient
/// (backward of loss_fn's dlogits) and central differences of loss_fn.
/// Coordinates whose +-step perturbation moves a hidden unit across the ReLU
/// kink are left out, since the difference quotient is meaningless there;
/// their count goes to `kinks_skipped` when given.
inline double finite_diff_check(const Model& model, const Matrix& batch, const LossFn& loss_fn, double step,
                                std::size_t* kinks_skipped = nullptr) {
  const auto cache = forward(model, batch);
  const auto analytic = backward(model, cache, loss_fn(cache).dlogits);
  std::vector<double> flat_analytic;
  flat_analytic.reserve(param_count(analytic));
  for_each_param(analytic, [&](const double& g) { flat_analytic.push_back(g); });

  Model probe = model;
  std::vector<double> kept_analytic, kept_numeric;
  std::size_t skipped = 0, i = 0;
  for_each_param(probe.layers, [&](double& theta) {
    const double saved = theta;
    theta = saved + step;
    const auto up = forward(probe, batch);
    theta = saved - step;
    const auto down = forward(probe, batch);
    theta = saved;
    const double a = flat_analytic[i++];
    if (detail::relu_pattern_changed(up, cache) || detail::relu_pattern_changed(down, cache)) {
      ++skipped;
      return;
    }
    kept_analytic.push_back(a);
    kept_numeric.push_back((loss_fn(up).loss - loss_fn(down).loss) / (2.0 * step));
  });
  if (kinks_skipped) *kinks_skipped = skipped;
  return relative_error(kept_analytic, kept_numeric);
}

// --- checkpoint --------------------------------------------------------------
//
// {
//   "format": "labelforge-checkpoint", "version": 1,
//   "seed": <uint>, "layer_sizes": [D, h1, ..., K],
//   "layers": [ {"weights": [fan_in*fan_out values, row-major], "biases": [fan_out values]}, ... ]
// }

inline nlohmann::json model_to_json(const Model& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : m.layers) {
    layers.push_back({{"weights", l.weights.data()}, {"biases", l.biases}});
  }
  return {{"format", "labelforge-checkpoint"},
          {"version", 1},
          {"seed", m.seed},
          {"layer_sizes", m.layer_sizes},
          {"layers", std::move(layers)}};
}

inline Model model_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "labelforge-checkpoint") {
    throw std::runtime_error("not a labelforge checkpoint");
  }
  Model m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
  const auto& layers = j.at("layers");
  if (m.layer_sizes.size() < 2 || layers.size() + 1 != m.layer_sizes.size()) {
    throw std::runtime_error("checkpoint: layer count does not match layer_sizes");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto fan_in = m.layer_sizes[l];
    const auto fan_out = m.layer_sizes[l + 1];
    auto w = layers[l].at("weights").get<std::vector<double>>();
    auto b = layers[l].at("biases").get<std::vector<double>>();
    if (b.size() != fan_out) throw std::runtime_error("checkpoint: bias length mismatch in layer " + std::to_string(l));
    m.layers.push_back({Matrix(fan_in, fan_out, std::move(w)), std::move(b)});
  }
  return m;
}

inline void save_checkpoint(const Model& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << model_to_json(m).dump(2) << '\n';
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return model_from_json(nlohmann::json::parse(in));
}

}  // namespace labelforge
