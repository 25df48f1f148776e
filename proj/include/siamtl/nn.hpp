#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "siamtl/errors.hpp"
#include "siamtl/rng.hpp"

namespace siamtl {

enum class activation { relu, sigmoid, identity };

struct matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major

  matrix() = default;
  matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
};

struct dense_layer {
  matrix weights;              // out_dim x in_dim
  std::vector<double> biases;  // out_dim
  activation act = activation::relu;

  std::size_t in_dim() const { return weights.cols; }
  std::size_t out_dim() const { return weights.rows; }
};

// A plain parameter set; training mutates it from one thread of control,
// read-only snapshots may be shared freely.
struct network {
  std::vector<dense_layer> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }
};

inline double sigmoid(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double apply_activation(activation a, double z) {
  switch (a) {
    case activation::relu: return z > 0.0 ? z : 0.0;
    case activation::sigmoid: return sigmoid(z);
    case activation::identity: return z;
  }
  return z;
}

// d(post)/d(pre); relu uses the 0 subgradient at the kink
inline double activation_derivative(activation a, double pre, double post) {
  switch (a) {
    case activation::relu: return pre > 0.0 ? 1.0 : 0.0;
    case activation::sigmoid: return post * (1.0 - post);
    case activation::identity: return 1.0;
  }
  (void)pre;
  return 1.0;
}

// He-uniform for relu layers, Glorot-uniform otherwise; biases zero.
// Identical seed reproduces bit-identical parameters.
inline network init_network(std::span<const std::size_t> dims, std::span<const activation> acts,
                            std::uint64_t seed) {
  if (dims.size() < 2) throw config_error("init_network: need at least input and output dims");
  if (acts.size() != dims.size() - 1)
    throw config_error("init_network: activation count must equal layer count");
  for (std::size_t d : dims)
    if (d == 0) throw config_error("init_network: layer dims must be positive");

  rng gen(seed);
  network net;
  net.layers.reserve(acts.size());
  for (std::size_t l = 0; l < acts.size(); ++l) {
    const std::size_t fan_in = dims[l];
    const std::size_t fan_out = dims[l + 1];
    const double limit = acts[l] == activation::relu
                             ? std::sqrt(6.0 / static_cast<double>(fan_in))
                             : std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    dense_layer layer;
    layer.weights = matrix(fan_out, fan_in);
    layer.biases.assign(fan_out, 0.0);
    layer.act = acts[l];
    for (double& w : layer.weights.data) w = gen.uniform(-limit, limit);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

struct layer_trace {
  std::vector<double> pre;
  std::vector<double> post;
};

struct forward_trace {
  std::vector<double> input;
  std::vector<layer_trace> layers;

  const std::vector<double>& output() const { return layers.back().post; }
};

inline forward_trace forward(std::span<const dense_layer> layers, std::span<const double> input) {
  if (layers.empty()) throw shape_error("forward: empty layer stack");
  if (input.size() != layers.front().in_dim())
    throw shape_error("forward: input length " + std::to_string(input.size()) +
                      " does not match layer in_dim " + std::to_string(layers.front().in_dim()));

  forward_trace trace;
  trace.input.assign(input.begin(), input.end());
  trace.layers.reserve(layers.size());
  const std::vector<double>* current = &trace.input;
  for (const dense_layer& layer : layers) {
    if (current->size() != layer.in_dim())
      throw shape_error("forward: layer chain dimension mismatch");
    layer_trace lt;
    lt.pre.resize(layer.out_dim());
    lt.post.resize(layer.out_dim());
    for (std::size_t i = 0; i < layer.out_dim(); ++i) {
      double z = layer.biases[i];
      const double* wrow = layer.weights.data.data() + i * layer.in_dim();
      for (std::size_t j = 0; j < layer.in_dim(); ++j) z += wrow[j] * (*current)[j];
      lt.pre[i] = z;
      lt.post[i] = apply_activation(layer.act, z);
    }
    trace.layers.push_back(std::move(lt));
    current = &trace.layers.back().post;
  }
  return trace;
}

struct layer_grad {
  matrix weights;
  std::vector<double> biases;
};

inline layer_grad zero_grad_like(const dense_layer& layer) {
  return {matrix(layer.out_dim(), layer.in_dim()), std::vector<double>(layer.out_dim(), 0.0)};
}

inline std::vector<layer_grad> zero_gradients(std::span<const dense_layer> layers) {
  std::vector<layer_grad> grads;
  grads.reserve(layers.size());
  for (const dense_layer& layer : layers) grads.push_back(zero_grad_like(layer));
  return grads;
}

inline std::vector<layer_grad> zero_gradients(const network& net) {
  return zero_gradients(std::span<const dense_layer>(net.layers));
}

// into[offset + k] += scale * from[k]
inline void accumulate(std::vector<layer_grad>& into, std::size_t offset,
                       const std::vector<layer_grad>& from, double scale = 1.0) {
  for (std::size_t k = 0; k < from.size(); ++k) {
    layer_grad& dst = into[offset + k];
    const layer_grad& src = from[k];
    if (dst.weights.data.size() != src.weights.data.size() || dst.biases.size() != src.biases.size())
      throw shape_error("accumulate: gradient shape mismatch");
    for (std::size_t i = 0; i < src.weights.data.size(); ++i)
      dst.weights.data[i] += scale * src.weights.data[i];
    for (std::size_t i = 0; i < src.biases.size(); ++i) dst.biases[i] += scale * src.biases[i];
  }
}

struct backward_result {
  std::vector<layer_grad> layers;
  std::vector<double> input_grad;
};

// Reverse-mode accumulation over a layer span. `output_grad` is dL/d(post)
// of the last layer, or dL/d(pre) when grad_wrt_preactivation is set (the
// numerically stable route for sigmoid + cross-entropy heads).
inline backward_result backward(std::span<const dense_layer> layers, const forward_trace& trace,
                                std::span<const double> output_grad,
                                bool grad_wrt_preactivation = false) {
  if (layers.empty() || trace.layers.size() != layers.size())
    throw shape_error("backward: trace does not match layer stack");
  if (output_grad.size() != layers.back().out_dim())
    throw shape_error("backward: output gradient length mismatch");

  backward_result result;
  result.layers.resize(layers.size());
  std::vector<double> delta(output_grad.begin(), output_grad.end());
  for (std::size_t li = layers.size(); li-- > 0;) {
    const dense_layer& layer = layers[li];
    const layer_trace& lt = trace.layers[li];
    const bool skip_act = grad_wrt_preactivation && li + 1 == layers.size();
    std::vector<double> dz(layer.out_dim());
    for (std::size_t i = 0; i < layer.out_dim(); ++i)
      dz[i] = skip_act ? delta[i]
                       : delta[i] * activation_derivative(layer.act, lt.pre[i], lt.post[i]);

    const std::vector<double>& prev = li == 0 ? trace.input : trace.layers[li - 1].post;
    layer_grad grad = zero_grad_like(layer);
    for (std::size_t i = 0; i < layer.out_dim(); ++i) {
      grad.biases[i] = dz[i];
      double* grow = grad.weights.data.data() + i * layer.in_dim();
      for (std::size_t j = 0; j < layer.in_dim(); ++j) grow[j] = dz[i] * prev[j];
    }
    result.layers[li] = std::move(grad);

    std::vector<double> next(layer.in_dim(), 0.0);
    for (std::size_t i = 0; i < layer.out_dim(); ++i) {
      const double* wrow = layer.weights.data.data() + i * layer.in_dim();
      for (std::size_t j = 0; j < layer.in_dim(); ++j) next[j] += wrow[j] * dz[i];
    }
    delta = std::move(next);
  }
  result.input_grad = std::move(delta);
  return result;
}

// Layers below frozen_layer_count (counting from the input side) are left
// untouched by updates; gradients for them may still be computed upstream.
struct freeze_mask {
  std::size_t frozen_layer_count = 0;
};

struct adam_config {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct adam_state {
  adam_config config;
  std::vector<layer_grad> m;  // first moments, parameter shapes
  std::vector<layer_grad> v;  // second moments
  std::int64_t step = 0;
};

inline adam_state make_adam(const network& net, adam_config cfg = {}) {
  adam_state state;
  state.config = cfg;
  state.m = zero_gradients(net);
  state.v = zero_gradients(net);
  return state;
}

// One Adam step over layers in [mask.frozen_layer_count, active_limit).
// Inactive layers keep parameters AND moments bit-identical; the step
// counter advances once per call. Throws numeric_error if any updated
// parameter becomes non-finite.
inline void apply_update(network& net, const std::vector<layer_grad>& grads, adam_state& state,
                         freeze_mask mask = {},
                         std::size_t active_limit = std::numeric_limits<std::size_t>::max()) {
  if (grads.size() != net.layers.size() || state.m.size() != net.layers.size())
    throw shape_error("apply_update: layer count mismatch");

  state.step += 1;
  const adam_config& cfg = state.config;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const std::size_t last = std::min(active_limit, net.layers.size());

  for (std::size_t l = mask.frozen_layer_count; l < last; ++l) {
    dense_layer& layer = net.layers[l];
    const layer_grad& g = grads[l];
    if (g.weights.data.size() != layer.weights.data.size() ||
        g.biases.size() != layer.biases.size())
      throw shape_error("apply_update: gradient shape mismatch at layer " + std::to_string(l));

    auto step_param = [&](double& p, double grad, double& m, double& v) {
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad;
      p -= cfg.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + cfg.epsilon);
      if (!std::isfinite(p))
        throw numeric_error("apply_update: non-finite parameter after update");
    };
    for (std::size_t i = 0; i < layer.weights.data.size(); ++i)
      step_param(layer.weights.data[i], g.weights.data[i], state.m[l].weights.data[i],
                 state.v[l].weights.data[i]);
    for (std::size_t i = 0; i < layer.biases.size(); ++i)
      step_param(layer.biases[i], g.biases[i], state.m[l].biases[i], state.v[l].biases[i]);
  }
}

// Central differences per parameter against the supplied analytic gradients.
// Returns max over parameters of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
template <typename LossFn>
inline double finite_difference_check(LossFn&& loss_fn, const network& params,
                                      const std::vector<layer_grad>& analytic,
                                      double step = 1e-5) {
  if (analytic.size() != params.layers.size())
    throw shape_error("finite_difference_check: gradient layer count mismatch");

  network work = params;
  double max_rel = 0.0;
  auto probe = [&](double& slot, double analytic_grad) {
    const double keep = slot;
    slot = keep + step;
    const double lp = loss_fn(static_cast<const network&>(work));
    slot = keep - step;
    const double lm = loss_fn(static_cast<const network&>(work));
    slot = keep;
    if (!std::isfinite(lp) || !std::isfinite(lm))
      throw numeric_error("finite_difference_check: non-finite loss");
    const double numeric = (lp - lm) / (2.0 * step);
    const double denom = std::max(1e-8, std::abs(analytic_grad) + std::abs(numeric));
    max_rel = std::max(max_rel, std::abs(analytic_grad - numeric) / denom);
  };

  for (std::size_t l = 0; l < work.layers.size(); ++l) {
    for (std::size_t i = 0; i < work.layers[l].weights.data.size(); ++i)
      probe(work.layers[l].weights.data[i], analytic[l].weights.data[i]);
    for (std::size_t i = 0; i < work.layers[l].biases.size(); ++i)
      probe(work.layers[l].biases[i], analytic[l].biases[i]);
  }
  return max_rel;
}

}  // namespace siamtl
