#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "siamtl/errors.hpp"
#include "siamtl/nn.hpp"
#include "siamtl/pairs.hpp"

namespace siamtl {

// Similarities are clamped into [probability_floor, 1 - probability_floor]
// before any logarithm downstream.
inline constexpr double probability_floor = 1e-7;

inline double clamp_probability(double p) {
  return std::clamp(p, probability_floor, 1.0 - probability_floor);
}

// Twin network: a shared extractor stack feeding an L1-merge decision head.
// Weight sharing is structural; both twins read the same parameter set.
struct siamese_net {
  network params;
  std::size_t extractor_layers = 0;

  std::size_t input_dim() const { return params.input_dim(); }
  std::size_t embedding_dim() const { return params.layers[extractor_layers - 1].out_dim(); }

  std::span<const dense_layer> extractor() const {
    return std::span<const dense_layer>(params.layers).subspan(0, extractor_layers);
  }
  std::span<const dense_layer> head() const {
    return std::span<const dense_layer>(params.layers).subspan(extractor_layers);
  }
};

// Extractor stack all-relu, head = relu hidden + single sigmoid output on
// the elementwise |a - b| merge vector.
inline siamese_net make_siamese(std::size_t input_dim, std::span<const std::size_t> extractor_dims,
                                std::size_t head_hidden, std::uint64_t seed) {
  if (extractor_dims.empty()) throw config_error("make_siamese: extractor needs at least one layer");
  std::vector<std::size_t> dims;
  dims.push_back(input_dim);
  dims.insert(dims.end(), extractor_dims.begin(), extractor_dims.end());
  dims.push_back(head_hidden);
  dims.push_back(1);
  std::vector<activation> acts(dims.size() - 1, activation::relu);
  acts.back() = activation::sigmoid;

  siamese_net net;
  net.params = init_network(dims, acts, seed);
  net.extractor_layers = extractor_dims.size();
  return net;
}

// The 64 -> 64 -> 32 -> 16 extractor with a 16-node decision head.
inline siamese_net make_default_siamese(std::uint64_t seed) {
  const std::size_t extractor_dims[] = {64, 32, 16};
  return make_siamese(64, extractor_dims, 16, seed);
}

inline std::vector<double> extract(const siamese_net& net, std::span<const double> x) {
  return forward(net.extractor(), x).output();
}

// Decision-head probability for a pair of precomputed embeddings.
inline double head_probability(const siamese_net& net, std::span<const double> ea,
                               std::span<const double> eb) {
  if (ea.size() != eb.size()) throw shape_error("head_probability: embedding size mismatch");
  std::vector<double> merge(ea.size());
  for (std::size_t i = 0; i < merge.size(); ++i) merge[i] = std::abs(ea[i] - eb[i]);
  return clamp_probability(forward(net.head(), merge).output()[0]);
}

inline double similarity(const siamese_net& net, std::span<const double> a,
                         std::span<const double> b) {
  const std::vector<double> ea = extract(net, a);
  const std::vector<double> eb = extract(net, b);
  return head_probability(net, ea, eb);
}

// -(y ln p + (1-y) ln(1-p)); p must already be clamped into (0,1)
inline double bce_loss(double p, int y) {
  return y == 1 ? -std::log(p) : -std::log(1.0 - p);
}

namespace detail {

inline double sign_of(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Extractor forward traces for every distinct index in the batch, keyed and
// iterated in sorted order so gradient accumulation order is deterministic.
inline std::map<std::size_t, forward_trace> extractor_traces(
    const siamese_net& net, std::span<const std::vector<double>> features,
    const pair_batch& batch) {
  std::map<std::size_t, forward_trace> traces;
  for (const pair_item& p : batch.pairs) {
    for (std::size_t idx : {p.first, p.second}) {
      if (idx >= features.size())
        throw invalid_input_error("pair batch references sample index out of range");
      if (!traces.count(idx)) traces.emplace(idx, forward(net.extractor(), features[idx]));
    }
  }
  return traces;
}

}  // namespace detail

struct bce_batch_result {
  double loss = 0.0;
  std::vector<layer_grad> grads;
};

// Mean binary cross-entropy over the batch: target 1 for same-class pairs.
// Loss only; used as the finite-difference probe target.
inline double bce_batch_loss(const siamese_net& net, std::span<const std::vector<double>> features,
                             const pair_batch& batch) {
  if (batch.pairs.empty()) throw invalid_input_error("bce_batch_loss: empty batch");
  std::map<std::size_t, std::vector<double>> embeddings;
  double loss = 0.0;
  for (const pair_item& p : batch.pairs) {
    for (std::size_t idx : {p.first, p.second})
      if (!embeddings.count(idx)) embeddings.emplace(idx, extract(net, features[idx]));
    const double prob = head_probability(net, embeddings.at(p.first), embeddings.at(p.second));
    loss += bce_loss(prob, p.same_class ? 1 : 0);
  }
  return loss / static_cast<double>(batch.pairs.size());
}

// Mean-BCE value and gradients for every parameter. The |a-b| merge routes
// the head's input gradient into both twins with opposite signs; shared
// extractor weights accumulate both contributions.
inline bce_batch_result bce_batch_gradient(const siamese_net& net,
                                           std::span<const std::vector<double>> features,
                                           const pair_batch& batch) {
  if (batch.pairs.empty()) throw invalid_input_error("bce_batch_gradient: empty batch");

  auto traces = detail::extractor_traces(net, features, batch);
  std::map<std::size_t, std::vector<double>> embedding_grads;

  bce_batch_result result;
  result.grads = zero_gradients(net.params);
  const double inv_n = 1.0 / static_cast<double>(batch.pairs.size());

  for (const pair_item& p : batch.pairs) {
    const std::vector<double>& ea = traces.at(p.first).output();
    const std::vector<double>& eb = traces.at(p.second).output();
    std::vector<double> merge(ea.size());
    for (std::size_t i = 0; i < merge.size(); ++i) merge[i] = std::abs(ea[i] - eb[i]);

    const forward_trace head_trace = forward(net.head(), merge);
    const double raw = head_trace.output()[0];
    const double prob = clamp_probability(raw);
    const int y = p.same_class ? 1 : 0;
    result.loss += bce_loss(prob, y) * inv_n;

    // dL/d(final pre-activation); zero inside the clamped region so the
    // gradient matches the loss actually evaluated
    double dz = 0.0;
    if (raw > probability_floor && raw < 1.0 - probability_floor)
      dz = (raw - static_cast<double>(y)) * inv_n;

    const backward_result head_back =
        backward(net.head(), head_trace, std::span<const double>(&dz, 1), true);
    accumulate(result.grads, net.extractor_layers, head_back.layers);

    auto& ga = embedding_grads[p.first];
    if (ga.empty()) ga.assign(ea.size(), 0.0);
    auto& gb = embedding_grads[p.second];
    if (gb.empty()) gb.assign(eb.size(), 0.0);
    for (std::size_t i = 0; i < merge.size(); ++i) {
      const double s = detail::sign_of(ea[i] - eb[i]);
      ga[i] += s * head_back.input_grad[i];
      gb[i] -= s * head_back.input_grad[i];
    }
  }

  for (const auto& [idx, egrad] : embedding_grads) {
    const backward_result back = backward(net.extractor(), traces.at(idx), egrad);
    accumulate(result.grads, 0, back.layers);
  }
  return result;
}

struct distance_stats {
  double same_mean = 0.0;  // S: mean Euclidean distance over same-class pairs
  double diff_mean = 0.0;  // D: over different-class pairs
};

inline distance_stats embedding_distance_stats(std::span<const std::vector<double>> embeddings,
                                               const pair_batch& batch) {
  std::size_t same = 0, diff = 0;
  double same_sum = 0.0, diff_sum = 0.0;
  for (const pair_item& p : batch.pairs) {
    if (p.first >= embeddings.size() || p.second >= embeddings.size())
      throw invalid_input_error("embedding_distance_stats: index out of range");
    const std::vector<double>& a = embeddings[p.first];
    const std::vector<double>& b = embeddings[p.second];
    if (a.size() != b.size())
      throw shape_error("embedding_distance_stats: embedding size mismatch");
    double sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
    const double dist = std::sqrt(sq);
    if (p.same_class) {
      same_sum += dist;
      ++same;
    } else {
      diff_sum += dist;
      ++diff;
    }
  }
  if (same == 0 || diff == 0)
    throw invalid_input_error(
        "distance loss needs at least one same-class and one different-class pair");
  return {same_sum / static_cast<double>(same), diff_sum / static_cast<double>(diff)};
}

inline constexpr double default_degenerate_threshold = 1e-6;

// (D + S) / (D - S). Returns nullopt when D - S <= threshold: minimizing a
// non-positive denominator would push D below S, so the caller skips the
// update and records the event instead.
inline std::optional<double> distance_ratio(const distance_stats& stats,
                                            double threshold = default_degenerate_threshold) {
  const double denom = stats.diff_mean - stats.same_mean;
  if (denom <= threshold) return std::nullopt;
  return (stats.diff_mean + stats.same_mean) / denom;
}

inline std::optional<double> distance_loss(std::span<const std::vector<double>> embeddings,
                                           const pair_batch& batch,
                                           double threshold = default_degenerate_threshold) {
  return distance_ratio(embedding_distance_stats(embeddings, batch), threshold);
}

struct distance_grad_result {
  double loss = 0.0;
  distance_stats stats;
  std::vector<layer_grad> grads;  // head blocks structurally zero
};

// Analytic gradient of the distance ratio with respect to extractor
// parameters only; decision-head blocks stay exactly zero. Zero-distance
// pairs contribute the 0 subgradient.
inline std::optional<distance_grad_result> distance_loss_grad(
    const siamese_net& net, std::span<const std::vector<double>> features, const pair_batch& batch,
    double threshold = default_degenerate_threshold) {
  auto traces = detail::extractor_traces(net, features, batch);

  std::size_t same = 0, diff = 0;
  for (const pair_item& p : batch.pairs) p.same_class ? ++same : ++diff;
  if (same == 0 || diff == 0)
    throw invalid_input_error(
        "distance loss needs at least one same-class and one different-class pair");

  std::vector<std::vector<double>> embeddings(features.size());
  for (const auto& [idx, trace] : traces) embeddings[idx] = trace.output();
  const distance_stats stats =
      embedding_distance_stats(std::span<const std::vector<double>>(embeddings), batch);
  const auto ratio = distance_ratio(stats, threshold);
  if (!ratio) return std::nullopt;

  const double denom = stats.diff_mean - stats.same_mean;
  const double dl_ds = 2.0 * stats.diff_mean / (denom * denom);
  const double dl_dd = -2.0 * stats.same_mean / (denom * denom);

  std::map<std::size_t, std::vector<double>> embedding_grads;
  const std::size_t emb_dim = net.embedding_dim();
  for (const pair_item& p : batch.pairs) {
    const std::vector<double>& a = embeddings[p.first];
    const std::vector<double>& b = embeddings[p.second];
    double sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sq += (a[i] - b[i]) * (a[i] - b[i]);
    const double dist = std::sqrt(sq);
    if (dist <= 0.0) continue;
    const double coef = (p.same_class ? dl_ds / static_cast<double>(same)
                                      : dl_dd / static_cast<double>(diff)) /
                        dist;
    auto& ga = embedding_grads[p.first];
    if (ga.empty()) ga.assign(emb_dim, 0.0);
    auto& gb = embedding_grads[p.second];
    if (gb.empty()) gb.assign(emb_dim, 0.0);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = coef * (a[i] - b[i]);
      ga[i] += d;
      gb[i] -= d;
    }
  }

  distance_grad_result result;
  result.loss = *ratio;
  result.stats = stats;
  result.grads = zero_gradients(net.params);
  for (const auto& [idx, egrad] : embedding_grads) {
    const backward_result back = backward(net.extractor(), traces.at(idx), egrad);
    accumulate(result.grads, 0, back.layers);
  }
  return result;
}

struct train_step_config {
  bool use_distance_loss = false;
  std::size_t frozen_layers = 0;
  double degenerate_threshold = default_degenerate_threshold;
  double distance_learning_rate = 0.0;  // 0 = same rate as the BCE step
};

struct batch_metrics {
  double bce = 0.0;
  std::optional<double> distance;  // ratio before the distance step, when applied
  bool distance_skipped = false;
};

// One training step on a pair batch: a BCE update over all unfrozen
// parameters, then (optionally) a distance-ratio update over unfrozen
// extractor parameters recomputed from the post-BCE weights. The distance
// step keeps its own optimizer state: feeding its gradients into the BCE
// moments (and double-counting the step counter) measurably degrades the
// BCE trajectory even when the distance step size is negligible.
inline batch_metrics train_pair_batch(siamese_net& net,
                                      std::span<const std::vector<double>> features,
                                      const pair_batch& batch, adam_state& optimizer,
                                      const train_step_config& cfg,
                                      adam_state* distance_optimizer = nullptr) {
  if (batch.pairs.empty()) throw invalid_input_error("train_pair_batch: empty batch");
  if (cfg.use_distance_loss && distance_optimizer == nullptr)
    throw invalid_input_error("train_pair_batch: distance loss needs its optimizer state");

  batch_metrics metrics;
  const bce_batch_result bce = bce_batch_gradient(net, features, batch);
  metrics.bce = bce.loss;
  apply_update(net.params, bce.grads, optimizer, freeze_mask{cfg.frozen_layers});

  if (cfg.use_distance_loss) {
    const auto dist = distance_loss_grad(net, features, batch, cfg.degenerate_threshold);
    if (!dist) {
      metrics.distance_skipped = true;
    } else {
      metrics.distance = dist->loss;
      if (cfg.distance_learning_rate > 0.0)
        distance_optimizer->config.learning_rate = cfg.distance_learning_rate;
      apply_update(net.params, dist->grads, *distance_optimizer, freeze_mask{cfg.frozen_layers},
                   net.extractor_layers);
    }
  }
  return metrics;
}

}  // namespace siamtl
