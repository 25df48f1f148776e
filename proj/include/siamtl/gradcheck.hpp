#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "siamtl/siamese.hpp"

namespace siamtl {

// A seeded small-network instance on which central finite differences are
// numerically meaningful for both training losses.
struct gradcheck_instance {
  siamese_net net;
  std::vector<std::vector<double>> features;
  pair_batch batch;
};

namespace detail {

// Central differences carry ~ulp(L)/(2*step) of rounding noise, so a probe
// is only conclusive where the analytic gradient is either comfortably
// larger than that noise or exactly zero with a bitwise-invariant loss
// (dead relu paths, translation-invariant bias directions). The scan below
// walks derived seeds until an instance is clean on every count:
//   - no pre-activation parked on the relu kink (zero-bias relu stacks can
//     feed exact zeros forward, and one step of the probe must not cross),
//   - no |a - b| merge coordinate near its kink,
//   - distance stats away from the degenerate-denominator guard,
//   - every analytic gradient of both losses exactly 0 or >= 1e-6,
//   - every exactly-0 gradient bitwise invariant under +-step.
inline bool instance_well_posed(const gradcheck_instance& inst, double step) {
  const siamese_net& net = inst.net;
  const std::span<const std::vector<double>> features(inst.features);

  std::vector<std::vector<double>> embeddings;
  embeddings.reserve(inst.features.size());
  for (const auto& f : inst.features) {
    const forward_trace trace = forward(net.extractor(), f);
    for (const layer_trace& lt : trace.layers)
      for (double pre : lt.pre)
        if (std::abs(pre) < 1e-4) return false;
    embeddings.push_back(trace.output());
  }
  for (const pair_item& p : inst.batch.pairs) {
    std::vector<double> merge(embeddings[p.first].size());
    for (std::size_t i = 0; i < merge.size(); ++i) {
      merge[i] = std::abs(embeddings[p.first][i] - embeddings[p.second][i]);
      if (merge[i] < 1e-3) return false;
    }
    const forward_trace head_trace = forward(net.head(), merge);
    for (const layer_trace& lt : head_trace.layers)
      for (double pre : lt.pre)
        if (std::abs(pre) < 1e-4) return false;
  }

  const distance_stats stats =
      embedding_distance_stats(std::span<const std::vector<double>>(embeddings), inst.batch);
  if (!(stats.same_mean > 0.05 && stats.diff_mean - stats.same_mean > 5e-2)) return false;

  const auto healthy_magnitudes = [](const std::vector<layer_grad>& grads) {
    for (const layer_grad& g : grads) {
      for (double v : g.weights.data)
        if (v != 0.0 && std::abs(v) < 1e-6) return false;
      for (double v : g.biases)
        if (v != 0.0 && std::abs(v) < 1e-6) return false;
    }
    return true;
  };

  const bce_batch_result bce = bce_batch_gradient(net, features, inst.batch);
  if (!healthy_magnitudes(bce.grads)) return false;
  const auto dist = distance_loss_grad(net, features, inst.batch);
  if (!dist || !healthy_magnitudes(dist->grads)) return false;

  // bitwise-invariance probe over the exactly-zero gradient entries
  network work = net.params;
  auto bce_loss_at = [&]() {
    const siamese_net probe{work, net.extractor_layers};
    return bce_batch_loss(probe, features, inst.batch);
  };
  auto dist_loss_at = [&]() {
    const siamese_net probe{work, net.extractor_layers};
    std::vector<std::vector<double>> emb(inst.features.size());
    for (std::size_t i = 0; i < inst.features.size(); ++i)
      emb[i] = extract(probe, inst.features[i]);
    const auto value = distance_loss(std::span<const std::vector<double>>(emb), inst.batch);
    return value ? *value : std::numeric_limits<double>::quiet_NaN();
  };
  auto invariant_when_zero = [&](const std::vector<layer_grad>& grads, auto&& loss_at) {
    const double base = loss_at();
    for (std::size_t l = 0; l < work.layers.size(); ++l) {
      auto probe_slot = [&](double& slot, double analytic) {
        if (analytic != 0.0) return true;
        const double keep = slot;
        slot = keep + step;
        const double lp = loss_at();
        slot = keep - step;
        const double lm = loss_at();
        slot = keep;
        return lp == base && lm == base;
      };
      for (std::size_t i = 0; i < work.layers[l].weights.data.size(); ++i)
        if (!probe_slot(work.layers[l].weights.data[i], grads[l].weights.data[i])) return false;
      for (std::size_t i = 0; i < work.layers[l].biases.size(); ++i)
        if (!probe_slot(work.layers[l].biases[i], grads[l].biases[i])) return false;
    }
    return true;
  };
  if (!invariant_when_zero(bce.grads, bce_loss_at)) return false;
  if (!invariant_when_zero(dist->grads, dist_loss_at)) return false;
  return true;
}

}  // namespace detail

// 8-dim inputs, 8-4-2 extractor, 2-node head; 12 samples in two synthetic
// classes of 6 with a balanced pair batch. Deterministic given `seed`.
inline gradcheck_instance make_gradcheck_instance(std::uint64_t seed, double step = 1e-5) {
  const std::size_t input_dim = 8;
  const std::size_t extractor_dims[] = {8, 4, 2};

  for (std::uint64_t attempt = 0; attempt < 1024; ++attempt) {
    const std::uint64_t attempt_seed = derive_seed(seed, attempt);
    gradcheck_instance inst;
    inst.net = make_siamese(input_dim, extractor_dims, 2, derive_seed(attempt_seed, 1));

    rng gen(derive_seed(attempt_seed, 2));
    inst.features.assign(12, std::vector<double>(input_dim, 0.0));
    for (std::size_t i = 0; i < inst.features.size(); ++i)
      for (double& f : inst.features[i]) f = gen.uniform(-1.0, 1.0) + (i < 6 ? 0.5 : -0.5);

    for (std::size_t k = 0; k < 6; ++k) {
      const std::size_t a = gen.below(6), b = (a + 1 + gen.below(5)) % 6;
      inst.batch.pairs.push_back({a, b, true});
      inst.batch.pairs.push_back({gen.below(6), 6 + gen.below(6), false});
    }

    if (detail::instance_well_posed(inst, step)) return inst;
    inst.batch.pairs.clear();
  }
  throw numeric_error("gradcheck: no well-posed instance found for this seed");
}

struct gradcheck_report {
  double bce_error = 0.0;
  double distance_error = 0.0;
  double threshold = 1e-4;
  bool pass = false;
  std::string text;
};

// Finite-difference audit of both training losses on a seeded small
// network. inject_relative_error perturbs the largest-magnitude extractor
// weight gradient by that fraction (a detector-sensitivity fixture); the
// default 0 checks the real gradients.
inline gradcheck_report run_gradcheck(std::uint64_t seed, double inject_relative_error = 0.0,
                                      double step = 1e-5) {
  const gradcheck_instance inst = make_gradcheck_instance(seed, step);
  const siamese_net& net = inst.net;
  const std::span<const std::vector<double>> feats(inst.features);
  gradcheck_report report;

  auto inject = [&](std::vector<layer_grad>& grads) {
    double* target = &grads[0].weights.data[0];
    for (std::size_t l = 0; l < net.extractor_layers; ++l)
      for (double& g : grads[l].weights.data)
        if (std::abs(g) > std::abs(*target)) target = &g;
    *target *= 1.0 + inject_relative_error;
  };

  bce_batch_result bce = bce_batch_gradient(net, feats, inst.batch);
  if (inject_relative_error != 0.0) inject(bce.grads);
  report.bce_error = finite_difference_check(
      [&](const network& params) {
        const siamese_net probe{params, net.extractor_layers};
        return bce_batch_loss(probe, feats, inst.batch);
      },
      net.params, bce.grads, step);

  auto dist = distance_loss_grad(net, feats, inst.batch);
  if (!dist) throw numeric_error("gradcheck: degenerate distance batch");
  if (inject_relative_error != 0.0) inject(dist->grads);
  report.distance_error = finite_difference_check(
      [&](const network& params) {
        const siamese_net probe{params, net.extractor_layers};
        std::vector<std::vector<double>> embeddings(inst.features.size());
        for (std::size_t i = 0; i < inst.features.size(); ++i)
          embeddings[i] = extract(probe, inst.features[i]);
        const auto loss =
            distance_loss(std::span<const std::vector<double>>(embeddings), inst.batch);
        if (!loss) throw numeric_error("gradcheck: distance loss degenerate under probe");
        return *loss;
      },
      net.params, dist->grads, step);

  report.pass = report.bce_error < report.threshold && report.distance_error < report.threshold;

  char line[160];
  std::snprintf(line, sizeof(line), "bce max relative error:      %.6e\n", report.bce_error);
  report.text += line;
  std::snprintf(line, sizeof(line), "distance max relative error: %.6e\n", report.distance_error);
  report.text += line;
  std::snprintf(line, sizeof(line), "threshold:                   %.0e\n", report.threshold);
  report.text += line;
  report.text += report.pass ? "gradcheck: PASS\n" : "gradcheck: FAIL\n";
  return report;
}

}  // namespace siamtl
