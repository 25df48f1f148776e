#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "siamtl/protocols.hpp"

namespace siamtl {

enum class protocol { oodt, idt, fine_tune, fine_tune_distance };

inline std::string_view to_string(protocol p) {
  switch (p) {
    case protocol::oodt: return "oodt";
    case protocol::idt: return "idt";
    case protocol::fine_tune: return "fine_tune";
    case protocol::fine_tune_distance: return "fine_tune_distance";
  }
  return "oodt";
}

inline std::optional<protocol> protocol_from_string(std::string_view text) {
  if (text == "oodt") return protocol::oodt;
  if (text == "idt") return protocol::idt;
  if (text == "fine_tune") return protocol::fine_tune;
  if (text == "fine_tune_distance") return protocol::fine_tune_distance;
  return std::nullopt;
}

struct experiment_config {
  std::string source_tag = "source";
  std::string target_tag = "target";
  std::vector<int> frozen_layers = {0, 1, 2};
  std::vector<int> adopted_speakers = {2, 4, 6, 8, 10, 12, 14, 16, 18, 20};
  int repetitions = 10;
  bool run_without_distance = true;
  bool run_with_distance = true;
  bool include_oodt = true;
  std::uint64_t master_seed = 0;
  train_config training;
  int parallel = 1;
};

struct trial_row {
  protocol proto = protocol::oodt;
  std::string source;
  int frozen_layers = 0;
  int adopted_speakers = 0;
  std::uint64_t seed = 0;
  double uar = 0.0;
  int distance_skips = 0;
  double wall_seconds = 0.0;  // kept for summaries; never serialized
};

struct aggregate_row {
  protocol proto = protocol::oodt;
  int frozen_layers = 0;
  int adopted_speakers = 0;
  int trials = 0;
  double uar_mean = 0.0;
  double uar_std = 0.0;  // sample standard deviation, 0 for a single trial
};

struct trial_failure {
  protocol proto = protocol::fine_tune;
  int frozen_layers = 0;
  int adopted_speakers = 0;
  std::uint64_t seed = 0;
  std::string message;
};

struct experiment_result {
  std::vector<trial_row> trials;        // successful trials only
  std::vector<aggregate_row> aggregates;
  std::vector<trial_failure> failures;  // per-trial errors, in sweep order
};

inline bool trial_order(const trial_row& a, const trial_row& b) {
  return std::tuple(static_cast<int>(a.proto), a.frozen_layers, a.adopted_speakers, a.seed) <
         std::tuple(static_cast<int>(b.proto), b.frozen_layers, b.adopted_speakers, b.seed);
}

// Group by (protocol, frozen_layers, adopted_speakers); mean/std are
// recomputable from the trial rows.
inline std::vector<aggregate_row> aggregate_trials(std::vector<trial_row> trials) {
  std::sort(trials.begin(), trials.end(), trial_order);
  std::vector<aggregate_row> out;
  std::size_t i = 0;
  while (i < trials.size()) {
    std::size_t j = i;
    while (j < trials.size() && trials[j].proto == trials[i].proto &&
           trials[j].frozen_layers == trials[i].frozen_layers &&
           trials[j].adopted_speakers == trials[i].adopted_speakers)
      ++j;
    aggregate_row agg;
    agg.proto = trials[i].proto;
    agg.frozen_layers = trials[i].frozen_layers;
    agg.adopted_speakers = trials[i].adopted_speakers;
    agg.trials = static_cast<int>(j - i);
    double sum = 0.0;
    for (std::size_t k = i; k < j; ++k) sum += trials[k].uar;
    agg.uar_mean = sum / static_cast<double>(agg.trials);
    double sq = 0.0;
    for (std::size_t k = i; k < j; ++k) {
      const double d = trials[k].uar - agg.uar_mean;
      sq += d * d;
    }
    agg.uar_std = agg.trials > 1 ? std::sqrt(sq / static_cast<double>(agg.trials - 1)) : 0.0;
    out.push_back(agg);
    i = j;
  }
  return out;
}

namespace detail {

struct trial_spec {
  int frozen = 0;
  int adopted = 0;
  bool use_distance = false;
  int rep = 0;
  std::uint64_t adoption_seed = 0;
  std::uint64_t training_seed = 0;
};

template <typename Fn>
inline void parallel_for(std::size_t count, int workers, Fn&& body) {
  if (workers <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      body(i);
    }
  };
  std::vector<std::thread> pool;
  const int n = std::min<int>(workers, static_cast<int>(count));
  pool.reserve(static_cast<std::size_t>(n));
  for (int t = 0; t < n; ++t) pool.emplace_back(run);
  for (std::thread& t : pool) t.join();
}

}  // namespace detail

// Full factorial sweep: frozen-layer counts x adopted-speaker counts x
// loss modes x repetitions, plus one OODT baseline row evaluated on the
// whole target. Every repetition re-draws speakers and samples from a seed
// derived off the master seed, so results are independent of execution
// order and reproducible end to end. The adoption draw for repetition r at
// speaker count k is shared across loss modes and freeze levels, making the
// with/without comparison paired.
inline experiment_result run_experiment(const dataset& source, const dataset& target,
                                        const experiment_config& cfg) {
  if (cfg.repetitions < 1) throw config_error("experiment: repetitions must be >= 1");
  if (cfg.frozen_layers.empty()) throw config_error("experiment: frozen_layers list is empty");
  for (int f : cfg.frozen_layers)
    if (f < 0 || f > 2)
      throw config_error("experiment: frozen_layers must lie in {0, 1, 2}");
  if (cfg.adopted_speakers.empty())
    throw config_error("experiment: adopted_speakers list is empty");
  for (int k : cfg.adopted_speakers) {
    if (k < 1) throw config_error("experiment: adopted speaker counts must be >= 1");
    if (static_cast<std::size_t>(k) > target.speaker_count())
      throw invalid_input_error("experiment: adopted speaker count " + std::to_string(k) +
                                " exceeds target speaker count " +
                                std::to_string(target.speaker_count()));
  }
  if (!cfg.run_with_distance && !cfg.run_without_distance)
    throw config_error("experiment: at least one loss mode must be enabled");

  const std::uint64_t pretrain_seed = derive_seed(cfg.master_seed, seed_stream::init);
  const emotion_model pretrained = train_oodt(source, cfg.training, pretrain_seed);

  experiment_result result;
  if (cfg.include_oodt) {
    const auto start = std::chrono::steady_clock::now();
    const reference_set refs =
        reference_set::build_all(pretrained, source, cfg.training.reference_cap,
                                 derive_seed(cfg.master_seed, seed_stream::references));
    std::vector<std::size_t> all(target.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    trial_row row;
    row.proto = protocol::oodt;
    row.source = cfg.source_tag;
    row.seed = pretrain_seed;
    row.uar = evaluate_uar(pretrained, refs, target, all);
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.trials.push_back(std::move(row));
  }

  std::vector<detail::trial_spec> specs;
  std::vector<bool> modes;
  if (cfg.run_without_distance) modes.push_back(false);
  if (cfg.run_with_distance) modes.push_back(true);
  for (int frozen : cfg.frozen_layers)
    for (int k : cfg.adopted_speakers)
      for (bool mode : modes)
        for (int rep = 0; rep < cfg.repetitions; ++rep) {
          detail::trial_spec spec;
          spec.frozen = frozen;
          spec.adopted = k;
          spec.use_distance = mode;
          spec.rep = rep;
          const std::uint64_t cell =
              derive_seed(derive_seed(cfg.master_seed, seed_stream::adoption),
                          static_cast<std::uint64_t>(k));
          spec.adoption_seed = derive_seed(cell, static_cast<std::uint64_t>(rep));
          const std::uint64_t tcell =
              derive_seed(derive_seed(derive_seed(cfg.master_seed, seed_stream::training),
                                      static_cast<std::uint64_t>(k)),
                          static_cast<std::uint64_t>(rep));
          spec.training_seed = derive_seed(tcell, static_cast<std::uint64_t>(frozen));
          specs.push_back(spec);
        }

  std::vector<trial_row> rows(specs.size());
  std::vector<std::string> errors(specs.size());
  std::vector<char> failed(specs.size(), 0);
  detail::parallel_for(specs.size(), cfg.parallel, [&](std::size_t i) {
    const detail::trial_spec& spec = specs[i];
    const auto start = std::chrono::steady_clock::now();
    try {
      rng adoption_rng(spec.adoption_seed);
      const adopted_set adopted =
          select_adopted(target, static_cast<std::size_t>(spec.adopted), adoption_rng);
      const std::vector<std::size_t> test_indices =
          complement_indices(target.size(), adopted.indices);

      fine_tune_stats stats;
      const emotion_model tuned =
          fine_tune(pretrained, target, adopted, static_cast<std::size_t>(spec.frozen),
                    spec.use_distance, cfg.training, spec.training_seed, &stats);
      const reference_set refs = reference_set::build(tuned, target, adopted.indices);

      trial_row row;
      row.proto = spec.use_distance ? protocol::fine_tune_distance : protocol::fine_tune;
      row.source = cfg.source_tag;
      row.frozen_layers = spec.frozen;
      row.adopted_speakers = spec.adopted;
      row.seed = spec.training_seed;
      row.uar = evaluate_uar(tuned, refs, target, test_indices);
      row.distance_skips = stats.distance_skips;
      row.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      rows[i] = std::move(row);
    } catch (const std::exception& e) {
      // keep the sweep running; surviving trials still get flushed
      failed[i] = 1;
      errors[i] = e.what();
    }
  });

  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (failed[i]) {
      const detail::trial_spec& spec = specs[i];
      trial_failure failure;
      failure.proto = spec.use_distance ? protocol::fine_tune_distance : protocol::fine_tune;
      failure.frozen_layers = spec.frozen;
      failure.adopted_speakers = spec.adopted;
      failure.seed = spec.training_seed;
      failure.message = errors[i];
      result.failures.push_back(std::move(failure));
    } else {
      result.trials.push_back(std::move(rows[i]));
    }
  }
  std::sort(result.trials.begin(), result.trials.end(), trial_order);
  result.aggregates = aggregate_trials(result.trials);
  return result;
}

// LOSO rows for the idt subcommand, one per fold, in sorted speaker order.
inline experiment_result idt_rows(const dataset& target, const train_config& cfg,
                                  std::uint64_t seed, const std::string& target_tag) {
  const idt_result idt = run_idt(target, cfg, seed);
  experiment_result result;
  for (std::size_t fi = 0; fi < idt.fold_uars.size(); ++fi) {
    trial_row row;
    row.proto = protocol::idt;
    row.source = target_tag;
    row.seed = derive_seed(seed, fi);
    row.uar = idt.fold_uars[fi];
    result.trials.push_back(std::move(row));
  }
  result.aggregates = aggregate_trials(result.trials);
  return result;
}

}  // namespace siamtl
