#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "siamtl/data.hpp"
#include "siamtl/errors.hpp"
#include "siamtl/siamese.hpp"
#include "siamtl/synth.hpp"

namespace siamtl {

// Unweighted average recall: mean over classes of per-class recall.
// Classes absent from `labels` are excluded; callers can observe the
// exclusions through the optional out-parameter.
inline double uar(std::span<const emotion> predictions, std::span<const emotion> labels,
                  std::vector<emotion>* excluded_classes = nullptr) {
  if (predictions.size() != labels.size())
    throw invalid_input_error("uar: prediction/label length mismatch");
  if (labels.empty()) throw invalid_input_error("uar: empty inputs");

  std::array<std::size_t, emotion_count> total{};
  std::array<std::size_t, emotion_count> correct{};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const std::size_t c = static_cast<std::size_t>(labels[i]);
    ++total[c];
    if (predictions[i] == labels[i]) ++correct[c];
  }
  double sum = 0.0;
  std::size_t present = 0;
  for (emotion e : all_emotions) {
    const std::size_t c = static_cast<std::size_t>(e);
    if (total[c] == 0) {
      if (excluded_classes) excluded_classes->push_back(e);
      continue;
    }
    sum += static_cast<double>(correct[c]) / static_cast<double>(total[c]);
    ++present;
  }
  return sum / static_cast<double>(present);
}

// Trained network plus the normalizer fitted on its training data.
struct emotion_model {
  siamese_net net;
  normalizer norm;
};

// Per-class reference embeddings for log-sum classification. Built from raw
// (unnormalized) samples; the model's normalizer is applied here.
class reference_set {
 public:
  static reference_set build(const emotion_model& model, const dataset& ds,
                             std::span<const std::size_t> indices, std::size_t per_class_cap = 0,
                             std::uint64_t cap_seed = 0) {
    reference_set refs;
    std::array<std::vector<std::size_t>, emotion_count> per_class;
    for (std::size_t i : indices) {
      if (i >= ds.size()) throw invalid_input_error("reference_set: index out of range");
      per_class[static_cast<std::size_t>(ds[i].label)].push_back(i);
    }
    rng cap_rng(cap_seed);
    for (std::size_t c = 0; c < emotion_count; ++c) {
      std::vector<std::size_t>& pool = per_class[c];
      if (per_class_cap > 0 && pool.size() > per_class_cap) {
        cap_rng.shuffle(pool);
        pool.resize(per_class_cap);
        std::sort(pool.begin(), pool.end());
      }
      for (std::size_t i : pool)
        refs.embeddings_[c].push_back(extract(model.net, model.norm.apply(ds[i].features)));
    }
    return refs;
  }

  static reference_set build_all(const emotion_model& model, const dataset& ds,
                                 std::size_t per_class_cap = 0, std::uint64_t cap_seed = 0) {
    std::vector<std::size_t> indices(ds.size());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
    return build(model, ds, indices, per_class_cap, cap_seed);
  }

  const std::vector<std::vector<double>>& of_class(emotion e) const {
    return embeddings_[static_cast<std::size_t>(e)];
  }
  bool complete() const {
    for (const auto& v : embeddings_)
      if (v.empty()) return false;
    return true;
  }

 private:
  std::array<std::vector<std::vector<double>>, emotion_count> embeddings_;
};

// Argmax over class scores; ties break toward the fixed class order
// anger < happiness < sadness < fear.
inline emotion argmax_class_scores(const std::array<double, emotion_count>& scores) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < emotion_count; ++c)
    if (scores[c] > scores[best]) best = c;
  return static_cast<emotion>(best);
}

// score(c) = sum over the class's similarities of ln(similarity).
inline std::array<double, emotion_count> log_sum_scores(
    const std::array<std::vector<double>, emotion_count>& similarities_per_class) {
  std::array<double, emotion_count> scores{};
  for (std::size_t c = 0; c < emotion_count; ++c) {
    if (similarities_per_class[c].empty())
      throw invalid_input_error("log_sum_scores: class '" +
                                std::string(to_string(static_cast<emotion>(c))) +
                                "' has no references");
    double s = 0.0;
    for (double p : similarities_per_class[c]) s += std::log(clamp_probability(p));
    scores[c] = s;
  }
  return scores;
}

inline emotion argmax_log_sum(
    const std::array<std::vector<double>, emotion_count>& similarities_per_class) {
  return argmax_class_scores(log_sum_scores(similarities_per_class));
}

// Log-sum classification of a raw feature vector against the references.
inline emotion classify(const emotion_model& model, const reference_set& refs,
                        std::span<const double> raw_features) {
  if (!refs.complete())
    throw invalid_input_error("classify: references must contain every class");
  const std::vector<double> embedding = extract(model.net, model.norm.apply(raw_features));
  std::array<double, emotion_count> scores{};
  for (std::size_t c = 0; c < emotion_count; ++c) {
    double s = 0.0;
    for (const std::vector<double>& ref : refs.of_class(static_cast<emotion>(c)))
      s += std::log(head_probability(model.net, embedding, ref));
    scores[c] = s;
  }
  return argmax_class_scores(scores);
}

inline double evaluate_uar(const emotion_model& model, const reference_set& refs,
                           const dataset& ds, std::span<const std::size_t> test_indices,
                           std::vector<emotion>* excluded_classes = nullptr) {
  if (test_indices.empty()) throw invalid_input_error("evaluate_uar: empty test set");
  std::vector<emotion> predictions;
  std::vector<emotion> labels;
  predictions.reserve(test_indices.size());
  labels.reserve(test_indices.size());
  for (std::size_t i : test_indices) {
    predictions.push_back(classify(model, refs, ds[i].features));
    labels.push_back(ds[i].label);
  }
  return uar(predictions, labels, excluded_classes);
}

struct train_config {
  std::size_t epochs = 30;
  std::size_t pairs_per_epoch = 512;
  std::size_t batch_size = 32;
  adam_config optimizer;
  pair_scope scope = pair_scope::any;

  // fine-tuning phase; ft_learning_rate <= 0 reuses the pretraining rate
  std::size_t ft_epochs = 50;
  std::size_t ft_pairs_per_epoch = 40;
  std::size_t ft_batch_size = 40;
  std::size_t ft_patience = 10;  // epochs without BCE improvement; 0 disables
  double ft_learning_rate = 0.0;
  double distance_learning_rate = 0.0;  // 0 = same rate as the BCE step

  std::size_t reference_cap = 0;  // per-class cap on classification references; 0 = all
};

inline void validate_train_config(const train_config& cfg) {
  if (cfg.pairs_per_epoch == 0 || cfg.pairs_per_epoch % 2 != 0)
    throw config_error("training: pairs_per_epoch must be positive and even");
  if (cfg.batch_size == 0 || cfg.batch_size % 2 != 0)
    throw config_error("training: batch_size must be positive and even");
  if (cfg.ft_pairs_per_epoch == 0 || cfg.ft_pairs_per_epoch % 2 != 0)
    throw config_error("training: ft_pairs_per_epoch must be positive and even");
  if (cfg.ft_batch_size == 0 || cfg.ft_batch_size % 2 != 0)
    throw config_error("training: ft_batch_size must be positive and even");
  if (cfg.optimizer.learning_rate <= 0.0) throw config_error("training: learning_rate must be > 0");
}

struct training_stats {
  std::size_t epochs_run = 0;
  int distance_skips = 0;
  double final_bce = 0.0;
};

namespace seed_stream {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t pairs = 2;
inline constexpr std::uint64_t adoption = 3;
inline constexpr std::uint64_t training = 4;
inline constexpr std::uint64_t references = 5;
}  // namespace seed_stream

// Epoch/batch pair training loop over an already-normalized dataset.
// Early-stops when the epoch-mean BCE fails to improve for `patience`
// consecutive epochs (0 disables).
inline training_stats run_pair_training(siamese_net& net, const dataset& normalized_train,
                                        std::size_t epochs, std::size_t pairs_per_epoch,
                                        std::size_t batch_size, const adam_config& optimizer_cfg,
                                        pair_scope scope, std::uint64_t seed,
                                        std::size_t frozen_layers, bool use_distance_loss,
                                        std::size_t patience, double distance_learning_rate = 0.0) {
  training_stats stats;
  if (epochs == 0) return stats;

  std::vector<std::vector<double>> features;
  features.reserve(normalized_train.size());
  for (const sample& s : normalized_train.samples()) features.push_back(s.features);

  adam_state optimizer = make_adam(net.params, optimizer_cfg);
  adam_state distance_optimizer = make_adam(net.params, optimizer_cfg);
  rng pair_rng(seed);
  const train_step_config step_cfg{use_distance_loss, frozen_layers, default_degenerate_threshold,
                                   distance_learning_rate};

  double best_bce = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    double epoch_bce = 0.0;
    std::size_t batches = 0;
    std::size_t remaining = pairs_per_epoch;
    while (remaining > 0) {
      const std::size_t n = std::min(batch_size, remaining);
      const pair_batch batch = sample_pairs(normalized_train, n, pair_rng, scope);
      const batch_metrics metrics =
          train_pair_batch(net, std::span<const std::vector<double>>(features), batch, optimizer,
                           step_cfg, &distance_optimizer);
      epoch_bce += metrics.bce;
      if (metrics.distance_skipped) ++stats.distance_skips;
      ++batches;
      remaining -= n;
    }
    epoch_bce /= static_cast<double>(batches);
    stats.final_bce = epoch_bce;
    stats.epochs_run = epoch + 1;
    if (patience > 0) {
      if (epoch_bce < best_bce - 1e-6) {
        best_bce = epoch_bce;
        stale = 0;
      } else if (++stale >= patience) {
        break;
      }
    }
  }
  return stats;
}

// Out-of-domain training: BCE-only pair training on the source dataset with
// a source-fitted normalizer. Classification afterward uses source samples
// as references.
inline emotion_model train_oodt(const dataset& source, const train_config& cfg,
                                std::uint64_t seed) {
  validate_train_config(cfg);
  if (source.speaker_count() < 2)
    throw invalid_input_error("train_oodt: source needs at least 2 speakers");
  for (emotion e : all_emotions)
    if (source.of_class(e).empty())
      throw invalid_input_error("train_oodt: source lacks class '" +
                                std::string(to_string(e)) + "'");

  normalizer norm = fit_normalizer(source);
  const dataset normalized = apply_normalizer(source, norm);
  siamese_net net = make_default_siamese(derive_seed(seed, seed_stream::init));
  run_pair_training(net, normalized, cfg.epochs, cfg.pairs_per_epoch, cfg.batch_size,
                    cfg.optimizer, cfg.scope, derive_seed(seed, seed_stream::pairs), 0, false, 0);
  return {std::move(net), std::move(norm)};
}

struct idt_result {
  std::vector<double> fold_uars;  // in sorted speaker order
  double mean_uar = 0.0;
};

// In-domain training: LOSO over the target; each fold trains from scratch
// on the fold's train split and classifies the held-out speaker against
// fold-train references. The transfer upper bound.
inline idt_result run_idt(const dataset& target, const train_config& cfg, std::uint64_t seed) {
  validate_train_config(cfg);
  const std::vector<loso_fold> folds = loso_folds(target);
  idt_result result;
  result.fold_uars.reserve(folds.size());
  for (std::size_t fi = 0; fi < folds.size(); ++fi) {
    const loso_fold& fold = folds[fi];
    const dataset train_ds = subset(target, fold.train);
    normalizer norm = fit_normalizer(train_ds);
    const dataset normalized = apply_normalizer(train_ds, norm);
    siamese_net net =
        make_default_siamese(derive_seed(derive_seed(seed, seed_stream::init), fi));
    run_pair_training(net, normalized, cfg.epochs, cfg.pairs_per_epoch, cfg.batch_size,
                      cfg.optimizer, cfg.scope,
                      derive_seed(derive_seed(seed, seed_stream::pairs), fi), 0, false, 0);
    const emotion_model model{std::move(net), std::move(norm)};
    const reference_set refs = reference_set::build_all(
        model, train_ds, cfg.reference_cap, derive_seed(seed, seed_stream::references));
    result.fold_uars.push_back(evaluate_uar(model, refs, target, fold.test));
  }
  double sum = 0.0;
  for (double u : result.fold_uars) sum += u;
  result.mean_uar = sum / static_cast<double>(result.fold_uars.size());
  return result;
}

// The few labeled target samples adopted for fine-tuning; they double as
// classification references afterward.
struct adopted_set {
  std::vector<std::size_t> indices;  // sorted, into the target dataset
  std::vector<std::string> speakers;
  std::size_t per_emotion_per_speaker = 1;
};

// k speakers uniformly without replacement among speakers owning at least
// per_emotion samples of every class, then per speaker one uniform sample
// per emotion (per_emotion of them). The rest of the target is the test set.
inline adopted_set select_adopted(const dataset& target, std::size_t k_speakers, rng& gen,
                                  std::size_t per_emotion = 1) {
  if (k_speakers == 0 || per_emotion == 0)
    throw invalid_input_error("select_adopted: k and per_emotion must be positive");

  std::vector<std::string> eligible;
  for (const auto& [speaker, indices] : target.by_speaker()) {
    std::array<std::size_t, emotion_count> counts{};
    for (std::size_t i : indices) ++counts[static_cast<std::size_t>(target[i].label)];
    bool ok = true;
    for (std::size_t c : counts)
      if (c < per_emotion) ok = false;
    if (ok) eligible.push_back(speaker);
  }
  if (eligible.size() < k_speakers)
    throw invalid_input_error("select_adopted: only " + std::to_string(eligible.size()) +
                              " speakers have every emotion, need " + std::to_string(k_speakers));

  gen.shuffle(eligible);
  eligible.resize(k_speakers);

  adopted_set adopted;
  adopted.per_emotion_per_speaker = per_emotion;
  adopted.speakers = eligible;
  std::sort(adopted.speakers.begin(), adopted.speakers.end());
  for (const std::string& speaker : adopted.speakers) {
    const std::vector<std::size_t>& pool = target.by_speaker().at(speaker);
    for (emotion e : all_emotions) {
      std::vector<std::size_t> candidates;
      for (std::size_t i : pool)
        if (target[i].label == e) candidates.push_back(i);
      std::vector<std::size_t> picked;
      for (std::size_t r = 0; r < per_emotion; ++r) {
        std::size_t at = gen.below(candidates.size() - r);
        // swap-remove keeps draws without replacement
        std::swap(candidates[at], candidates[candidates.size() - 1 - r]);
        picked.push_back(candidates[candidates.size() - 1 - r]);
      }
      adopted.indices.insert(adopted.indices.end(), picked.begin(), picked.end());
    }
  }
  std::sort(adopted.indices.begin(), adopted.indices.end());
  return adopted;
}

inline std::vector<std::size_t> complement_indices(std::size_t total,
                                                   std::span<const std::size_t> sorted_subset) {
  std::vector<std::size_t> rest;
  rest.reserve(total - sorted_subset.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < total; ++i) {
    if (k < sorted_subset.size() && sorted_subset[k] == i) {
      ++k;
    } else {
      rest.push_back(i);
    }
  }
  return rest;
}

struct fine_tune_stats {
  int distance_skips = 0;
  std::size_t epochs_run = 0;
};

// Fine-tune a pretrained model on the adopted samples only. The freeze mask
// covers the first frozen_layers extractor layers; the distance-ratio step
// runs after each batch's BCE step iff use_distance_loss. Normalization
// stays the pretrained (source-fitted) one.
inline emotion_model fine_tune(const emotion_model& pretrained, const dataset& target,
                               const adopted_set& adopted, std::size_t frozen_layers,
                               bool use_distance_loss, const train_config& cfg, std::uint64_t seed,
                               fine_tune_stats* stats = nullptr) {
  validate_train_config(cfg);
  if (adopted.indices.empty()) throw invalid_input_error("fine_tune: empty adopted set");
  if (frozen_layers >= pretrained.net.params.layers.size())
    throw invalid_input_error("fine_tune: freezing every layer leaves nothing trainable");

  const dataset adopted_ds = subset(target, adopted.indices);
  for (emotion e : all_emotions)
    if (adopted_ds.of_class(e).empty())
      throw invalid_input_error("fine_tune: adopted set lacks class '" +
                                std::string(to_string(e)) + "'");

  const dataset normalized = apply_normalizer(adopted_ds, pretrained.norm);
  siamese_net net = pretrained.net;
  adam_config ft_optimizer = cfg.optimizer;
  if (cfg.ft_learning_rate > 0.0) ft_optimizer.learning_rate = cfg.ft_learning_rate;
  const training_stats ts = run_pair_training(
      net, normalized, cfg.ft_epochs, cfg.ft_pairs_per_epoch, cfg.ft_batch_size, ft_optimizer,
      cfg.scope, derive_seed(seed, seed_stream::training), frozen_layers, use_distance_loss,
      cfg.ft_patience, cfg.distance_learning_rate);
  if (stats) {
    stats->distance_skips = ts.distance_skips;
    stats->epochs_run = ts.epochs_run;
  }
  return {std::move(net), pretrained.norm};
}

}  // namespace siamtl
