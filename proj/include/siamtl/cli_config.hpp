#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "siamtl/errors.hpp"
#include "siamtl/experiment.hpp"
#include "siamtl/io.hpp"
#include "siamtl/synth.hpp"

namespace siamtl {

// Everything a run needs, from config file and/or flags; flags override
// file values. Materialized defaults are echoed for provenance.
struct run_config {
  std::uint64_t seed = 0;
  std::string source_path;
  std::string target_path;
  std::string model_path;
  std::string out_dir = "out";
  std::set<std::string> formats = {"csv", "json"};
  int parallel = 1;

  train_config training;

  // experiment sweep
  std::vector<int> frozen_layers = {0, 1, 2};
  std::vector<int> adopted_speakers = {2, 4, 6, 8, 10, 12, 14, 16, 18, 20};
  int repetitions = 10;
  std::string loss_mode = "both";  // with | without | both
  std::string source_tag = "source";
  std::string target_tag = "target";

  // finetune subcommand (single cell)
  int ft_frozen = 0;
  int ft_adopted = 2;
  bool ft_distance_loss = true;

  std::optional<synth_config> synth;         // `synth` subcommand
  std::optional<synth_config> synth_source;  // used when --source is absent
  std::optional<synth_config> synth_target;  // used when --target is absent
};

namespace detail {

inline void require_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& where) {
  if (!obj.is_object()) throw config_error(where + ": expected an object");
  std::string unknown;
  for (const auto& item : obj.items())
    if (!allowed.count(item.key())) unknown += (unknown.empty() ? "" : ", ") + item.key();
  if (!unknown.empty())
    throw config_error(where + ": unknown keys: " + unknown);
}

template <typename T>
inline void read_into(const json& obj, const char* key, T& into) {
  if (obj.contains(key)) {
    try {
      into = obj.at(key).get<T>();
    } catch (const json::exception&) {
      throw config_error(std::string("config key '") + key + "' has the wrong type");
    }
  }
}

inline synth_config parse_synth(const json& obj, const std::string& where) {
  require_keys(obj,
               {"speakers", "samples_per_speaker_per_class", "class_center_separation",
                "speaker_offset_scale", "noise_scale", "domain_shift", "seed"},
               where);
  synth_config cfg;
  read_into(obj, "speakers", cfg.speaker_count);
  read_into(obj, "samples_per_speaker_per_class", cfg.samples_per_speaker_per_class);
  read_into(obj, "class_center_separation", cfg.class_center_separation);
  read_into(obj, "speaker_offset_scale", cfg.speaker_offset_scale);
  read_into(obj, "noise_scale", cfg.noise_scale);
  read_into(obj, "seed", cfg.seed);
  if (obj.contains("domain_shift")) {
    const json& shift = obj.at("domain_shift");
    if (shift.is_number()) {
      cfg.domain_shift = {shift.get<double>()};
    } else if (shift.is_array()) {
      cfg.domain_shift = shift.get<std::vector<double>>();
    } else {
      throw config_error(where + ".domain_shift: expected a number or an array");
    }
  }
  return cfg;
}

inline json synth_to_json(const synth_config& cfg) {
  json j = {{"speakers", cfg.speaker_count},
            {"samples_per_speaker_per_class", cfg.samples_per_speaker_per_class},
            {"class_center_separation", cfg.class_center_separation},
            {"speaker_offset_scale", cfg.speaker_offset_scale},
            {"noise_scale", cfg.noise_scale},
            {"seed", cfg.seed}};
  if (!cfg.domain_shift.empty()) j["domain_shift"] = cfg.domain_shift;
  return j;
}

}  // namespace detail

inline run_config parse_run_config_json(const json& root) {
  detail::require_keys(root,
                       {"seed", "source", "target", "model", "out", "formats", "parallel",
                        "training", "experiment", "finetune", "synth", "synth_source",
                        "synth_target"},
                       "config");
  run_config cfg;
  detail::read_into(root, "seed", cfg.seed);
  detail::read_into(root, "source", cfg.source_path);
  detail::read_into(root, "target", cfg.target_path);
  detail::read_into(root, "model", cfg.model_path);
  detail::read_into(root, "out", cfg.out_dir);
  detail::read_into(root, "parallel", cfg.parallel);
  if (root.contains("formats")) {
    cfg.formats.clear();
    for (const json& f : root.at("formats")) cfg.formats.insert(f.get<std::string>());
  }

  if (root.contains("training")) {
    const json& t = root.at("training");
    detail::require_keys(t,
                         {"epochs", "pairs_per_epoch", "batch_size", "learning_rate", "pair_scope",
                          "ft_epochs", "ft_pairs_per_epoch", "ft_batch_size", "ft_patience",
                          "ft_learning_rate", "distance_learning_rate", "reference_cap"},
                         "config.training");
    detail::read_into(t, "epochs", cfg.training.epochs);
    detail::read_into(t, "pairs_per_epoch", cfg.training.pairs_per_epoch);
    detail::read_into(t, "batch_size", cfg.training.batch_size);
    detail::read_into(t, "learning_rate", cfg.training.optimizer.learning_rate);
    detail::read_into(t, "ft_epochs", cfg.training.ft_epochs);
    detail::read_into(t, "ft_pairs_per_epoch", cfg.training.ft_pairs_per_epoch);
    detail::read_into(t, "ft_batch_size", cfg.training.ft_batch_size);
    detail::read_into(t, "ft_patience", cfg.training.ft_patience);
    detail::read_into(t, "ft_learning_rate", cfg.training.ft_learning_rate);
    detail::read_into(t, "distance_learning_rate", cfg.training.distance_learning_rate);
    detail::read_into(t, "reference_cap", cfg.training.reference_cap);
    if (t.contains("pair_scope")) {
      const std::string scope = t.at("pair_scope").get<std::string>();
      const auto parsed = pair_scope_from_string(scope);
      if (!parsed)
        throw config_error("config.training.pair_scope: '" + scope +
                           "' (allowed: any, within_speaker, cross_speaker)");
      cfg.training.scope = *parsed;
    }
  }

  if (root.contains("experiment")) {
    const json& e = root.at("experiment");
    detail::require_keys(e,
                         {"frozen_layers", "adopted_speakers", "repetitions", "loss_mode",
                          "source_tag", "target_tag"},
                         "config.experiment");
    detail::read_into(e, "frozen_layers", cfg.frozen_layers);
    detail::read_into(e, "adopted_speakers", cfg.adopted_speakers);
    detail::read_into(e, "repetitions", cfg.repetitions);
    detail::read_into(e, "loss_mode", cfg.loss_mode);
    detail::read_into(e, "source_tag", cfg.source_tag);
    detail::read_into(e, "target_tag", cfg.target_tag);
  }

  if (root.contains("finetune")) {
    const json& f = root.at("finetune");
    detail::require_keys(f, {"frozen_layers", "adopted_speakers", "use_distance_loss"},
                         "config.finetune");
    detail::read_into(f, "frozen_layers", cfg.ft_frozen);
    detail::read_into(f, "adopted_speakers", cfg.ft_adopted);
    detail::read_into(f, "use_distance_loss", cfg.ft_distance_loss);
  }

  if (root.contains("synth")) cfg.synth = detail::parse_synth(root.at("synth"), "config.synth");
  if (root.contains("synth_source"))
    cfg.synth_source = detail::parse_synth(root.at("synth_source"), "config.synth_source");
  if (root.contains("synth_target"))
    cfg.synth_target = detail::parse_synth(root.at("synth_target"), "config.synth_target");
  return cfg;
}

inline run_config load_run_config(const std::filesystem::path& path) {
  json root;
  try {
    root = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw config_error("config file '" + path.string() + "': " + e.what());
  }
  return parse_run_config_json(root);
}

// Fully materialized echo; parsing it back yields the same run_config.
inline json run_config_to_json(const run_config& cfg) {
  json root = {{"seed", cfg.seed},
               {"out", cfg.out_dir},
               {"parallel", cfg.parallel},
               {"formats", std::vector<std::string>(cfg.formats.begin(), cfg.formats.end())},
               {"training",
                {{"epochs", cfg.training.epochs},
                 {"pairs_per_epoch", cfg.training.pairs_per_epoch},
                 {"batch_size", cfg.training.batch_size},
                 {"learning_rate", cfg.training.optimizer.learning_rate},
                 {"pair_scope", to_string(cfg.training.scope)},
                 {"ft_epochs", cfg.training.ft_epochs},
                 {"ft_pairs_per_epoch", cfg.training.ft_pairs_per_epoch},
                 {"ft_batch_size", cfg.training.ft_batch_size},
                 {"ft_patience", cfg.training.ft_patience},
                 {"ft_learning_rate", cfg.training.ft_learning_rate},
                 {"distance_learning_rate", cfg.training.distance_learning_rate},
                 {"reference_cap", cfg.training.reference_cap}}},
               {"experiment",
                {{"frozen_layers", cfg.frozen_layers},
                 {"adopted_speakers", cfg.adopted_speakers},
                 {"repetitions", cfg.repetitions},
                 {"loss_mode", cfg.loss_mode},
                 {"source_tag", cfg.source_tag},
                 {"target_tag", cfg.target_tag}}},
               {"finetune",
                {{"frozen_layers", cfg.ft_frozen},
                 {"adopted_speakers", cfg.ft_adopted},
                 {"use_distance_loss", cfg.ft_distance_loss}}}};
  if (!cfg.source_path.empty()) root["source"] = cfg.source_path;
  if (!cfg.target_path.empty()) root["target"] = cfg.target_path;
  if (!cfg.model_path.empty()) root["model"] = cfg.model_path;
  if (cfg.synth) root["synth"] = detail::synth_to_json(*cfg.synth);
  if (cfg.synth_source) root["synth_source"] = detail::synth_to_json(*cfg.synth_source);
  if (cfg.synth_target) root["synth_target"] = detail::synth_to_json(*cfg.synth_target);
  return root;
}

// The three extractor layers cap the freeze depth at 2 for the protocol.
inline void validate_run_config(const run_config& cfg) {
  for (const std::string& f : cfg.formats)
    if (f != "csv" && f != "json")
      throw config_error("formats: '" + f + "' (allowed: csv, json)");
  if (cfg.formats.empty()) throw config_error("formats: at least one of csv, json required");
  if (cfg.parallel < 1) throw config_error("parallel must be >= 1");
  if (cfg.repetitions < 1) throw config_error("experiment.repetitions must be >= 1");
  if (cfg.loss_mode != "with" && cfg.loss_mode != "without" && cfg.loss_mode != "both")
    throw config_error("experiment.loss_mode: '" + cfg.loss_mode +
                       "' (allowed: with, without, both)");
  auto check_frozen = [](int f) {
    if (f < 0 || f > 2)
      throw config_error("frozen_layers value " + std::to_string(f) +
                         " out of range (allowed: 0, 1, 2)");
  };
  for (int f : cfg.frozen_layers) check_frozen(f);
  check_frozen(cfg.ft_frozen);
  for (int k : cfg.adopted_speakers)
    if (k < 1) throw config_error("adopted_speakers values must be >= 1");
  if (cfg.ft_adopted < 1) throw config_error("finetune.adopted_speakers must be >= 1");
  validate_train_config(cfg.training);
}

inline experiment_config to_experiment_config(const run_config& cfg) {
  experiment_config exp;
  exp.source_tag = cfg.source_tag;
  exp.target_tag = cfg.target_tag;
  exp.frozen_layers = cfg.frozen_layers;
  exp.adopted_speakers = cfg.adopted_speakers;
  exp.repetitions = cfg.repetitions;
  exp.run_without_distance = cfg.loss_mode != "with";
  exp.run_with_distance = cfg.loss_mode != "without";
  exp.master_seed = cfg.seed;
  exp.training = cfg.training;
  exp.parallel = cfg.parallel;
  return exp;
}

}  // namespace siamtl
