#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "siamtl/data.hpp"
#include "siamtl/errors.hpp"
#include "siamtl/experiment.hpp"
#include "siamtl/protocols.hpp"

namespace siamtl {

using json = nlohmann::json;

// Write-to-temp-then-rename so a crash never leaves a partial file behind.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) throw io_error("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out) throw io_error("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw io_error("cannot move '" + tmp.string() + "' to '" + path.string() + "'");
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open '" + path.string() + "'");
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return content;
}

inline const char* activation_name(activation a) {
  switch (a) {
    case activation::relu: return "relu";
    case activation::sigmoid: return "sigmoid";
    case activation::identity: return "identity";
  }
  return "relu";
}

inline activation activation_from_name(const std::string& name) {
  if (name == "relu") return activation::relu;
  if (name == "sigmoid") return activation::sigmoid;
  if (name == "identity") return activation::identity;
  throw parse_error("unknown activation '" + name + "'");
}

inline json model_to_json(const emotion_model& model) {
  json layers = json::array();
  for (const dense_layer& layer : model.net.params.layers) {
    json rows = json::array();
    for (std::size_t i = 0; i < layer.out_dim(); ++i) {
      json row = json::array();
      for (std::size_t j = 0; j < layer.in_dim(); ++j) row.push_back(layer.weights(i, j));
      rows.push_back(std::move(row));
    }
    layers.push_back({{"activation", activation_name(layer.act)},
                      {"weights", std::move(rows)},
                      {"biases", layer.biases}});
  }
  return {{"format", "siamtl-model-v1"},
          {"extractor_layers", model.net.extractor_layers},
          {"layers", std::move(layers)},
          {"normalizer", {{"mean", model.norm.mean}, {"stddev", model.norm.stddev}}}};
}

inline emotion_model model_from_json(const json& j) {
  if (!j.is_object() || j.value("format", "") != "siamtl-model-v1")
    throw parse_error("model file: unknown format");
  emotion_model model;
  model.net.extractor_layers = j.at("extractor_layers").get<std::size_t>();
  for (const json& jl : j.at("layers")) {
    dense_layer layer;
    layer.act = activation_from_name(jl.at("activation").get<std::string>());
    layer.biases = jl.at("biases").get<std::vector<double>>();
    const json& rows = jl.at("weights");
    const std::size_t out = rows.size();
    const std::size_t in = out > 0 ? rows[0].size() : 0;
    layer.weights = matrix(out, in);
    for (std::size_t i = 0; i < out; ++i) {
      if (rows[i].size() != in) throw parse_error("model file: ragged weight rows");
      for (std::size_t jcol = 0; jcol < in; ++jcol) layer.weights(i, jcol) = rows[i][jcol];
    }
    if (layer.biases.size() != out) throw parse_error("model file: bias length mismatch");
    model.net.params.layers.push_back(std::move(layer));
  }
  if (model.net.extractor_layers == 0 ||
      model.net.extractor_layers >= model.net.params.layers.size())
    throw parse_error("model file: bad extractor layer count");
  model.norm.mean = j.at("normalizer").at("mean").get<std::vector<double>>();
  model.norm.stddev = j.at("normalizer").at("stddev").get<std::vector<double>>();
  return model;
}

inline void save_model(const emotion_model& model, const std::filesystem::path& path) {
  write_file_atomic(path, model_to_json(model).dump(2) + "\n");
}

inline emotion_model load_model(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw parse_error("model file '" + path.string() + "': " + e.what());
  }
  return model_from_json(j);
}

inline std::string trials_csv(const experiment_result& result) {
  std::string out = "protocol,source,frozen_layers,adopted_speakers,seed,uar,distance_loss_skips\n";
  for (const trial_row& row : result.trials) {
    out += std::string(to_string(row.proto)) + ',' + row.source + ',' +
           std::to_string(row.frozen_layers) + ',' + std::to_string(row.adopted_speakers) + ',' +
           std::to_string(row.seed) + ',' + detail::format_double(row.uar) + ',' +
           std::to_string(row.distance_skips) + '\n';
  }
  return out;
}

inline std::string aggregates_csv(const experiment_result& result) {
  std::string out = "protocol,frozen_layers,adopted_speakers,trials,uar_mean,uar_std\n";
  for (const aggregate_row& row : result.aggregates) {
    out += std::string(to_string(row.proto)) + ',' + std::to_string(row.frozen_layers) + ',' +
           std::to_string(row.adopted_speakers) + ',' + std::to_string(row.trials) + ',' +
           detail::format_double(row.uar_mean) + ',' + detail::format_double(row.uar_std) + '\n';
  }
  return out;
}

inline json result_to_json(const experiment_result& result, const json& config_echo) {
  json trials = json::array();
  for (const trial_row& row : result.trials)
    trials.push_back({{"protocol", to_string(row.proto)},
                      {"source", row.source},
                      {"frozen_layers", row.frozen_layers},
                      {"adopted_speakers", row.adopted_speakers},
                      {"seed", row.seed},
                      {"uar", row.uar},
                      {"distance_loss_skips", row.distance_skips}});
  json aggregates = json::array();
  for (const aggregate_row& row : result.aggregates)
    aggregates.push_back({{"protocol", to_string(row.proto)},
                          {"frozen_layers", row.frozen_layers},
                          {"adopted_speakers", row.adopted_speakers},
                          {"trials", row.trials},
                          {"uar_mean", row.uar_mean},
                          {"uar_std", row.uar_std}});
  json out = {{"config", config_echo},
              {"trials", std::move(trials)},
              {"aggregates", std::move(aggregates)}};
  if (!result.failures.empty()) {
    json failures = json::array();
    for (const trial_failure& f : result.failures)
      failures.push_back({{"protocol", to_string(f.proto)},
                          {"frozen_layers", f.frozen_layers},
                          {"adopted_speakers", f.adopted_speakers},
                          {"seed", f.seed},
                          {"error", f.message}});
    out["failures"] = std::move(failures);
  }
  return out;
}

// Emits trials.csv + aggregates.csv (format "csv") and result.json (format
// "json"), byte-stable for identical inputs. The config echo is embedded in
// the JSON mirror and always written to config.json alongside.
inline std::vector<std::filesystem::path> emit_results(const experiment_result& result,
                                                       const json& config_echo,
                                                       const std::set<std::string>& formats,
                                                       const std::filesystem::path& out_dir) {
  if (result.trials.empty()) throw invalid_input_error("emit_results: no trial rows");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    throw io_error("cannot create output directory '" + out_dir.string() + "'");

  std::vector<std::filesystem::path> written;
  const std::filesystem::path config_path = out_dir / "config.json";
  write_file_atomic(config_path, config_echo.dump(2) + "\n");
  written.push_back(config_path);
  if (formats.count("csv")) {
    const std::filesystem::path trials_path = out_dir / "trials.csv";
    write_file_atomic(trials_path, trials_csv(result));
    written.push_back(trials_path);
    const std::filesystem::path agg_path = out_dir / "aggregates.csv";
    write_file_atomic(agg_path, aggregates_csv(result));
    written.push_back(agg_path);
  }
  if (formats.count("json")) {
    const std::filesystem::path json_path = out_dir / "result.json";
    write_file_atomic(json_path, result_to_json(result, config_echo).dump(2) + "\n");
    written.push_back(json_path);
  }
  return written;
}

}  // namespace siamtl
