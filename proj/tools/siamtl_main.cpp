// siamtl command-line front end: dataset synthesis, pretraining, transfer
// protocols, the sweep runner, and the gradient audit.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "siamtl/cli_config.hpp"
#include "siamtl/gradcheck.hpp"
#include "siamtl/io.hpp"

namespace {

using namespace siamtl;

constexpr int exit_ok = 0;
constexpr int exit_validation = 1;
constexpr int exit_runtime = 2;

struct flag_overrides {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> source, target, model, out, format, loss_mode, pair_scope;
  std::optional<int> parallel, repetitions, epochs, ft_epochs;
  std::optional<double> learning_rate;
  std::optional<std::vector<int>> frozen_list, adopted_list;
  std::optional<int> ft_frozen, ft_adopted;
  std::optional<bool> distance_loss;
  std::optional<std::size_t> reference_cap;
};

std::set<std::string> parse_formats(const std::string& text) {
  std::set<std::string> formats;
  std::string cur;
  for (char c : text + ",") {
    if (c == ',') {
      if (!cur.empty()) formats.insert(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  return formats;
}

run_config materialize(const flag_overrides& flags) {
  run_config cfg;
  if (flags.config_path) cfg = load_run_config(*flags.config_path);
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.source) cfg.source_path = *flags.source;
  if (flags.target) cfg.target_path = *flags.target;
  if (flags.model) cfg.model_path = *flags.model;
  if (flags.out) cfg.out_dir = *flags.out;
  if (flags.format) cfg.formats = parse_formats(*flags.format);
  if (flags.parallel) cfg.parallel = *flags.parallel;
  if (flags.repetitions) cfg.repetitions = *flags.repetitions;
  if (flags.epochs) cfg.training.epochs = static_cast<std::size_t>(*flags.epochs);
  if (flags.ft_epochs) cfg.training.ft_epochs = static_cast<std::size_t>(*flags.ft_epochs);
  if (flags.learning_rate) cfg.training.optimizer.learning_rate = *flags.learning_rate;
  if (flags.loss_mode) cfg.loss_mode = *flags.loss_mode;
  if (flags.frozen_list) cfg.frozen_layers = *flags.frozen_list;
  if (flags.adopted_list) cfg.adopted_speakers = *flags.adopted_list;
  if (flags.ft_frozen) cfg.ft_frozen = *flags.ft_frozen;
  if (flags.ft_adopted) cfg.ft_adopted = *flags.ft_adopted;
  if (flags.distance_loss) cfg.ft_distance_loss = *flags.distance_loss;
  if (flags.reference_cap) cfg.training.reference_cap = *flags.reference_cap;
  if (flags.pair_scope) {
    const auto parsed = pair_scope_from_string(*flags.pair_scope);
    if (!parsed)
      throw config_error("--pair-scope: '" + *flags.pair_scope +
                         "' (allowed: any, within_speaker, cross_speaker)");
    cfg.training.scope = *parsed;
  }
  validate_run_config(cfg);
  for (const std::string& path : {cfg.source_path, cfg.target_path, cfg.model_path})
    if (!path.empty() && !std::filesystem::exists(path))
      throw config_error("input path does not exist: '" + path + "'");
  return cfg;
}

dataset load_or_synth(const std::string& path, const std::optional<synth_config>& synth,
                      const char* role) {
  if (!path.empty()) return load_csv(path);
  if (synth) return synth_generate(*synth);
  throw config_error(std::string("no ") + role +
                     " dataset: pass a CSV path or a synth_" + role + " config block");
}

void prepare_out_dir(const run_config& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  if (ec || !std::filesystem::is_directory(cfg.out_dir))
    throw config_error("output directory '" + cfg.out_dir + "' is not creatable");
}

void echo_config(const run_config& cfg) {
  std::cout << "config: " << run_config_to_json(cfg).dump() << "\n";
}

void print_summary(const experiment_result& result) {
  std::printf("%-20s %7s %8s %7s %9s %9s\n", "protocol", "frozen", "adopted", "trials",
              "uar(%)", "std(%)");
  for (const aggregate_row& agg : result.aggregates)
    std::printf("%-20s %7d %8d %7d %9.1f %9.1f\n", std::string(to_string(agg.proto)).c_str(),
                agg.frozen_layers, agg.adopted_speakers, agg.trials, 100.0 * agg.uar_mean,
                100.0 * agg.uar_std);
  double wall = 0.0;
  for (const trial_row& row : result.trials) wall += row.wall_seconds;
  std::printf("total trial wall time: %.1f s\n", wall);
}

// Emits whatever trials survived; per-trial failures go to stderr and the
// exit code. Returns the subcommand's exit status.
int emit(const experiment_result& result, const run_config& cfg) {
  for (const trial_failure& f : result.failures)
    std::cerr << "trial failed (" << to_string(f.proto) << ", frozen=" << f.frozen_layers
              << ", adopted=" << f.adopted_speakers << ", seed=" << f.seed
              << "): " << f.message << "\n";
  if (result.trials.empty()) {
    std::cerr << "error: every trial failed, nothing to emit\n";
    return exit_runtime;
  }
  const auto written = emit_results(result, run_config_to_json(cfg), cfg.formats, cfg.out_dir);
  for (const auto& path : written) std::cout << "wrote " << path.string() << "\n";
  return result.failures.empty() ? exit_ok : exit_runtime;
}

int cmd_synth(const run_config& cfg) {
  if (!cfg.synth) throw config_error("synth: config needs a 'synth' block");
  prepare_out_dir(cfg);
  echo_config(cfg);
  const dataset ds = synth_generate(*cfg.synth);
  const std::filesystem::path out = std::filesystem::path(cfg.out_dir) / "dataset.csv";
  save_csv(ds, out);
  write_file_atomic(std::filesystem::path(cfg.out_dir) / "config.json",
                    run_config_to_json(cfg).dump(2) + "\n");
  std::cout << "wrote " << out.string() << " (" << ds.size() << " samples, "
            << ds.speaker_count() << " speakers)\n";
  return exit_ok;
}

int cmd_gradcheck(const run_config& cfg) {
  echo_config(cfg);
  const gradcheck_report report = run_gradcheck(cfg.seed);
  std::cout << report.text;
  return report.pass ? exit_ok : exit_runtime;
}

int cmd_pretrain(const run_config& cfg) {
  prepare_out_dir(cfg);
  echo_config(cfg);
  const dataset source = load_or_synth(cfg.source_path, cfg.synth_source, "source");
  const emotion_model model = train_oodt(source, cfg.training, cfg.seed);
  const std::filesystem::path out = std::filesystem::path(cfg.out_dir) / "model.json";
  save_model(model, out);
  write_file_atomic(std::filesystem::path(cfg.out_dir) / "config.json",
                    run_config_to_json(cfg).dump(2) + "\n");
  std::cout << "wrote " << out.string() << "\n";
  return exit_ok;
}

int cmd_oodt(const run_config& cfg) {
  prepare_out_dir(cfg);
  echo_config(cfg);
  const dataset source = load_or_synth(cfg.source_path, cfg.synth_source, "source");
  const dataset target = load_or_synth(cfg.target_path, cfg.synth_target, "target");
  const emotion_model model = cfg.model_path.empty() ? train_oodt(source, cfg.training, cfg.seed)
                                                     : load_model(cfg.model_path);
  const reference_set refs = reference_set::build_all(
      model, source, cfg.training.reference_cap, derive_seed(cfg.seed, seed_stream::references));
  std::vector<std::size_t> all(target.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  experiment_result result;
  trial_row row;
  row.proto = protocol::oodt;
  row.source = cfg.source_tag;
  row.seed = cfg.seed;
  row.uar = evaluate_uar(model, refs, target, all);
  result.trials.push_back(row);
  result.aggregates = aggregate_trials(result.trials);
  print_summary(result);
  return emit(result, cfg);
}

int cmd_idt(const run_config& cfg) {
  prepare_out_dir(cfg);
  echo_config(cfg);
  const dataset target = load_or_synth(cfg.target_path, cfg.synth_target, "target");
  const experiment_result result = idt_rows(target, cfg.training, cfg.seed, cfg.target_tag);
  print_summary(result);
  return emit(result, cfg);
}

int cmd_finetune(const run_config& cfg) {
  prepare_out_dir(cfg);
  echo_config(cfg);
  const dataset source = load_or_synth(cfg.source_path, cfg.synth_source, "source");
  const dataset target = load_or_synth(cfg.target_path, cfg.synth_target, "target");
  experiment_config exp = to_experiment_config(cfg);
  exp.frozen_layers = {cfg.ft_frozen};
  exp.adopted_speakers = {cfg.ft_adopted};
  exp.run_with_distance = cfg.ft_distance_loss;
  exp.run_without_distance = !cfg.ft_distance_loss;
  const experiment_result result = run_experiment(source, target, exp);
  print_summary(result);
  return emit(result, cfg);
}

int cmd_experiment(const run_config& cfg) {
  prepare_out_dir(cfg);
  echo_config(cfg);
  const dataset source = load_or_synth(cfg.source_path, cfg.synth_source, "source");
  const dataset target = load_or_synth(cfg.target_path, cfg.synth_target, "target");
  const experiment_result result = run_experiment(source, target, to_experiment_config(cfg));
  print_summary(result);
  return emit(result, cfg);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Siamese transfer learning for few-shot emotion classification"};
  app.require_subcommand(1);

  flag_overrides flags;
  std::string subcommand;
  for (const char* name : {"pretrain", "finetune", "oodt", "idt", "experiment", "synth",
                           "gradcheck"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->callback([&subcommand, name] { subcommand = name; });
    sub->add_option("--config", flags.config_path, "JSON config file");
    sub->add_option("--source", flags.source, "source dataset CSV");
    sub->add_option("--target", flags.target, "target dataset CSV");
    sub->add_option("--model", flags.model, "pretrained model JSON");
    sub->add_option("--out", flags.out, "output directory");
    sub->add_option("--seed", flags.seed, "master seed");
    sub->add_option("--format", flags.format, "output formats, comma-separated (csv,json)");
    sub->add_option("--parallel", flags.parallel, "max concurrent trials");
    sub->add_option("--repetitions", flags.repetitions, "repetitions per sweep cell");
    sub->add_option("--epochs", flags.epochs, "pretraining epochs");
    sub->add_option("--ft-epochs", flags.ft_epochs, "fine-tuning epochs");
    sub->add_option("--lr", flags.learning_rate, "optimizer learning rate");
    sub->add_option("--pair-scope", flags.pair_scope,
                    "pair sampling scope: any, within_speaker, cross_speaker");
    sub->add_option("--reference-cap", flags.reference_cap,
                    "per-class cap on classification references (0 = all)");
    if (std::string(name) == "experiment") {
      sub->add_option("--frozen-layers", flags.frozen_list, "frozen layer counts to sweep");
      sub->add_option("--adopted-speakers", flags.adopted_list, "adopted speaker counts to sweep");
      sub->add_option("--loss-modes", flags.loss_mode, "with, without, or both");
    }
    if (std::string(name) == "finetune") {
      sub->add_option("--frozen-layers", flags.ft_frozen, "frozen extractor layers (0-2)");
      sub->add_option("--adopted-speakers", flags.ft_adopted, "adopted speaker count");
      sub->add_flag("--distance-loss,!--no-distance-loss", flags.distance_loss,
                    "apply the distance-ratio loss during fine-tuning");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_validation;
  }

  try {
    const run_config cfg = materialize(flags);
    if (subcommand == "synth") return cmd_synth(cfg);
    if (subcommand == "gradcheck") return cmd_gradcheck(cfg);
    if (subcommand == "pretrain") return cmd_pretrain(cfg);
    if (subcommand == "oodt") return cmd_oodt(cfg);
    if (subcommand == "idt") return cmd_idt(cfg);
    if (subcommand == "finetune") return cmd_finetune(cfg);
    if (subcommand == "experiment") return cmd_experiment(cfg);
    std::cerr << "error: unknown subcommand\n";
    return exit_validation;
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return exit_validation;
  } catch (const parse_error& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return exit_validation;
  } catch (const invalid_input_error& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return exit_validation;
  } catch (const numeric_error& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return exit_runtime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_runtime;
  }
}
