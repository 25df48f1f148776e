#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "siamtl/data.hpp"
#include "siamtl/synth.hpp"

using namespace siamtl;

namespace {

std::filesystem::path temp_path(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

std::string feature_cells(double base) {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < feature_dim; ++i) {
    std::snprintf(buf, sizeof(buf), ",%g", base + 0.01 * static_cast<double>(i));
    out += buf;
  }
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  out << content;
}

std::string good_csv() {
  std::string csv = detail::csv_header() + "\n";
  csv += "u1,spkA,anger" + feature_cells(0.1) + "\n";
  csv += "u2,spkA,HAPPINESS" + feature_cells(0.2) + "\n";
  csv += "u3,spkB,fear" + feature_cells(0.3) + "\n";
  return csv;
}

dataset four_class_dataset(std::size_t speakers, std::size_t per_class, std::uint64_t seed) {
  synth_config cfg;
  cfg.speaker_count = speakers;
  cfg.samples_per_speaker_per_class = per_class;
  cfg.seed = seed;
  return synth_generate(cfg);
}

}  // namespace

TEST_CASE("load_csv parses a well-formed file") {
  const auto path = temp_path("siamtl_good.csv");
  write_file(path, good_csv());
  const dataset ds = load_csv(path);
  REQUIRE(ds.size() == 3);
  REQUIRE(ds[0].sample_id == "u1");
  REQUIRE(ds[0].speaker_id == "spkA");
  REQUIRE(ds[0].label == emotion::anger);
  REQUIRE(ds[1].label == emotion::happiness);  // case-insensitive
  REQUIRE(ds.speaker_count() == 2);
  REQUIRE(ds.by_speaker().at("spkA").size() == 2);
  REQUIRE(ds.of_class(emotion::fear).size() == 1);
  REQUIRE(ds.of_class(emotion::sadness).empty());
  REQUIRE(ds[2].features[0] == Catch::Approx(0.3));
}

TEST_CASE("load_csv rejects wrong feature arity") {
  const auto path = temp_path("siamtl_arity.csv");
  std::string csv = detail::csv_header() + "\n";
  csv += "u1,spkA,anger" + feature_cells(0.1) + "\n";
  std::string short_row = "u2,spkA,anger" + feature_cells(0.2);
  short_row.erase(short_row.rfind(','));  // drop the last feature column
  write_file(path, csv + short_row + "\n");
  REQUIRE_THROWS_WITH(load_csv(path),
                      Catch::Matchers::ContainsSubstring("expected 67 columns"));
}

TEST_CASE("load_csv rejects emotions outside the four-class set") {
  const auto path = temp_path("siamtl_emotion.csv");
  write_file(path, detail::csv_header() + "\nu1,spkA,disgust" + feature_cells(0.1) + "\n");
  REQUIRE_THROWS_WITH(load_csv(path), Catch::Matchers::ContainsSubstring("disgust"));
}

TEST_CASE("load_csv rejects non-numeric cells with row and column context") {
  const auto path = temp_path("siamtl_numeric.csv");
  std::string row = "u1,spkA,anger" + feature_cells(0.1);
  const auto last_comma = row.rfind(',');
  row = row.substr(0, last_comma) + ",oops";
  write_file(path, detail::csv_header() + "\n" + row + "\n");
  REQUIRE_THROWS_WITH(load_csv(path), Catch::Matchers::ContainsSubstring("f63") &&
                                          Catch::Matchers::ContainsSubstring(":2"));
}

TEST_CASE("load_csv rejects empty and headerless files") {
  const auto path = temp_path("siamtl_empty.csv");
  write_file(path, "");
  REQUIRE_THROWS_AS(load_csv(path), parse_error);
  write_file(path, "a,b,c\n");
  REQUIRE_THROWS_AS(load_csv(path), parse_error);
  write_file(path, detail::csv_header() + "\n");
  REQUIRE_THROWS_AS(load_csv(path), parse_error);  // no data rows
}

TEST_CASE("csv round-trip preserves every field") {
  const dataset ds = four_class_dataset(4, 3, 77);
  const auto path = temp_path("siamtl_roundtrip.csv");
  save_csv(ds, path);
  const dataset back = load_csv(path);
  REQUIRE(back.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    REQUIRE(back[i].sample_id == ds[i].sample_id);
    REQUIRE(back[i].speaker_id == ds[i].speaker_id);
    REQUIRE(back[i].label == ds[i].label);
    for (std::size_t f = 0; f < feature_dim; ++f)
      REQUIRE(std::abs(back[i].features[f] - ds[i].features[f]) < 1e-12);
  }
}

TEST_CASE("fit + apply normalizer yields mean 0 and std 1") {
  const dataset ds = four_class_dataset(5, 4, 5);
  const normalizer norm = fit_normalizer(ds);
  const dataset normalized = apply_normalizer(ds, norm);
  REQUIRE(normalized.normalization().has_value());
  for (std::size_t f = 0; f < feature_dim; ++f) {
    double mean = 0.0;
    for (const sample& s : normalized.samples()) mean += s.features[f];
    mean /= static_cast<double>(normalized.size());
    double var = 0.0;
    for (const sample& s : normalized.samples()) {
      const double d = s.features[f] - mean;
      var += d * d;
    }
    var /= static_cast<double>(normalized.size());
    REQUIRE(std::abs(mean) < 1e-9);
    REQUIRE(std::abs(std::sqrt(var) - 1.0) < 1e-9);
  }
}

TEST_CASE("constant features normalize to zero via the std floor") {
  std::vector<sample> rows;
  for (int i = 0; i < 3; ++i) {
    sample s;
    s.sample_id = "c" + std::to_string(i);
    s.speaker_id = "spk";
    s.label = emotion::anger;
    s.features.assign(feature_dim, 1.5);  // constant everywhere
    s.features[1] = static_cast<double>(i);
    rows.push_back(std::move(s));
  }
  const dataset ds(std::move(rows));
  const normalizer norm = fit_normalizer(ds);
  REQUIRE(norm.stddev[0] == 1e-8);
  const dataset normalized = apply_normalizer(ds, norm);
  for (const sample& s : normalized.samples()) REQUIRE(s.features[0] == 0.0);
}

TEST_CASE("a source-fitted normalizer preserves target shift") {
  const dataset source = four_class_dataset(4, 4, 9);
  synth_config shifted_cfg;
  shifted_cfg.speaker_count = 4;
  shifted_cfg.samples_per_speaker_per_class = 4;
  shifted_cfg.seed = 9;
  shifted_cfg.domain_shift.assign(feature_dim, 2.0);
  const dataset target = synth_generate(shifted_cfg);

  const normalizer norm = fit_normalizer(source);
  const dataset normalized_target = apply_normalizer(target, norm);
  double mean0 = 0.0;
  for (const sample& s : normalized_target.samples()) mean0 += s.features[10];
  mean0 /= static_cast<double>(normalized_target.size());
  REQUIRE(std::abs(mean0) > 0.5);  // the shift survives
}

TEST_CASE("fit_normalizer needs two samples") {
  std::vector<sample> rows(1);
  rows[0].sample_id = "a";
  rows[0].speaker_id = "s";
  rows[0].features.assign(feature_dim, 0.0);
  const dataset ds(std::move(rows));
  REQUIRE_THROWS_AS(fit_normalizer(ds), invalid_input_error);
}

TEST_CASE("sample_pairs balances classes and seeds deterministically") {
  const dataset ds = four_class_dataset(4, 3, 31);
  rng gen_a(5);
  const pair_batch a = sample_pairs(ds, 10, gen_a);
  REQUIRE(a.pairs.size() == 10);
  REQUIRE(a.same_count() == 5);
  REQUIRE(a.diff_count() == 5);
  rng gen_b(5);
  const pair_batch b = sample_pairs(ds, 10, gen_b);
  for (std::size_t i = 0; i < a.pairs.size(); ++i) {
    REQUIRE(a.pairs[i].first == b.pairs[i].first);
    REQUIRE(a.pairs[i].second == b.pairs[i].second);
    REQUIRE(a.pairs[i].same_class == b.pairs[i].same_class);
  }
}

TEST_CASE("sample_pairs labels match emotions and never self-pair") {
  const dataset ds = four_class_dataset(5, 3, 32);
  rng gen(6);
  const pair_batch batch = sample_pairs(ds, 400, gen);
  for (const pair_item& p : batch.pairs) {
    REQUIRE(p.first != p.second);
    REQUIRE((ds[p.first].label == ds[p.second].label) == p.same_class);
  }
}

TEST_CASE("sample_pairs same-class draws are uniform across classes") {
  const dataset ds = four_class_dataset(5, 5, 33);  // 25 per class
  rng gen(7);
  const pair_batch batch = sample_pairs(ds, 1000, gen);
  std::array<std::size_t, emotion_count> counts{};
  for (const pair_item& p : batch.pairs)
    if (p.same_class) ++counts[static_cast<std::size_t>(ds[p.first].label)];
  const double expected = 500.0 / 4.0;
  double chi2 = 0.0;
  for (std::size_t c = 0; c < emotion_count; ++c) {
    REQUIRE(counts[c] > 0);
    const double d = static_cast<double>(counts[c]) - expected;
    chi2 += d * d / expected;
  }
  REQUIRE(chi2 < 11.345);  // chi-square critical value, 3 dof, alpha = 0.01
}

TEST_CASE("sample_pairs validates inputs") {
  const dataset ds = four_class_dataset(3, 2, 34);
  rng gen(8);
  REQUIRE_THROWS_AS(sample_pairs(ds, 7, gen), invalid_input_error);  // odd
  REQUIRE_THROWS_AS(sample_pairs(ds, 0, gen), invalid_input_error);

  // single-sample classes: no class can form a same pair
  std::vector<sample> rows(2);
  rows[0] = {"a", "s1", emotion::anger, std::vector<double>(feature_dim, 0.0)};
  rows[1] = {"b", "s2", emotion::fear, std::vector<double>(feature_dim, 1.0)};
  const dataset sparse(std::move(rows));
  REQUIRE_THROWS_AS(sample_pairs(sparse, 4, gen), invalid_input_error);
}

TEST_CASE("sample_pairs honors the speaker scope flag") {
  const dataset ds = four_class_dataset(5, 3, 35);
  rng gen(9);
  const pair_batch within = sample_pairs(ds, 100, gen, pair_scope::within_speaker);
  for (const pair_item& p : within.pairs)
    REQUIRE(ds[p.first].speaker_id == ds[p.second].speaker_id);
  const pair_batch cross = sample_pairs(ds, 100, gen, pair_scope::cross_speaker);
  for (const pair_item& p : cross.pairs)
    REQUIRE(ds[p.first].speaker_id != ds[p.second].speaker_id);
}

TEST_CASE("loso_folds partitions by speaker") {
  const dataset ds = four_class_dataset(24, 2, 36);
  const std::vector<loso_fold> folds = loso_folds(ds);
  REQUIRE(folds.size() == 24);

  std::set<std::size_t> seen_tests;
  for (const loso_fold& fold : folds) {
    REQUIRE(fold.train.size() + fold.test.size() == ds.size());
    for (std::size_t i : fold.test) {
      REQUIRE(ds[i].speaker_id == fold.speaker);
      REQUIRE(seen_tests.insert(i).second);  // each sample tested exactly once
    }
    for (std::size_t i : fold.train) REQUIRE(ds[i].speaker_id != fold.speaker);
  }
  REQUIRE(seen_tests.size() == ds.size());
}

TEST_CASE("loso_folds needs two speakers") {
  const dataset ds = four_class_dataset(1, 3, 37);
  REQUIRE_THROWS_AS(loso_folds(ds), invalid_input_error);
}

TEST_CASE("synth with zero noise and offsets collapses classes to points") {
  synth_config cfg;
  cfg.speaker_count = 3;
  cfg.samples_per_speaker_per_class = 2;
  cfg.speaker_offset_scale = 0.0;
  cfg.noise_scale = 0.0;
  cfg.seed = 40;
  const dataset ds = synth_generate(cfg);
  for (emotion e : all_emotions) {
    const auto& indices = ds.of_class(e);
    for (std::size_t i : indices)
      REQUIRE(ds[i].features == ds[indices.front()].features);
  }
}

TEST_CASE("synth with zero shift magnitude equals the unshifted dataset") {
  synth_config cfg;
  cfg.speaker_count = 3;
  cfg.samples_per_speaker_per_class = 2;
  cfg.seed = 41;
  const dataset plain = synth_generate(cfg);
  cfg.domain_shift = {0.0};
  const dataset shifted = synth_generate(cfg);
  REQUIRE(plain.size() == shifted.size());
  for (std::size_t i = 0; i < plain.size(); ++i)
    REQUIRE(plain[i].features == shifted[i].features);
}

TEST_CASE("synth is bit-reproducible per seed") {
  synth_config cfg;
  cfg.speaker_count = 4;
  cfg.samples_per_speaker_per_class = 3;
  cfg.domain_shift = {1.5};
  cfg.seed = 42;
  const dataset a = synth_generate(cfg);
  const dataset b = synth_generate(cfg);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i].features == b[i].features);
}

TEST_CASE("well-separated synth is solvable by a nearest-neighbor oracle") {
  synth_config cfg;
  cfg.speaker_count = 6;
  cfg.samples_per_speaker_per_class = 4;
  cfg.class_center_separation = 10.0;
  cfg.speaker_offset_scale = 0.3;
  cfg.noise_scale = 0.5;
  cfg.seed = 43;
  const dataset ds = synth_generate(cfg);

  // hold out the last speaker, 1-NN against the rest
  const std::vector<loso_fold> folds = loso_folds(ds);
  const loso_fold& fold = folds.back();
  std::size_t correct = 0;
  for (std::size_t t : fold.test) {
    double best = 1e300;
    emotion best_label = emotion::anger;
    for (std::size_t r : fold.train) {
      double d2 = 0.0;
      for (std::size_t f = 0; f < feature_dim; ++f) {
        const double d = ds[t].features[f] - ds[r].features[f];
        d2 += d * d;
      }
      if (d2 < best) {
        best = d2;
        best_label = ds[r].label;
      }
    }
    if (best_label == ds[t].label) ++correct;
  }
  const double accuracy = static_cast<double>(correct) / static_cast<double>(fold.test.size());
  REQUIRE(accuracy > 0.95);  // balanced classes: accuracy tracks UAR here
}

TEST_CASE("dataset construction validates feature arity") {
  std::vector<sample> rows(1);
  rows[0] = {"a", "s", emotion::anger, std::vector<double>(10, 0.0)};
  REQUIRE_THROWS_AS(dataset(std::move(rows)), invalid_input_error);
}
