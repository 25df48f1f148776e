#pragma once

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "siamtl/errors.hpp"
#include "siamtl/pairs.hpp"
#include "siamtl/rng.hpp"

namespace siamtl {

inline constexpr std::size_t feature_dim = 64;

// Fixed class order; ties in classification break toward the lower value.
enum class emotion : int { anger = 0, happiness = 1, sadness = 2, fear = 3 };

inline constexpr std::array<emotion, 4> all_emotions = {emotion::anger, emotion::happiness,
                                                        emotion::sadness, emotion::fear};
inline constexpr std::size_t emotion_count = all_emotions.size();

inline std::string_view to_string(emotion e) {
  switch (e) {
    case emotion::anger: return "anger";
    case emotion::happiness: return "happiness";
    case emotion::sadness: return "sadness";
    case emotion::fear: return "fear";
  }
  return "anger";
}

inline std::optional<emotion> emotion_from_string(std::string_view text) {
  std::string lower(text);
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (emotion e : all_emotions)
    if (lower == to_string(e)) return e;
  return std::nullopt;
}

struct sample {
  std::string sample_id;
  std::string speaker_id;
  emotion label = emotion::anger;
  std::vector<double> features;  // exactly feature_dim entries, all finite
};

struct normalizer {
  std::vector<double> mean;
  std::vector<double> stddev;  // floored at 1e-8, always > 0

  std::vector<double> apply(std::span<const double> features) const {
    if (features.size() != mean.size()) throw shape_error("normalizer: feature arity mismatch");
    std::vector<double> out(features.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (features[i] - mean[i]) / stddev[i];
    return out;
  }
};

// Immutable after construction; speaker/class indices are built once and
// stay consistent with the sample list.
class dataset {
 public:
  dataset() = default;

  explicit dataset(std::vector<sample> samples, std::optional<normalizer> norm_state = {})
      : samples_(std::move(samples)), norm_(std::move(norm_state)) {
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      const sample& s = samples_[i];
      if (s.features.size() != feature_dim)
        throw invalid_input_error("sample '" + s.sample_id + "' has " +
                                  std::to_string(s.features.size()) + " features, expected " +
                                  std::to_string(feature_dim));
      for (double f : s.features)
        if (!std::isfinite(f))
          throw invalid_input_error("sample '" + s.sample_id + "' has a non-finite feature");
      by_speaker_[s.speaker_id].push_back(i);
      by_class_[static_cast<std::size_t>(s.label)].push_back(i);
    }
  }

  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const std::vector<sample>& samples() const { return samples_; }
  const sample& operator[](std::size_t i) const { return samples_[i]; }

  const std::map<std::string, std::vector<std::size_t>>& by_speaker() const { return by_speaker_; }
  const std::vector<std::size_t>& of_class(emotion e) const {
    return by_class_[static_cast<std::size_t>(e)];
  }
  std::size_t speaker_count() const { return by_speaker_.size(); }
  const std::optional<normalizer>& normalization() const { return norm_; }

 private:
  std::vector<sample> samples_;
  std::map<std::string, std::vector<std::size_t>> by_speaker_;
  std::array<std::vector<std::size_t>, emotion_count> by_class_;
  std::optional<normalizer> norm_;
};

// New dataset holding copies of the selected samples (indices re-based).
inline dataset subset(const dataset& ds, std::span<const std::size_t> indices) {
  std::vector<sample> rows;
  rows.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= ds.size()) throw invalid_input_error("subset: index out of range");
    rows.push_back(ds[i]);
  }
  return dataset(std::move(rows), ds.normalization());
}

namespace detail {

inline std::string csv_header() {
  std::string header = "sample_id,speaker_id,emotion";
  char buf[8];
  for (std::size_t i = 0; i < feature_dim; ++i) {
    std::snprintf(buf, sizeof(buf), ",f%02zu", i);
    header += buf;
  }
  return header;
}

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  cells.push_back(cur);
  return cells;
}

// Shortest exact decimal representation for a double.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// Header contract: sample_id,speaker_id,emotion,f00..f63. Emotions are
// case-insensitive and restricted to the four-class set.
inline dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw parse_error("cannot open '" + path.string() + "'");

  std::string line;
  if (!std::getline(in, line)) throw parse_error(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::string expected = detail::csv_header();
  if (line != expected)
    throw parse_error(path.string() + ": bad header, expected '" + expected + "'");

  std::vector<sample> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    const std::vector<std::string> cells = detail::split_line(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (cells.size() != 3 + feature_dim)
      throw parse_error(where + ": expected " + std::to_string(3 + feature_dim) + " columns, got " +
                        std::to_string(cells.size()));
    sample s;
    s.sample_id = cells[0];
    s.speaker_id = cells[1];
    if (s.sample_id.empty()) throw parse_error(where + ": empty sample_id");
    if (s.speaker_id.empty()) throw parse_error(where + ": empty speaker_id");
    const auto label = emotion_from_string(cells[2]);
    if (!label)
      throw parse_error(where + ": unknown emotion '" + cells[2] +
                        "' (allowed: anger, happiness, sadness, fear)");
    s.label = *label;
    s.features.resize(feature_dim);
    for (std::size_t f = 0; f < feature_dim; ++f) {
      const std::string& cell = cells[3 + f];
      const char* begin = cell.data();
      const char* end = begin + cell.size();
      auto [ptr, ec] = std::from_chars(begin, end, s.features[f]);
      if (ec != std::errc() || ptr != end)
        throw parse_error(where + ": column f" + (f < 10 ? "0" : "") + std::to_string(f) +
                          ": non-numeric value '" + cell + "'");
      if (!std::isfinite(s.features[f]))
        throw parse_error(where + ": column f" + (f < 10 ? "0" : "") + std::to_string(f) +
                          ": non-finite value");
    }
    rows.push_back(std::move(s));
  }
  if (rows.empty()) throw parse_error(path.string() + ": no data rows");
  return dataset(std::move(rows));
}

inline void save_csv(const dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw io_error("cannot write '" + path.string() + "'");
  out << detail::csv_header() << "\n";
  for (const sample& s : ds.samples()) {
    out << s.sample_id << ',' << s.speaker_id << ',' << to_string(s.label);
    for (double f : s.features) out << ',' << detail::format_double(f);
    out << "\n";
  }
  if (!out) throw io_error("write failed for '" + path.string() + "'");
}

// Population statistics over every sample; constant features get the 1e-8
// std floor so their normalized column is all zeros.
inline normalizer fit_normalizer(const dataset& ds) {
  if (ds.size() < 2) throw invalid_input_error("fit_normalizer: need at least 2 samples");
  normalizer norm;
  norm.mean.assign(feature_dim, 0.0);
  norm.stddev.assign(feature_dim, 0.0);
  const double n = static_cast<double>(ds.size());
  for (const sample& s : ds.samples())
    for (std::size_t i = 0; i < feature_dim; ++i) norm.mean[i] += s.features[i];
  for (double& m : norm.mean) m /= n;
  for (const sample& s : ds.samples())
    for (std::size_t i = 0; i < feature_dim; ++i) {
      const double d = s.features[i] - norm.mean[i];
      norm.stddev[i] += d * d;
    }
  for (double& v : norm.stddev) v = std::max(std::sqrt(v / n), 1e-8);
  return norm;
}

// Z-scored copy; fit statistics come from training data only and are reused
// verbatim on test/target data.
inline dataset apply_normalizer(const dataset& ds, const normalizer& norm) {
  std::vector<sample> rows;
  rows.reserve(ds.size());
  for (const sample& s : ds.samples()) {
    sample copy = s;
    copy.features = norm.apply(s.features);
    rows.push_back(std::move(copy));
  }
  return dataset(std::move(rows), norm);
}

enum class pair_scope { any, within_speaker, cross_speaker };

inline std::string_view to_string(pair_scope s) {
  switch (s) {
    case pair_scope::any: return "any";
    case pair_scope::within_speaker: return "within_speaker";
    case pair_scope::cross_speaker: return "cross_speaker";
  }
  return "any";
}

inline std::optional<pair_scope> pair_scope_from_string(std::string_view text) {
  if (text == "any") return pair_scope::any;
  if (text == "within_speaker") return pair_scope::within_speaker;
  if (text == "cross_speaker") return pair_scope::cross_speaker;
  return std::nullopt;
}

namespace detail {

inline bool scope_ok(const dataset& ds, std::size_t a, std::size_t b, pair_scope scope) {
  switch (scope) {
    case pair_scope::any: return true;
    case pair_scope::within_speaker: return ds[a].speaker_id == ds[b].speaker_id;
    case pair_scope::cross_speaker: return ds[a].speaker_id != ds[b].speaker_id;
  }
  return true;
}

}  // namespace detail

// Exactly n_pairs/2 same-class and n_pairs/2 different-class pairs, sampled
// with replacement across the batch, never pairing a sample with itself.
// Same-class pairs pick a class uniformly among those with >= 2 samples,
// then a uniform distinct pair within it; different-class pairs pick two
// distinct classes uniformly, then one sample from each.
inline pair_batch sample_pairs(const dataset& ds, std::size_t n_pairs, rng& gen,
                               pair_scope scope = pair_scope::any) {
  if (n_pairs == 0 || n_pairs % 2 != 0)
    throw invalid_input_error("sample_pairs: n_pairs must be positive and even");

  std::vector<emotion> nonempty;
  std::vector<emotion> pairable;  // >= 2 samples
  for (emotion e : all_emotions) {
    const std::size_t n = ds.of_class(e).size();
    if (n >= 1) nonempty.push_back(e);
    if (n >= 2) pairable.push_back(e);
  }
  if (nonempty.size() < 2)
    throw invalid_input_error("sample_pairs: need at least 2 classes with samples");
  if (pairable.empty())
    throw invalid_input_error("sample_pairs: no class has 2 samples for same-class pairs");

  constexpr std::size_t max_attempts = 10000;
  auto same_pair = [&]() -> pair_item {
    for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
      const std::vector<std::size_t>& pool =
          ds.of_class(pairable[gen.below(pairable.size())]);
      const std::size_t i = gen.below(pool.size());
      std::size_t j = gen.below(pool.size() - 1);
      if (j >= i) ++j;
      if (detail::scope_ok(ds, pool[i], pool[j], scope)) return {pool[i], pool[j], true};
    }
    throw invalid_input_error("sample_pairs: cannot satisfy pair scope '" +
                              std::string(to_string(scope)) + "' for same-class pairs");
  };
  auto diff_pair = [&]() -> pair_item {
    for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
      const std::size_t ci = gen.below(nonempty.size());
      std::size_t cj = gen.below(nonempty.size() - 1);
      if (cj >= ci) ++cj;
      const std::vector<std::size_t>& pa = ds.of_class(nonempty[ci]);
      const std::vector<std::size_t>& pb = ds.of_class(nonempty[cj]);
      const std::size_t a = pa[gen.below(pa.size())];
      const std::size_t b = pb[gen.below(pb.size())];
      if (detail::scope_ok(ds, a, b, scope)) return {a, b, false};
    }
    throw invalid_input_error("sample_pairs: cannot satisfy pair scope '" +
                              std::string(to_string(scope)) + "' for different-class pairs");
  };

  pair_batch batch;
  batch.pairs.reserve(n_pairs);
  for (std::size_t k = 0; k < n_pairs / 2; ++k) {
    batch.pairs.push_back(same_pair());
    batch.pairs.push_back(diff_pair());
  }
  return batch;
}

struct loso_fold {
  std::string speaker;
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// One fold per speaker, in sorted speaker order; each fold's test set is
// exactly that speaker's samples.
inline std::vector<loso_fold> loso_folds(const dataset& ds) {
  if (ds.speaker_count() < 2)
    throw invalid_input_error("loso_folds: need at least 2 speakers");
  std::vector<loso_fold> folds;
  folds.reserve(ds.speaker_count());
  for (const auto& [speaker, test_indices] : ds.by_speaker()) {
    loso_fold fold;
    fold.speaker = speaker;
    fold.test = test_indices;
    fold.train.reserve(ds.size() - test_indices.size());
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds[i].speaker_id != speaker) fold.train.push_back(i);
    folds.push_back(std::move(fold));
  }
  return folds;
}

}  // namespace siamtl
