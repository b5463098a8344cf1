#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "s2t/features.hpp"
#include "s2t/model.hpp"

namespace s2t {

/// Finger flexion targets, thumb..pinky; 0 = fully open, 1 = fully closed.
using Trajectory = std::array<float, 5>;

inline bool valid_trajectory(const Trajectory& t) {
  return std::all_of(t.begin(), t.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
}

inline std::string normalize_word(std::string_view w) {
  std::size_t b = 0, e = w.size();
  while (b < e && std::isspace(static_cast<unsigned char>(w[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(w[e - 1]))) --e;
  std::string out(w.substr(b, e - b));
  for (auto& c : out) c = char(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

/// Word -> trajectory table. Unlisted words map to the all-zero (relaxed) vector.
class LabelMap {
 public:
  LabelMap() = default;

  void set(std::string_view word, const Trajectory& t) {
    if (!valid_trajectory(t)) throw Error(Errc::invalid_config, "trajectory for '" + std::string(word) + "' leaves [0,1]");
    entries_[normalize_word(word)] = t;
  }

  Trajectory label_of(std::string_view word) const {
    auto it = entries_.find(normalize_word(word));
    return it == entries_.end() ? Trajectory{} : it->second;
  }

  bool contains(std::string_view word) const { return entries_.count(normalize_word(word)) != 0; }
  const std::map<std::string, Trajectory>& entries() const { return entries_; }

  /// Object of word -> [5 numbers]; optional "__default__" must be all zeros.
  static LabelMap from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(Errc::invalid_config, "label map must be a JSON object");
    LabelMap m;
    for (const auto& [key, value] : j.items()) {
      if (!value.is_array() || value.size() != 5) {
        throw Error(Errc::invalid_config, "label '" + key + "' must be an array of five numbers");
      }
      Trajectory t{};
      for (std::size_t i = 0; i < 5; ++i) {
        if (!value[i].is_number()) throw Error(Errc::invalid_config, "label '" + key + "' has a non-number");
        t[i] = value[i].get<float>();
      }
      if (key == "__default__") {
        if (t != Trajectory{}) throw Error(Errc::invalid_config, "__default__ must be the zero vector");
        continue;
      }
      m.set(key, t);
    }
    return m;
  }

  static LabelMap from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io_failure, "cannot open label map " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::invalid_config, path + ": " + e.what());
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [w, t] : entries_) j[w] = t;
    j["__default__"] = Trajectory{};
    return j;
  }

 private:
  std::map<std::string, Trajectory> entries_;
};

/// The eight command words. "one" and "two" are the reference gestures;
/// the other rows are counting-gesture placeholders.
inline LabelMap default_label_map() {
  LabelMap m;
  m.set("zero", {1, 1, 1, 1, 1});
  m.set("one", {1, 0, 1, 1, 1});
  m.set("two", {1, 0, 0, 1, 1});
  m.set("three", {1, 0, 0, 0, 1});
  m.set("four", {1, 0, 0, 0, 0});
  m.set("five", {0, 0, 0, 0, 0});
  m.set("on", {0, 1, 1, 1, 1});
  m.set("off", {1, 1, 1, 1, 1});
  return m;
}

inline const std::array<std::string, 8>& command_words() {
  static const std::array<std::string, 8> w{"zero", "one", "two", "three", "four", "five", "on", "off"};
  return w;
}

// ---------------------------------------------------------------- manifest

enum class Split { train, val1, val2 };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val1: return "val1";
    case Split::val2: return "val2";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val1" || s == "validation") return Split::val1;
  if (s == "val2" || s == "test" || s == "testing") return Split::val2;
  throw Error(Errc::invalid_config, "unknown split '" + std::string(s) + "'");
}

struct Example {
  std::string path;      // absolute or root-joined
  std::string relative;  // "<word>/<file>.wav"
  std::string word;
  Split split = Split::train;
};

struct SplitCounts {
  std::size_t train = 0, val1 = 0, val2 = 0;
  std::size_t total() const { return train + val1 + val2; }
  std::size_t& at(Split s) { return s == Split::train ? train : s == Split::val1 ? val1 : val2; }
  std::size_t at(Split s) const { return s == Split::train ? train : s == Split::val1 ? val1 : val2; }
};

struct DatasetManifest {
  std::string root;
  std::vector<Example> examples;
  std::map<std::string, SplitCounts> counts;  // per word

  SplitCounts totals() const {
    SplitCounts t;
    for (const auto& [w, c] : counts) {
      t.train += c.train;
      t.val1 += c.val1;
      t.val2 += c.val2;
    }
    return t;
  }

  std::vector<const Example*> select(Split s) const {
    std::vector<const Example*> out;
    for (const auto& e : examples)
      if (e.split == s) out.push_back(&e);
    return out;
  }

  void recount() {
    counts.clear();
    for (const auto& e : examples) ++counts[e.word].at(e.split);
  }
};

namespace detail {

inline std::unordered_set<std::string> read_list(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(Errc::missing_split_lists, "missing " + p.string());
  std::unordered_set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) out.insert(line);
  }
  return out;
}

}  // namespace detail

/// Walks `<root>/<word>/*.wav`, skipping directories that start with '_'
/// (background noise). validation_list.txt -> val1, testing_list.txt -> val2,
/// everything else -> train. Examples are sorted by relative path.
inline DatasetManifest scan_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  const fs::path base(root);
  if (!fs::is_directory(base)) throw Error(Errc::io_failure, "dataset root " + root + " is not a directory");
  const auto val = detail::read_list(base / "validation_list.txt");
  const auto test = detail::read_list(base / "testing_list.txt");

  DatasetManifest m;
  m.root = root;
  for (const auto& dir : fs::directory_iterator(base)) {
    if (!dir.is_directory()) continue;
    const std::string word_dir = dir.path().filename().string();
    if (word_dir.empty() || word_dir[0] == '_' || word_dir[0] == '.') continue;
    for (const auto& f : fs::directory_iterator(dir.path())) {
      if (!f.is_regular_file() || f.path().extension() != ".wav") continue;
      Example e;
      e.relative = word_dir + "/" + f.path().filename().string();
      e.path = f.path().string();
      e.word = normalize_word(word_dir);
      e.split = val.count(e.relative) ? Split::val1 : test.count(e.relative) ? Split::val2 : Split::train;
      m.examples.push_back(std::move(e));
    }
  }
  if (m.examples.empty()) throw Error(Errc::empty_dataset, "no WAV files under " + root);
  std::sort(m.examples.begin(), m.examples.end(),
            [](const Example& a, const Example& b) { return a.relative < b.relative; });
  m.recount();
  return m;
}

/// Keeps only the given words (others dropped).
inline DatasetManifest filter_words(const DatasetManifest& m, const std::set<std::string>& words) {
  DatasetManifest out;
  out.root = m.root;
  for (const auto& e : m.examples)
    if (words.count(e.word)) out.examples.push_back(e);
  out.recount();
  return out;
}

/// Per split, draws `per_split[split]` examples with per-word quotas
/// proportional to the word's share of that split (largest remainder).
inline DatasetManifest stratified_subset(const DatasetManifest& m, const std::map<Split, std::size_t>& per_split,
                                         std::uint64_t seed) {
  DatasetManifest out;
  out.root = m.root;
  Rng rng(seed);
  for (const auto& [split, want] : per_split) {
    std::map<std::string, std::vector<const Example*>> by_word;
    std::size_t avail = 0;
    for (const auto& e : m.examples)
      if (e.split == split) {
        by_word[e.word].push_back(&e);
        ++avail;
      }
    const std::size_t target = std::min(want, avail);
    if (target == 0) continue;
    std::vector<std::pair<double, std::string>> remainders;
    std::map<std::string, std::size_t> quota;
    std::size_t assigned = 0;
    for (const auto& [w, list] : by_word) {
      const double exact = double(target) * double(list.size()) / double(avail);
      quota[w] = std::size_t(exact);
      assigned += quota[w];
      remainders.emplace_back(exact - double(quota[w]), w);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < target; ++i, ++assigned) ++quota[remainders[i % remainders.size()].second];
    for (auto& [w, list] : by_word) {
      rng.shuffle(list.begin(), list.end());
      for (std::size_t i = 0; i < std::min(quota[w], list.size()); ++i) out.examples.push_back(*list[i]);
    }
  }
  std::sort(out.examples.begin(), out.examples.end(),
            [](const Example& a, const Example& b) { return a.relative < b.relative; });
  out.recount();
  return out;
}

/// Reference per-split utterance counts of the dataset snapshot used to
/// develop the network (train, val1, val2).
inline const std::map<std::string, SplitCounts>& reference_counts() {
  static const std::map<std::string, SplitCounts> ref{
      {"zero", {3250, 384, 418}}, {"one", {3140, 351, 399}},  {"two", {3111, 345, 424}},
      {"three", {998, 356, 405}}, {"four", {2955, 373, 400}}, {"five", {3240, 367, 445}},
      {"on", {3086, 363, 396}},   {"off", {2970, 373, 402}},  {"other", {62093, 7069, 7716}},
  };
  return ref;
}

inline constexpr SplitCounts kReferenceTotals{84843, 9981, 11005};
inline constexpr std::size_t kReferenceCommandTrain = 22750;

struct AccountingReport {
  std::map<std::string, SplitCounts> grouped;  // command words + "other"
  SplitCounts totals;
  std::size_t command_train = 0;
  bool totals_match = false;
  bool command_train_match = false;
  std::vector<std::string> mismatches;
};

inline AccountingReport account(const DatasetManifest& m) {
  AccountingReport r;
  const auto& cmds = command_words();
  for (const auto& [w, c] : m.counts) {
    const bool is_cmd = std::find(cmds.begin(), cmds.end(), w) != cmds.end();
    auto& g = r.grouped[is_cmd ? w : "other"];
    g.train += c.train;
    g.val1 += c.val1;
    g.val2 += c.val2;
    if (is_cmd) r.command_train += c.train;
  }
  r.totals = m.totals();
  r.totals_match = r.totals.train == kReferenceTotals.train && r.totals.val1 == kReferenceTotals.val1 &&
                   r.totals.val2 == kReferenceTotals.val2;
  r.command_train_match = r.command_train == kReferenceCommandTrain;
  for (const auto& [w, ref] : reference_counts()) {
    const auto it = r.grouped.find(w);
    const SplitCounts got = it == r.grouped.end() ? SplitCounts{} : it->second;
    for (Split s : {Split::train, Split::val1, Split::val2}) {
      if (got.at(s) != ref.at(s)) {
        r.mismatches.push_back(w + "/" + std::string(split_name(s)) + ": " + std::to_string(got.at(s)) +
                               " (reference " + std::to_string(ref.at(s)) + ")");
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------- features & batches

/// Feature maps for a list of examples, computed with up to `threads` workers.
/// Output order follows the input order regardless of thread count.
inline std::vector<FeatureMap> compute_features(const std::vector<const Example*>& examples, unsigned threads = 1) {
  std::vector<FeatureMap> out(examples.size());
  std::vector<std::string> errors(examples.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < examples.size(); i += step) {
      try {
        out[i] = compute_feature(read_wav_file(examples[i]->path));
      } catch (const Error& e) {
        errors[i] = e.what();
      }
    }
  };
  threads = std::max(1u, threads);
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i].empty()) throw Error(Errc::io_failure, examples[i]->path + ": " + errors[i]);
  }
  return out;
}

struct Batch {
  std::vector<std::size_t> indices;  // into the example list
  Tensor<float> features;            // [B, 129, 71, 1]
  Tensor<float> targets;             // [B, 5]
};

/// Epoch-level shuffled batching over a precomputed feature list. The final
/// short batch is emitted; a trailing batch of one is merged into the previous
/// batch, since training-mode batch normalization needs two or more examples.
class BatchStream {
 public:
  BatchStream(const std::vector<FeatureMap>& features, std::vector<Trajectory> targets, std::size_t batch_size,
              std::uint64_t seed, bool shuffle = true)
      : features_(features), targets_(std::move(targets)), batch_size_(batch_size), order_(features.size()) {
    if (batch_size < 2) throw Error(Errc::invalid_config, "batch_size must be >= 2");
    if (targets_.size() != features_.size()) throw Error(Errc::shape_mismatch, "features/targets length differ");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (shuffle) Rng(seed).shuffle(order_.begin(), order_.end());
  }

  bool done() const { return pos_ >= order_.size(); }

  /// Sizes the stream will produce, in order.
  std::vector<std::size_t> batch_sizes() const {
    std::vector<std::size_t> sizes;
    for (std::size_t p = 0; p < order_.size();) {
      std::size_t n = std::min(batch_size_, order_.size() - p);
      if (order_.size() - p - n == 1) ++n;
      sizes.push_back(n);
      p += n;
    }
    return sizes;
  }

  Batch next() {
    std::size_t n = std::min(batch_size_, order_.size() - pos_);
    if (order_.size() - pos_ - n == 1) ++n;
    Batch b;
    b.indices.assign(order_.begin() + std::ptrdiff_t(pos_), order_.begin() + std::ptrdiff_t(pos_ + n));
    pos_ += n;
    std::vector<const FeatureMap*> fms;
    b.targets = Tensor<float>({n, 5});
    for (std::size_t i = 0; i < n; ++i) {
      fms.push_back(&features_[b.indices[i]]);
      for (std::size_t k = 0; k < 5; ++k) b.targets[i * 5 + k] = targets_[b.indices[i]][k];
    }
    b.features = make_input<float>(fms);
    return b;
  }

 private:
  const std::vector<FeatureMap>& features_;
  std::vector<Trajectory> targets_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------- augmentation

inline double signal_power(std::span<const std::int16_t> s) {
  double p = 0.0;
  for (auto v : s) p += double(v) * double(v);
  return s.empty() ? 0.0 : p / double(s.size());
}

/// Adds a random one-second crop of `noise` scaled so that clip power over
/// scaled-noise power equals `snr_db`. An infinite snr returns the clip.
/// Results saturate to the 16-bit range.
inline AudioClip mix_noise(const AudioClip& clip, std::span<const std::int16_t> noise, double snr_db,
                           std::uint64_t seed) {
  if (std::isinf(snr_db) && snr_db > 0) return clip;
  if (noise.size() < kClipSamples) {
    throw Error(Errc::noise_too_short, "noise has " + std::to_string(noise.size()) + " samples, need 16000");
  }
  const double ps = signal_power(clip.samples);
  if (ps == 0.0) throw Error(Errc::zero_signal_power, "cannot set an SNR for a silent clip");
  Rng rng(seed);
  const std::size_t offset = std::size_t(rng.below(noise.size() - kClipSamples + 1));
  const auto crop = noise.subspan(offset, kClipSamples);
  const double pn = signal_power(crop);
  if (pn == 0.0) return clip;
  const double gain = std::sqrt(ps / (pn * std::pow(10.0, snr_db / 10.0)));
  AudioClip out = clip;
  for (std::size_t i = 0; i < kClipSamples; ++i) {
    const double v = std::round(double(clip.samples[i]) + gain * double(crop[i]));
    out.samples[i] = std::int16_t(std::clamp(v, -32768.0, 32767.0));
  }
  return out;
}

}  // namespace s2t
