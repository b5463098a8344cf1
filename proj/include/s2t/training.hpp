#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "s2t/checkpoint.hpp"
#include "s2t/dataset.hpp"

namespace s2t {

enum class Optimizer { adam, sgd };

struct TrainConfig {
  int filters2 = 256;
  int epochs = 100;
  std::size_t batch_size = 64;
  AdamConfig adam;
  Optimizer optimizer = Optimizer::adam;
  double dropout_rate = 0.5;
  std::uint64_t seed = 7;
  bool full_batch = false;  // batch = whole training set
  bool augment = false;
  double augment_prob = 0.5;
  double snr_min_db = 10.0;
  double snr_max_db = 30.0;
  unsigned threads = 1;
  std::string out_dir;  // empty: no files written
  bool verbose = false;

  void validate() const {
    if (epochs < 1) throw Error(Errc::invalid_config, "epochs must be >= 1, got " + std::to_string(epochs));
    if (!full_batch && batch_size < 2) throw Error(Errc::invalid_config, "batch_size must be >= 2");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error(Errc::invalid_config, "dropout_rate must be in [0,1)");
    if (adam.lr <= 0.0) throw Error(Errc::invalid_config, "learning rate must be positive");
    if (augment && snr_min_db > snr_max_db) throw Error(Errc::invalid_config, "snr range is empty");
    validate_spec(NetworkSpec{filters2, dropout_rate});
  }
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_mse = 0.0, train_rmse = 0.0;
  double val_mse = 0.0, val_rmse = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_rmse = std::numeric_limits<double>::infinity();
};

struct TrainOutcome {
  Checkpoint best;
  Checkpoint last;
  TrainReport report;
};

/// Features and targets for one split, computed once.
struct LabeledSet {
  std::vector<FeatureMap> features;
  std::vector<Trajectory> targets;
  std::vector<std::string> words;
  std::vector<AudioClip> clips;  // kept only when augmentation needs them
};

inline LabeledSet load_split(const DatasetManifest& m, Split split, const LabelMap& labels, unsigned threads,
                             bool keep_clips = false) {
  LabeledSet s;
  const auto ex = m.select(split);
  s.features = compute_features(ex, threads);
  for (const auto* e : ex) {
    s.targets.push_back(labels.label_of(e->word));
    s.words.push_back(e->word);
    if (keep_clips) s.clips.push_back(read_wav_file(e->path));
  }
  return s;
}

struct EvalResult {
  double mse = 0.0;
  double rmse = 0.0;
  std::size_t count = 0;
  std::map<std::string, std::pair<double, std::size_t>> per_word;  // word -> (rmse, count)
};

/// Inference-mode evaluation. MSE normalizer is 5 * example count.
inline EvalResult evaluate(const Network<float>& net, const LabeledSet& set, std::size_t chunk = 64) {
  EvalResult r;
  std::map<std::string, std::pair<double, std::size_t>> sse;
  double total = 0.0;
  for (std::size_t begin = 0; begin < set.features.size(); begin += chunk) {
    const std::size_t end = std::min(set.features.size(), begin + chunk);
    std::vector<const FeatureMap*> fms;
    for (std::size_t i = begin; i < end; ++i) fms.push_back(&set.features[i]);
    const auto y = net.infer(make_input<float>(fms));
    for (std::size_t i = begin; i < end; ++i) {
      double e = 0.0;
      for (std::size_t k = 0; k < 5; ++k) {
        const double d = double(set.targets[i][k]) - double(y[(i - begin) * 5 + k]);
        e += d * d;
      }
      total += e;
      if (!set.words.empty()) {
        auto& w = sse[set.words[i]];
        w.first += e;
        ++w.second;
      }
    }
  }
  r.count = set.features.size();
  if (r.count == 0) throw Error(Errc::empty_dataset, "evaluation split is empty");
  r.mse = total / (5.0 * double(r.count));
  r.rmse = rmse(r.mse);
  for (const auto& [w, v] : sse) r.per_word[w] = {std::sqrt(v.first / (5.0 * double(v.second))), v.second};
  return r;
}

inline EvalResult evaluate(const Network<float>& net, const DatasetManifest& m, Split split, const LabelMap& labels,
                           unsigned threads = 1) {
  return evaluate(net, load_split(m, split, labels, threads));
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

inline void write_report_csv(const TrainReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::io_failure, "cannot write " + path);
  out << "epoch,train_mse,train_rmse,val_mse,val_rmse,seconds\n" << std::setprecision(10);
  for (const auto& e : r.epochs) {
    out << e.epoch << ',' << e.train_mse << ',' << e.train_rmse << ',' << e.val_mse << ',' << e.val_rmse << ','
        << e.seconds << '\n';
  }
}

inline std::vector<std::vector<std::int16_t>> load_noise(const std::string& root) {
  namespace fs = std::filesystem;
  std::vector<std::vector<std::int16_t>> out;
  const fs::path dir = fs::path(root) / "_background_noise_";
  if (!fs::is_directory(dir)) return out;
  std::vector<fs::path> files;
  for (const auto& f : fs::directory_iterator(dir))
    if (f.path().extension() == ".wav") files.push_back(f.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    auto s = read_wav_samples_unbounded(f.string());
    if (s.size() >= kClipSamples) out.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Adam (or SGD) over MSE with one validation pass per epoch. The best
/// validation epoch is retained and, when out_dir is set, written to
/// best.ckpt; the final weights go to last.ckpt and the per-epoch table to
/// report.csv.
inline TrainOutcome train_on(const TrainConfig& cfg, const LabeledSet& train_set, const LabeledSet& val_set,
                             const std::vector<std::vector<std::int16_t>>& noise = {},
                             const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_set.features.empty()) throw Error(Errc::empty_dataset, "training split is empty");
  if (val_set.features.empty()) throw Error(Errc::empty_dataset, "validation split is empty");
  if (cfg.full_batch && train_set.features.size() < 2) throw Error(Errc::invalid_config, "full batch needs >= 2 examples");
  const bool augmenting = cfg.augment && !noise.empty() && train_set.clips.size() == train_set.features.size();

  namespace fs = std::filesystem;
  if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);

  Network<float> net = build_network<float>(NetworkSpec{cfg.filters2, cfg.dropout_rate}, cfg.seed);
  AdamState<float> adam{cfg.adam, 0, {}, {}};
  TrainOutcome outcome{{net, {}}, {net, {}}, {}};
  double best_mse = std::numeric_limits<double>::infinity();
  const std::size_t batch_size = cfg.full_batch ? train_set.features.size() : cfg.batch_size;

  std::vector<FeatureMap> augmented;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t epoch_seed = detail::mix_seed(cfg.seed, std::uint64_t(epoch));

    const std::vector<FeatureMap>* feats = &train_set.features;
    if (augmenting) {
      Rng arng(detail::mix_seed(epoch_seed, 0xA5A5));
      augmented = train_set.features;
      for (std::size_t i = 0; i < augmented.size(); ++i) {
        if (arng.uniform01() >= cfg.augment_prob) continue;
        const auto& n = noise[arng.below(noise.size())];
        const double snr = arng.uniform(cfg.snr_min_db, cfg.snr_max_db);
        if (signal_power(train_set.clips[i].samples) == 0.0) continue;
        augmented[i] = compute_feature(mix_noise(train_set.clips[i], n, snr, arng.next_u64()));
      }
      feats = &augmented;
    }

    BatchStream stream(*feats, train_set.targets, std::max<std::size_t>(batch_size, 2), epoch_seed, !cfg.full_batch);
    double sse = 0.0;
    std::size_t seen = 0, batch_index = 0;
    ForwardCache<float> cache;
    while (!stream.done()) {
      Batch b = stream.next();
      const auto y = net.forward_train(b.features, cache, detail::mix_seed(epoch_seed, batch_index + 1));
      const auto loss = mse_loss(b.targets, y);
      if (!std::isfinite(loss.mse)) {
        throw Error(Errc::non_finite_loss, "epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_index) +
                                               " (first example index " + std::to_string(b.indices.front()) + ")");
      }
      const auto grads = net.backward(cache, loss.grad);
      std::vector<const Tensor<float>*> gp;
      for (const auto& g : grads) gp.push_back(&g);
      if (cfg.optimizer == Optimizer::adam) {
        adam_step(net.parameters(), gp, adam);
      } else {
        sgd_step(net.parameters(), gp, cfg.adam.lr);
      }
      sse += loss.mse * 5.0 * double(b.indices.size());
      seen += b.indices.size();
      ++batch_index;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mse = sse / (5.0 * double(seen));
    rec.train_rmse = rmse(rec.train_mse);
    const auto val = evaluate(net, val_set);
    rec.val_mse = val.mse;
    rec.val_rmse = val.rmse;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    outcome.report.epochs.push_back(rec);

    if (val.mse < best_mse) {
      best_mse = val.mse;
      outcome.report.best_epoch = epoch;
      outcome.report.best_val_rmse = val.rmse;
      outcome.best = {net, {epoch, val.mse, cfg.seed}};
      if (!cfg.out_dir.empty()) save_checkpoint(net, outcome.best.meta, (fs::path(cfg.out_dir) / "best.ckpt").string());
    }
    if (!cfg.out_dir.empty()) detail::write_report_csv(outcome.report, (fs::path(cfg.out_dir) / "report.csv").string());
    if (on_epoch) on_epoch(rec);
  }
  outcome.last = {net, {cfg.epochs, best_mse, cfg.seed}};
  if (!cfg.out_dir.empty()) save_checkpoint(net, outcome.last.meta, (fs::path(cfg.out_dir) / "last.ckpt").string());
  return outcome;
}

inline TrainOutcome train(const TrainConfig& cfg, const DatasetManifest& manifest, const LabelMap& labels,
                          const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const auto train_set = load_split(manifest, Split::train, labels, cfg.threads, cfg.augment);
  const auto val_set = load_split(manifest, Split::val1, labels, cfg.threads);
  const auto noise = cfg.augment ? detail::load_noise(manifest.root) : std::vector<std::vector<std::int16_t>>{};
  return train_on(cfg, train_set, val_set, noise, on_epoch);
}

/// Full-batch plain gradient descent without dropout; returns the training-mode
/// MSE measured before each update.
template <typename T>
std::vector<double> full_batch_descent(Network<T>& net, const Tensor<T>& x, const Tensor<T>& targets, int steps,
                                       double lr) {
  const double saved_rate = net.spec.dropout_rate;
  net.spec.dropout_rate = 0.0;
  std::vector<double> losses;
  ForwardCache<T> cache;
  for (int s = 0; s < steps; ++s) {
    const auto y = net.forward_train(x, cache, 0);
    const auto loss = mse_loss(targets, y);
    losses.push_back(loss.mse);
    const auto grads = net.backward(cache, loss.grad);
    std::vector<const Tensor<T>*> gp;
    for (const auto& g : grads) gp.push_back(&g);
    sgd_step(net.parameters(), gp, lr);
  }
  net.spec.dropout_rate = saved_rate;
  return losses;
}

}  // namespace s2t
