#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "s2t/checkpoint.hpp"
#include "s2t/dataset.hpp"

namespace s2t {

using Clock = std::chrono::steady_clock;

inline std::int64_t monotonic_ms(Clock::time_point t = Clock::now()) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
}

struct TrajectoryEvent {
  Trajectory trajectory{};
  double inference_latency_ms = 0.0;
  std::int64_t window_end_ms = 0;
};

inline nlohmann::json event_to_json(const TrajectoryEvent& e) {
  return {{"trajectory", e.trajectory}, {"latency_ms", e.inference_latency_ms}, {"ts_ms", e.window_end_ms}};
}

inline Trajectory clamp_trajectory(std::span<const float> raw) {
  Trajectory t{};
  for (std::size_t i = 0; i < t.size(); ++i) {
    const float v = raw[i];
    t[i] = std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f);
  }
  return t;
}

/// Immutable inference engine; safe to share across threads.
class Engine {
 public:
  explicit Engine(Network<float> net) : net_(std::make_shared<const Network<float>>(std::move(net))) {}

  static Engine from_checkpoint(const std::string& path) {
    try {
      return Engine(load_checkpoint(path).network);
    } catch (const Error& e) {
      throw Error(Errc::checkpoint_load_failure, e.what());
    }
  }

  const Network<float>& network() const { return *net_; }

  /// Raw network output (nonnegative, unbounded above).
  std::array<float, 5> forward_raw(const AudioClip& clip) const {
    const auto fm = compute_feature(clip);
    const auto y = net_->infer(make_input<float>({&fm}));
    return {y[0], y[1], y[2], y[3], y[4]};
  }

  /// Feature extraction + forward pass, clamped to [0,1]^5, with latency.
  TrajectoryEvent infer_clip(const AudioClip& clip) const {
    const auto t0 = Clock::now();
    const auto raw = forward_raw(clip);
    const auto t1 = Clock::now();
    TrajectoryEvent e;
    e.trajectory = clamp_trajectory(raw);
    e.inference_latency_ms = std::max(std::chrono::duration<double, std::milli>(t1 - t0).count(), 1e-6);
    e.window_end_ms = monotonic_ms(t0);
    return e;
  }

 private:
  std::shared_ptr<const Network<float>> net_;
};

/// Bounded FIFO; a push onto a full queue drops the oldest item.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  /// Returns true if an older item was dropped.
  bool push(T item) {
    std::lock_guard lock(mutex_);
    bool dropped = false;
    if (items_.size() >= capacity_) {
      items_.pop_front();
      dropped = true;
      ++dropped_;
    }
    items_.push_back(std::move(item));
    cv_.notify_one();
    return dropped;
  }

  /// Blocks until an item arrives or the queue is closed and drained.
  T pop() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) throw Error(Errc::engine_stopped, "queue closed");
    T v = std::move(items_.front());
    items_.pop_front();
    return v;
  }

  std::optional<T> pop_for(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mutex_);
    if (!cv_.wait_for(lock, timeout, [&] { return !items_.empty() || closed_; })) return std::nullopt;
    if (items_.empty()) throw Error(Errc::engine_stopped, "queue closed");
    T v = std::move(items_.front());
    items_.pop_front();
    return v;
  }

  std::optional<T> try_pop() {
    std::lock_guard lock(mutex_);
    if (items_.empty()) return std::nullopt;
    T v = std::move(items_.front());
    items_.pop_front();
    return v;
  }

  void close() {
    std::lock_guard lock(mutex_);
    closed_ = true;
    cv_.notify_all();
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return items_.size();
  }
  std::size_t dropped() const {
    std::lock_guard lock(mutex_);
    return dropped_;
  }

 private:
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<T> items_;
  std::size_t capacity_;
  std::size_t dropped_ = 0;
  bool closed_ = false;
};

inline constexpr int kMinPeriodMs = 20;

/// Fixed-cadence inference over a ring buffer. Every period the ring is
/// snapshotted and inferred; when an inference overruns, the missed ticks are
/// skipped rather than queued.
class StreamLoop {
 public:
  using InferFn = std::function<TrajectoryEvent(const AudioClip&)>;
  using Sink = std::function<void(const TrajectoryEvent&)>;

  StreamLoop(InferFn infer, const RingBuffer& ring, std::chrono::milliseconds period, Sink sink)
      : infer_(std::move(infer)), ring_(ring), period_(period), sink_(std::move(sink)) {
    if (period_.count() < kMinPeriodMs) {
      throw Error(Errc::invalid_config, "period must be >= 20 ms, got " + std::to_string(period_.count()));
    }
  }
  StreamLoop(const Engine& engine, const RingBuffer& ring, std::chrono::milliseconds period, Sink sink)
      : StreamLoop([engine](const AudioClip& c) { return engine.infer_clip(c); }, ring, period, std::move(sink)) {}

  StreamLoop(const StreamLoop&) = delete;
  StreamLoop& operator=(const StreamLoop&) = delete;
  ~StreamLoop() { stop(); }

  void start() {
    if (thread_.joinable()) return;
    stopping_ = false;
    thread_ = std::thread([this] { run(); });
  }

  void stop() {
    {
      std::lock_guard lock(mutex_);
      stopping_ = true;
    }
    cv_.notify_all();
    if (thread_.joinable()) thread_.join();
  }

  std::size_t ticks_run() const { return ticks_run_.load(); }
  std::size_t ticks_skipped() const { return ticks_skipped_.load(); }

 private:
  void run() {
    auto next = Clock::now() + period_;
    for (;;) {
      {
        std::unique_lock lock(mutex_);
        if (cv_.wait_until(lock, next, [&] { return stopping_; })) return;
      }
      auto clip = AudioClip::from_samples(ring_.snapshot(), "stream");
      const auto snap_time = Clock::now();
      try {
        auto event = infer_(clip);
        event.window_end_ms = monotonic_ms(snap_time);
        ++ticks_run_;
        sink_(event);
      } catch (const std::exception&) {
        ++ticks_failed_;
      }
      next += period_;
      const auto now = Clock::now();
      if (now > next) {
        const auto behind = (now - next) / period_ + 1;
        ticks_skipped_ += std::size_t(behind);
        next += period_ * behind;
      }
    }
  }

  InferFn infer_;
  const RingBuffer& ring_;
  std::chrono::milliseconds period_;
  Sink sink_;
  std::thread thread_;
  std::mutex mutex_;
  std::condition_variable cv_;
  bool stopping_ = false;
  std::atomic<std::size_t> ticks_run_{0};
  std::atomic<std::size_t> ticks_skipped_{0};
  std::atomic<std::size_t> ticks_failed_{0};
};

struct BenchStats {
  std::vector<double> samples_ms;
  double mean = 0.0, p50 = 0.0, p95 = 0.0, max = 0.0;
};

/// Nearest-rank percentile of sorted data.
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const auto rank = std::size_t(std::ceil(q * double(sorted.size())));
  return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

inline BenchStats summarize_latencies(std::vector<double> samples) {
  BenchStats s;
  s.samples_ms = samples;
  std::sort(samples.begin(), samples.end());
  double sum = 0.0;
  for (double v : samples) sum += v;
  s.mean = samples.empty() ? 0.0 : sum / double(samples.size());
  s.p50 = percentile_sorted(samples, 0.50);
  s.p95 = percentile_sorted(samples, 0.95);
  s.max = samples.empty() ? 0.0 : samples.back();
  return s;
}

/// Repeated infer_clip on one fixed pseudo-random clip.
inline BenchStats bench(const Engine& engine, int iterations, std::uint64_t seed = 1) {
  if (iterations < 30) throw Error(Errc::invalid_config, "bench needs >= 30 iterations, got " + std::to_string(iterations));
  Rng rng(seed);
  AudioClip clip;
  for (auto& s : clip.samples) s = std::int16_t(rng.uniform(-8000.0, 8000.0));
  (void)engine.infer_clip(clip);  // warm-up
  std::vector<double> lat;
  lat.reserve(std::size_t(iterations));
  for (int i = 0; i < iterations; ++i) lat.push_back(engine.infer_clip(clip).inference_latency_ms);
  return summarize_latencies(std::move(lat));
}

}  // namespace s2t
