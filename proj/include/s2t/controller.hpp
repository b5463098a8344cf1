#pragma once

// Per-finger PI loop around a first-order actuator stand-in. The network emits
// piecewise-constant ("stair") references; the loop turns them into
// continuous position trajectories.

#include <algorithm>
#include <array>
#include <ostream>
#include <vector>

#include "s2t/dataset.hpp"

namespace s2t {

struct PIGains {
  double kp = 2.0;
  double ki = 20.0;
  double i_max = 1.0;
  double u_min = 0.0;
  double u_max = 1.0;
};

class PIController {
 public:
  explicit PIController(PIGains g = {}, double dt_s = 0.01) : gains_(g), dt_(dt_s) {}

  /// e = reference - measured; integral += ki*e*dt (clamped); u = sat(kp*e + integral).
  double step(double reference, double measured) {
    const double e = reference - measured;
    integral_ = std::clamp(integral_ + gains_.ki * e * dt_, -gains_.i_max, gains_.i_max);
    return std::clamp(gains_.kp * e + integral_, gains_.u_min, gains_.u_max);
  }

  double integral() const { return integral_; }
  const PIGains& gains() const { return gains_; }
  void reset() { integral_ = 0.0; }

 private:
  PIGains gains_;
  double dt_;
  double integral_ = 0.0;
};

struct PlantParams {
  double time_constant_s = 0.05;
  double dt_s = 0.01;
};

/// x <- x + dt * (u - x) / tau, saturated to [0, 1].
class FingerPlant {
 public:
  explicit FingerPlant(PlantParams p = {}, double position = 0.0) : params_(p), position_(position) {
    if (!(p.dt_s > 0.0 && p.time_constant_s > p.dt_s)) {
      throw Error(Errc::invalid_config, "plant needs 0 < dt < time constant");
    }
  }

  double step(double u) {
    position_ = std::clamp(position_ + params_.dt_s * (u - position_) / params_.time_constant_s, 0.0, 1.0);
    return position_;
  }

  double position() const { return position_; }
  const PlantParams& params() const { return params_; }

 private:
  PlantParams params_;
  double position_;
};

/// A reference change at time t_s (seconds from simulation start).
struct TimedTrajectory {
  double t_s = 0.0;
  Trajectory trajectory{};
};

struct SimSample {
  double t_s = 0.0;
  std::array<double, 5> reference{};
  std::array<double, 5> position{};
};

/// Zero-order hold of the latest event as reference; five independent loops.
/// Samples are taken before each step, from t = 0 to t = duration inclusive.
inline std::vector<SimSample> simulate(std::vector<TimedTrajectory> events, const PIGains& gains,
                                       const PlantParams& plant, double duration_s) {
  std::stable_sort(events.begin(), events.end(),
                   [](const TimedTrajectory& a, const TimedTrajectory& b) { return a.t_s < b.t_s; });
  std::array<PIController, 5> ctrl{PIController(gains, plant.dt_s), PIController(gains, plant.dt_s),
                                   PIController(gains, plant.dt_s), PIController(gains, plant.dt_s),
                                   PIController(gains, plant.dt_s)};
  std::array<FingerPlant, 5> fingers{FingerPlant(plant), FingerPlant(plant), FingerPlant(plant), FingerPlant(plant),
                                     FingerPlant(plant)};
  const auto steps = std::size_t(std::llround(duration_s / plant.dt_s));
  std::vector<SimSample> out;
  out.reserve(steps + 1);
  std::array<double, 5> ref{};
  std::size_t next_event = 0;
  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = double(k) * plant.dt_s;
    while (next_event < events.size() && events[next_event].t_s <= t + 1e-12) {
      for (std::size_t f = 0; f < 5; ++f) ref[f] = std::clamp(double(events[next_event].trajectory[f]), 0.0, 1.0);
      ++next_event;
    }
    SimSample s{t, ref, {}};
    for (std::size_t f = 0; f < 5; ++f) s.position[f] = fingers[f].position();
    out.push_back(s);
    if (k == steps) break;
    for (std::size_t f = 0; f < 5; ++f) fingers[f].step(ctrl[f].step(ref[f], fingers[f].position()));
  }
  return out;
}

inline void write_sim_csv(std::ostream& os, const std::vector<SimSample>& samples) {
  os << "t_s";
  for (int f = 1; f <= 5; ++f) os << ",ref" << f;
  for (int f = 1; f <= 5; ++f) os << ",pos" << f;
  os << '\n';
  for (const auto& s : samples) {
    os << s.t_s;
    for (double v : s.reference) os << ',' << v;
    for (double v : s.position) os << ',' << v;
    os << '\n';
  }
}

}  // namespace s2t
