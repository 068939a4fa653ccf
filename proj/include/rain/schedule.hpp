#pragma once

#include <ostream>
#include <string>
#include <utility>

#include "rain/core.hpp"

namespace rain {

/// Shape of the staggered temporal batch: K frames split into G noise-level
/// groups of g = K / G frames; each level is denoised in N iterations.
struct ScheduleConfig {
  int K = 16;
  int G = 4;
  int N = 1;
  int T = 1000;

  int g() const { return K / G; }
  /// Timestep spacing between adjacent groups.
  int level_spacing() const { return T / G; }
  /// Timesteps removed by one denoiser evaluation.
  int step_size() const { return T / (N * G); }
  /// Denoiser evaluations a frame receives between push and pop.
  int lifetime() const { return G * N; }

  void validate() const {
    if (K < 1 || G < 1 || N < 1 || T < 2) throw ConfigError("schedule: K, G, N must be >= 1 and T >= 2");
    if (K % G != 0) throw ConfigError("schedule: G=" + std::to_string(G) + " must divide K=" + std::to_string(K));
    if (G * N > T) throw ConfigError("schedule: G*N must not exceed T");
    if (T % (G * N) != 0)
      throw ConfigError("schedule: G*N=" + std::to_string(G * N) + " must divide T=" + std::to_string(T) +
                        " so every step removes an integer number of timesteps");
  }

  friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

/// Per-frame timesteps of the pile, head (lowest noise, next to pop) first.
struct GroupTimesteps {
  Timestep t0 = 0;
  Timesteps vec;

  friend bool operator==(const GroupTimesteps&, const GroupTimesteps&) = default;
};

/// Frame i carries t0 + floor(i / g) * T / G.
inline GroupTimesteps group_timesteps(const ScheduleConfig& cfg, Timestep t0) {
  cfg.validate();
  if (t0 < 1 || t0 > cfg.level_spacing())
    throw RangeError("group_timesteps: t0=" + std::to_string(t0) + " outside [1, " +
                     std::to_string(cfg.level_spacing()) + "]");
  GroupTimesteps out{t0, Timesteps(static_cast<std::size_t>(cfg.K))};
  for (int i = 0; i < cfg.K; ++i) out.vec[static_cast<std::size_t>(i)] = t0 + (i / cfg.g()) * cfg.level_spacing();
  return out;
}

/// Head timesteps visited during one pop cycle: T/G, (N-1)T/(NG), ..., T/(NG).
inline Timesteps t0_sequence(const ScheduleConfig& cfg) {
  cfg.validate();
  Timesteps out(static_cast<std::size_t>(cfg.N));
  for (int j = 0; j < cfg.N; ++j) out[static_cast<std::size_t>(j)] = cfg.level_spacing() - j * cfg.step_size();
  return out;
}

/// One denoiser step: every frame loses T/(NG) timesteps. A head group that
/// reaches 0 is popped and a fresh group enters the tail at T.
inline std::pair<GroupTimesteps, int> advance(const GroupTimesteps& ts, const ScheduleConfig& cfg) {
  cfg.validate();
  GroupTimesteps next = ts;
  for (auto& t : next.vec) t -= cfg.step_size();
  int popped = 0;
  if (!next.vec.empty() && next.vec.front() <= 0) {
    popped = cfg.g();
    next.vec.erase(next.vec.begin(), next.vec.begin() + std::min<std::ptrdiff_t>(popped, std::ssize(next.vec)));
    next.vec.insert(next.vec.end(), static_cast<std::size_t>(cfg.g()), cfg.T);
  }
  next.t0 = next.vec.empty() ? 0 : next.vec.front();
  return {std::move(next), popped};
}

/// CSV rows (iteration, frame_index, timestep) for `iterations` denoiser
/// steps of a full pile starting at t0 = T/G.
inline void write_schedule_csv(std::ostream& os, const ScheduleConfig& cfg, int iterations) {
  os << "iteration,frame_index,timestep\n";
  GroupTimesteps ts = group_timesteps(cfg, cfg.level_spacing());
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < ts.vec.size(); ++i) os << it << ',' << i << ',' << ts.vec[i] << '\n';
    ts = advance(ts, cfg).first;
  }
}

inline std::ostream& operator<<(std::ostream& os, const ScheduleConfig& c) {
  return os << "ScheduleConfig{K=" << c.K << ", G=" << c.G << ", N=" << c.N << ", T=" << c.T << "}";
}

}  // namespace rain
