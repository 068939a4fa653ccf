#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "rain/gaussian.hpp"
#include "rain/stream.hpp"

namespace rain {

struct BenchReport {
  int first_frame_latency_iters = 0;  // denoiser calls before the first pop
  Clock::duration first_frame_latency_wall{};
  double throughput_frames_per_iter = 0;  // frames per denoiser call, steady state
  Clock::duration engine_overhead_per_iter{};  // mean over steady-state steps
  Clock::duration denoiser_time_per_iter{};
  std::vector<StepRecord> series;
};

struct JitterReport {
  double boundary_msd = 0;
  double interior_msd = 0;
  double ratio = 1;
};

struct DriftReport {
  int window = 0;
  std::vector<double> center;     // frame index at the middle of each window
  std::vector<double> mean_dev;   // window mean minus prior mean, averaged over dimensions
  std::vector<double> mean_norm;  // RMS over dimensions of the window-mean deviation
  std::vector<double> var_dev;    // window variance minus prior variance, averaged over dimensions
  double max_deviation = 0;       // max of sqrt(mean_norm^2 + var_dev^2)
  std::int64_t max_index = 0;     // first frame of that window
  double tau = 0;                 // Kendall rank correlation of deviation vs time
  double slope = 0;               // least-squares slope of mean_dev per frame
};

/// Kendall tau-b between two equally long series.
inline double kendall_tau(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("kendall_tau: length mismatch");
  const std::size_t n = x.size();
  double concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = x[j] - x[i], dy = y[j] - y[i];
      if (dx == 0 && dy == 0) continue;
      if (dx == 0) ++ties_x;
      else if (dy == 0) ++ties_y;
      else if ((dx > 0) == (dy > 0)) ++concordant;
      else ++discordant;
    }
  const double denom = std::sqrt((concordant + discordant + ties_x) * (concordant + discordant + ties_y));
  return denom > 0 ? (concordant - discordant) / denom : 0.0;
}

inline double ols_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n, my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxx > 0 ? sxy / sxx : 0.0;
}

/// Mean squared consecutive-frame difference, split by whether the later
/// frame starts a group (global index divisible by g).
inline JitterReport jitter_ratio(const std::vector<Frame>& frames, int g) {
  if (g < 1) throw ConfigError("jitter_ratio: g must be >= 1");
  if (frames.size() < 2 * static_cast<std::size_t>(g)) throw Error("jitter_ratio: need at least 2g frames");
  double boundary = 0, interior = 0;
  std::size_t nb = 0, ni = 0;
  for (std::size_t i = 1; i < frames.size(); ++i) {
    const double d2 = (frames[i] - frames[i - 1]).squaredNorm() / static_cast<double>(frames[i].size());
    if (i % static_cast<std::size_t>(g) == 0) {
      boundary += d2;
      ++nb;
    } else {
      interior += d2;
      ++ni;
    }
  }
  JitterReport r;
  r.boundary_msd = nb ? boundary / static_cast<double>(nb) : 0.0;
  r.interior_msd = ni ? interior / static_cast<double>(ni) : 0.0;
  if (r.interior_msd > 0) r.ratio = r.boundary_msd / r.interior_msd;
  else r.ratio = r.boundary_msd > 0 ? std::numeric_limits<double>::infinity() : 1.0;
  return r;
}

/// Windowed first and second moments of a stream against the prior marginal.
inline DriftReport drift(const std::vector<Frame>& frames, const GaussianPrior& prior, int window) {
  if (window < 2) throw ConfigError("drift: window must be >= 2");
  if (frames.empty() || frames.size() % static_cast<std::size_t>(window) != 0)
    throw ConfigError("drift: window must divide the stream length");
  const Eigen::Index d = prior.d();
  const Frame mu = prior.frame_mean(), var = prior.marginal_variance();
  DriftReport r;
  r.window = window;
  std::vector<double> magnitude;
  for (std::size_t start = 0; start < frames.size(); start += static_cast<std::size_t>(window)) {
    Frame sum = Frame::Zero(d), sq = Frame::Zero(d);
    for (int k = 0; k < window; ++k) {
      const Frame& f = frames[start + static_cast<std::size_t>(k)];
      if (f.size() != d) throw ShapeError("drift: frame dimension does not match prior");
      sum += f;
      sq += f.cwiseProduct(f);
    }
    const Frame m = sum / window;
    const Frame v = (sq - window * m.cwiseProduct(m)) / (window - 1);
    const Frame dm = m - mu;
    r.center.push_back(static_cast<double>(start) + (window - 1) / 2.0);
    r.mean_dev.push_back(dm.mean());
    r.mean_norm.push_back(std::sqrt(dm.squaredNorm() / static_cast<double>(d)));
    r.var_dev.push_back((v - var).mean());
    magnitude.push_back(std::hypot(r.mean_norm.back(), r.var_dev.back()));
    if (magnitude.back() > r.max_deviation) {
      r.max_deviation = magnitude.back();
      r.max_index = static_cast<std::int64_t>(start);
    }
  }
  r.tau = kendall_tau(r.center, magnitude);
  r.slope = ols_slope(r.center, r.mean_dev);
  return r;
}

/// Runs the stream with timing around the whole step and around each
/// denoiser call. Counts are deterministic; durations are not.
inline BenchReport bench_pipeline(const ScheduleConfig& cfg, Denoiser& denoiser, Eigen::Index d, std::uint64_t L,
                                  std::uint64_t seed, Sampler sampler = Sampler::consistency) {
  BenchReport r;
  bool first = true;
  const StreamResult res = run_stream(cfg, denoiser, d, no_cond(), L, seed, {.sampler = sampler},
                                      [&](const FrameEvent& e) {
                                        if (first) r.first_frame_latency_wall = e.wall_time;
                                        first = false;
                                      });
  r.series = res.records;
  for (const StepRecord& rec : r.series) {
    r.first_frame_latency_iters += cfg.N;
    if (rec.popped > 0) break;
  }
  std::int64_t popped = 0, calls = 0, overhead = 0, inner = 0, steps = 0;
  for (const StepRecord& rec : r.series) {
    if (rec.iteration < cfg.G - 1 || rec.pile_len < cfg.K) continue;  // warmup and drain
    popped += rec.popped;
    calls += cfg.N;
    overhead += rec.step_wall_nanos - rec.denoiser_nanos;
    inner += rec.denoiser_nanos;
    ++steps;
  }
  if (steps > 0) {
    r.throughput_frames_per_iter = static_cast<double>(popped) / static_cast<double>(calls);
    r.engine_overhead_per_iter = std::chrono::nanoseconds(overhead / steps);
    r.denoiser_time_per_iter = std::chrono::nanoseconds(inner / steps);
  }
  return r;
}

/// Jointly denoises all L frames at uniform timesteps, descending through
/// the same G*N levels a streamed frame visits and drawing the same
/// per-frame noise the engine draws.
inline std::vector<Frame> offline_sample(const ScheduleConfig& cfg, Denoiser& denoiser, Eigen::Index d,
                                         std::uint64_t L, std::uint64_t seed, Sampler sampler = Sampler::consistency) {
  cfg.validate();
  const NoiseSchedule& sched = denoiser.schedule();
  const std::uint64_t noise_seed = derive_seed(seed, "engine");
  const auto n = static_cast<Eigen::Index>(L);
  Window x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = frame_noise(noise_seed, static_cast<std::uint64_t>(i), 0, d).transpose();
  const Window cond(n, 0);
  int stage = 0;
  for (Timestep t = cfg.T; t > 0; t -= cfg.step_size()) {
    const Timesteps tv(static_cast<std::size_t>(n), t);
    const Timestep next = std::max(0, t - cfg.step_size());
    ++stage;
    const Window x0 = sampler == Sampler::consistency ? denoiser.consistency(x, tv, cond, nullptr)
                                                      : denoiser.predict_x0(x, tv, cond, nullptr);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (sampler == Sampler::consistency) {
        Rng rng(derive_seed(noise_seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(stage)));
        x.row(i) = cm_renoise_step(x0.row(i).transpose(), next, rng, sched).transpose();
      } else {
        x.row(i) = ddim_step(x.row(i).transpose(), x0.row(i).transpose(), t, next, sched).transpose();
      }
    }
  }
  std::vector<Frame> out(L);
  for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = x.row(i).transpose();
  return out;
}

/// Per-frame mean squared difference between the streamed and the offline
/// oracle outputs on shared noise.
inline std::vector<double> compare_streaming_offline(const ScheduleConfig& cfg, const GaussianPrior& prior,
                                                     const NoiseSchedule& sched, std::uint64_t seed, std::uint64_t L,
                                                     Sampler sampler = Sampler::consistency) {
  if (static_cast<std::uint64_t>(prior.frames()) < L) throw ConfigError("compare: prior must cover all L frames");
  GaussianOracle oracle(prior, sched);
  const std::vector<Frame> streamed =
      run_stream(cfg, oracle, prior.d(), no_cond(), L, seed, {.sampler = sampler, .keep_records = false}).frames;
  const std::vector<Frame> offline = offline_sample(cfg, oracle, prior.d(), L, seed, sampler);
  std::vector<double> mse(L);
  for (std::size_t i = 0; i < L; ++i)
    mse[i] = (streamed[i] - offline[i]).squaredNorm() / static_cast<double>(prior.d());
  return mse;
}

}  // namespace rain
