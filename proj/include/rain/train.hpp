#pragma once

#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <string>

#include "rain/gaussian.hpp"
#include "rain/optim.hpp"
#include "rain/schedule.hpp"
#include "rain/toynet.hpp"

namespace rain {

/// Clean training window with its conditioning and optional reference.
struct SequenceSample {
  Window x0;
  Window cond;
  std::optional<Frame> reference;
};

using SequenceSampler = std::function<SequenceSample(Rng&)>;

/// Windows drawn from a Gaussian prior. Conditioning is zero (the prior has no
/// observation channel) and no reference is attached.
inline SequenceSampler gaussian_sequences(GaussianPrior prior, Eigen::Index frames, Eigen::Index c = 0) {
  prior.check_frames(frames);
  return [prior = std::move(prior), frames, c](Rng& rng) {
    return SequenceSample{prior.sample(frames, rng), Window::Zero(frames, c), std::nullopt};
  };
}

enum class NoiseMode { uniform, staggered };

inline std::string_view to_string(NoiseMode m) { return m == NoiseMode::uniform ? "uniform" : "staggered"; }

inline NoiseMode parse_noise_mode(std::string_view s) {
  if (s == "uniform") return NoiseMode::uniform;
  if (s == "staggered") return NoiseMode::staggered;
  throw ConfigError("unknown noise mode '" + std::string(s) + "' (expected uniform or staggered)");
}

/// Uniform: one level in [1, T] shared by the window. Staggered: the pile
/// layout for t0 drawn from the integer grid 1..T/G.
inline Timesteps sample_timesteps(const ScheduleConfig& cfg, NoiseMode mode, Rng& rng) {
  if (mode == NoiseMode::uniform) {
    std::uniform_int_distribution<int> u(1, cfg.T);
    return Timesteps(static_cast<std::size_t>(cfg.K), u(rng));
  }
  std::uniform_int_distribution<int> u(1, cfg.level_spacing());
  return group_timesteps(cfg, u(rng)).vec;
}

inline TrainExample make_example(const SequenceSample& s, Timesteps t, const NoiseSchedule& sched, Rng& rng) {
  const Window eps = standard_normal(rng, s.x0.rows(), s.x0.cols());
  Window target(s.x0.rows(), s.x0.cols());
  for (Eigen::Index i = 0; i < s.x0.rows(); ++i) {
    const Timestep ti = t[static_cast<std::size_t>(i)];
    target.row(i) = sched.signal(ti) * eps.row(i) - sched.noise(ti) * s.x0.row(i);
  }
  Window x = add_noise(s.x0, eps, t, sched);
  return {std::move(x), std::move(t), s.cond, s.reference, std::move(target)};
}

struct TrainConfig {
  long steps = 1000;
  int batch = 8;
  AdamWConfig opt{};
  NoiseMode mode = NoiseMode::staggered;
  std::uint64_t seed = 0;
  long log_every = 1;
};

inline void write_loss_ndjson(std::ostream& os, long step, double loss, std::string_view tag) {
  os << "{\"step\":" << step << ",\"loss\":" << std::setprecision(std::numeric_limits<double>::max_digits10) << loss
     << ",\"mode\":\"" << tag << "\"}\n";
}

/// v-prediction training on windows noised with the configured layout.
/// Throws NumericError on a non-finite loss or gradient.
inline ToyNetParams train_temporal_adaptive(ToyNetParams params, const SequenceSampler& data, const ScheduleConfig& cfg,
                                            const NoiseSchedule& sched, AttentionMaskMode mask, const TrainConfig& tc,
                                            std::ostream* log = nullptr) {
  cfg.validate();
  if (sched.T() != cfg.T) throw ConfigError("train: schedule T differs from ScheduleConfig T");
  if (tc.batch < 1) throw ConfigError("train: batch must be >= 1");
  if (tc.steps < 0) throw ConfigError("train: steps must be >= 0");
  Rng rng(derive_seed(derive_seed(tc.seed, "train"), static_cast<std::uint64_t>(tc.mode), 0));
  AdamW opt(params.size(), tc.opt);
  ToyNetParams grad = params.zeros_like();
  std::vector<TrainExample> batch;
  for (long k = 0; k < tc.steps; ++k) {
    batch.clear();
    for (int b = 0; b < tc.batch; ++b) {
      SequenceSample s = data(rng);
      if (s.x0.rows() != cfg.K) throw ShapeError("train: sampler returned a window of the wrong length");
      batch.push_back(make_example(s, sample_timesteps(cfg, tc.mode, rng), sched, rng));
    }
    const double loss = toynet_grad(params, batch, mask, grad);
    if (!std::isfinite(loss) || !grad.flat().allFinite())
      throw NumericError("train: diverged at step " + std::to_string(k) + " (loss " + std::to_string(loss) + ")");
    opt.step(params.flat(), grad.flat());
    if (log && tc.log_every > 0 && (k % tc.log_every == 0 || k + 1 == tc.steps))
      write_loss_ndjson(*log, k, loss, to_string(tc.mode));
  }
  return params;
}

struct ValidationReport {
  double model = 0;   // v-MSE of the network
  double oracle = 0;  // v-MSE of the exact posterior mean (Bayes floor)
};

/// Held-out v-MSE of the network next to the floor set by the exact posterior
/// under the same prior and noise draws.
inline ValidationReport validate_against_oracle(const ToyNetParams& params, AttentionMaskMode mask,
                                                const GaussianPrior& prior, const ScheduleConfig& cfg,
                                                const NoiseSchedule& sched, NoiseMode mode, int windows,
                                                std::uint64_t seed) {
  GaussianPosterior post(prior, sched);
  SequenceSampler data = gaussian_sequences(prior, cfg.K, params.c());
  Rng rng(derive_seed(seed, "validate"));
  ValidationReport r;
  for (int k = 0; k < windows; ++k) {
    const SequenceSample s = data(rng);
    const TrainExample ex = make_example(s, sample_timesteps(cfg, mode, rng), sched, rng);
    const Window v = toynet_forward(params, ex.x, ex.t, ex.cond, nullptr, mask);
    const Prediction x0{PredictionKind::x0, post.posterior_mean(ex.x, ex.t)};
    const Window v_star = convert_prediction(x0, ex.x, ex.t, sched, PredictionKind::v).values;
    r.model += (v - ex.target).squaredNorm() / static_cast<double>(v.size());
    r.oracle += (v_star - ex.target).squaredNorm() / static_cast<double>(v.size());
  }
  r.model /= windows;
  r.oracle /= windows;
  return r;
}

}  // namespace rain
