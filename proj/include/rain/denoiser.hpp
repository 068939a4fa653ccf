#pragma once

#include "rain/core.hpp"
#include "rain/diffusion.hpp"

namespace rain {

/// Any map (latents, per-frame timesteps, conditioning, reference) ->
/// prediction. Implemented by the Gaussian oracle and the toy network.
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  virtual const NoiseSchedule& schedule() const = 0;

  /// Native prediction for the window (any kind).
  virtual Prediction predict(const Window& x, std::span<const Timestep> t, const Window& cond,
                             const Frame* reference) = 0;

  /// Clean estimate of the window as produced by the consistency function.
  /// Models without a dedicated consistency map fall back to their x0
  /// prediction.
  virtual Window consistency(const Window& x, std::span<const Timestep> t, const Window& cond,
                             const Frame* reference) {
    return convert_prediction(predict(x, t, cond, reference), x, t, schedule(), PredictionKind::x0).values;
  }

  /// x0 estimate used by the DDIM sampler.
  Window predict_x0(const Window& x, std::span<const Timestep> t, const Window& cond, const Frame* reference) {
    return convert_prediction(predict(x, t, cond, reference), x, t, schedule(), PredictionKind::x0).values;
  }
};

}  // namespace rain
