#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "rain/core.hpp"

namespace rain {

/// Discrete variance-preserving schedule. Timestep 0 is the clean state
/// (alpha_bar(0) == 1); timesteps 1..T carry noise.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  NoiseSchedule(std::vector<double> beta) : beta_(std::move(beta)) {
    if (beta_.size() < 2) throw ConfigError("noise schedule needs at least 2 timesteps");
    alpha_bar_.resize(beta_.size() + 1);
    alpha_bar_[0] = 1.0;
    for (std::size_t i = 0; i < beta_.size(); ++i) {
      if (!(beta_[i] > 0.0 && beta_[i] < 1.0))
        throw ConfigError("beta(" + std::to_string(i + 1) + ") outside (0, 1)");
      alpha_bar_[i + 1] = alpha_bar_[i] * (1.0 - beta_[i]);
    }
  }

  int T() const { return static_cast<int>(beta_.size()); }

  double beta(Timestep t) const {
    if (t < 1 || t > T()) throw RangeError("beta: timestep " + std::to_string(t) + " outside [1, T]");
    return beta_[t - 1];
  }

  double alpha_bar(Timestep t) const {
    check(t);
    return alpha_bar_[t];
  }

  double signal(Timestep t) const { return std::sqrt(alpha_bar(t)); }
  double noise(Timestep t) const { return std::sqrt(1.0 - alpha_bar(t)); }

  void check(Timestep t) const {
    if (t < 0 || t > T())
      throw RangeError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(T()) + "]");
  }

  const std::vector<double>& betas() const { return beta_; }

 private:
  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
};

/// Scaled-linear schedule: sqrt(beta) linear between the endpoints.
inline NoiseSchedule build_schedule(int T, double beta_start, double beta_end) {
  if (T < 2) throw ConfigError("schedule T must be >= 2");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw ConfigError("schedule requires 0 < beta_start <= beta_end < 1");
  std::vector<double> beta(static_cast<std::size_t>(T));
  const double lo = std::sqrt(beta_start), hi = std::sqrt(beta_end);
  for (int i = 0; i < T; ++i) {
    const double r = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(T - 1);
    beta[static_cast<std::size_t>(i)] = r * r;
  }
  return NoiseSchedule(std::move(beta));
}

inline NoiseSchedule default_schedule() { return build_schedule(1000, 0.00085, 0.012); }

template <class Derived>
Frame add_noise(const Eigen::MatrixBase<Derived>& x0, const Frame& eps, Timestep t, const NoiseSchedule& s) {
  if (x0.size() != eps.size()) throw ShapeError("add_noise: x0/eps size mismatch");
  return s.signal(t) * x0 + s.noise(t) * eps;
}

/// Row-wise forward noising with per-frame timesteps.
inline Window add_noise(const Window& x0, const Window& eps, std::span<const Timestep> t, const NoiseSchedule& s) {
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) throw ShapeError("add_noise: x0/eps shape mismatch");
  if (static_cast<Eigen::Index>(t.size()) != x0.rows()) throw ShapeError("add_noise: one timestep per frame");
  Window out(x0.rows(), x0.cols());
  for (Eigen::Index i = 0; i < x0.rows(); ++i)
    out.row(i) = s.signal(t[i]) * x0.row(i) + s.noise(t[i]) * eps.row(i);
  return out;
}

enum class PredictionKind { epsilon, x0, v };

inline std::string_view to_string(PredictionKind k) {
  switch (k) {
    case PredictionKind::epsilon: return "epsilon";
    case PredictionKind::x0: return "x0";
    case PredictionKind::v: return "v";
  }
  return "?";
}

struct Prediction {
  PredictionKind kind = PredictionKind::x0;
  Window values;  // one row per frame
};

namespace detail {

// Row conversion at a single timestep. v = a*eps - s*x0, xt = a*x0 + s*eps.
inline Eigen::RowVectorXd convert_row(PredictionKind from, PredictionKind to, const Eigen::RowVectorXd& p,
                                      const Eigen::RowVectorXd& xt, Timestep t, const NoiseSchedule& s) {
  const double a = s.signal(t), sg = s.noise(t);
  if (from == to) return p;
  Eigen::RowVectorXd x0;
  switch (from) {
    case PredictionKind::x0: x0 = p; break;
    case PredictionKind::v: x0 = a * xt - sg * p; break;
    case PredictionKind::epsilon: x0 = (xt - sg * p) / a; break;
  }
  if (to == PredictionKind::x0) return x0;
  if (from == PredictionKind::v && to == PredictionKind::epsilon) return sg * xt + a * p;
  if (sg == 0.0) throw NumericError("convert_prediction: noise level is zero at t=0; epsilon/v undefined from x0");
  Eigen::RowVectorXd eps = (xt - a * x0) / sg;
  if (to == PredictionKind::epsilon) return eps;
  return a * eps - sg * x0;
}

}  // namespace detail

/// Converts a prediction to another parameterization given the noisy input
/// and per-frame timesteps.
inline Prediction convert_prediction(const Prediction& p, const Window& xt, std::span<const Timestep> t,
                                     const NoiseSchedule& s, PredictionKind target) {
  if (p.values.rows() != xt.rows() || p.values.cols() != xt.cols())
    throw ShapeError("convert_prediction: prediction/xt shape mismatch");
  if (static_cast<Eigen::Index>(t.size()) != xt.rows()) throw ShapeError("convert_prediction: one timestep per frame");
  Prediction out{target, Window(xt.rows(), xt.cols())};
  for (Eigen::Index i = 0; i < xt.rows(); ++i)
    out.values.row(i) = detail::convert_row(p.kind, target, p.values.row(i), xt.row(i), t[i], s);
  return out;
}

inline Frame convert_prediction(PredictionKind from, const Frame& p, const Frame& xt, Timestep t,
                                const NoiseSchedule& s, PredictionKind target) {
  if (p.size() != xt.size()) throw ShapeError("convert_prediction: prediction/xt size mismatch");
  return detail::convert_row(from, target, p.transpose(), xt.transpose(), t, s).transpose();
}

/// Deterministic (eta = 0) DDIM update from t to t_next < t.
template <class A, class B>
Frame ddim_step(const Eigen::MatrixBase<A>& xt, const Eigen::MatrixBase<B>& x0_hat, Timestep t, Timestep t_next,
                const NoiseSchedule& s) {
  s.check(t);
  s.check(t_next);
  if (t_next >= t) throw RangeError("ddim_step: t_next must be < t");
  if (t_next == 0) return x0_hat;
  const Frame eps = (xt - s.signal(t) * x0_hat) / s.noise(t);
  return s.signal(t_next) * x0_hat + s.noise(t_next) * eps;
}

/// Multistep consistency sampling: re-noise a clean estimate to t_next with
/// fresh noise drawn from rng. t_next == 0 returns the estimate unchanged.
template <class A>
Frame cm_renoise_step(const Eigen::MatrixBase<A>& x0_hat, Timestep t_next, Rng& rng, const NoiseSchedule& s) {
  s.check(t_next);
  if (t_next == 0) return x0_hat;
  return add_noise(x0_hat, standard_normal(rng, x0_hat.size()), t_next, s);
}

}  // namespace rain
