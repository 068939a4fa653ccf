#pragma once

#include <cmath>
#include <concepts>
#include <iomanip>
#include <limits>
#include <memory>
#include <ostream>

#include "rain/denoiser.hpp"
#include "rain/optim.hpp"
#include "rain/schedule.hpp"
#include "rain/toynet.hpp"
#include "rain/train.hpp"

namespace rain {

/// Boundary coefficients with s = 1: c_skip(0) = 1 and c_out(0) = 0 exactly.
inline double c_skip(Timestep t, int T, double sigma_data = 1.0) {
  const double r = static_cast<double>(t) / T;
  return sigma_data * sigma_data / (r * r + sigma_data * sigma_data);
}

inline double c_out(Timestep t, int T, double sigma_data = 1.0) {
  const double r = static_cast<double>(t) / T;
  return r * sigma_data / std::sqrt(sigma_data * sigma_data + r * r);
}

/// Row-wise c_skip * x + c_out * x0_hat; rows at t = 0 are copied from x.
inline Window consistency_combine(const Window& x, const Window& x0_hat, std::span<const Timestep> t, int T,
                                  double sigma_data) {
  Window f(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Timestep ti = t[static_cast<std::size_t>(i)];
    if (ti == 0)
      f.row(i) = x.row(i);
    else
      f.row(i) = c_skip(ti, T, sigma_data) * x.row(i) + c_out(ti, T, sigma_data) * x0_hat.row(i);
  }
  return f;
}

/// Consistency function built on any denoiser's x0 estimate.
inline Window consistency_fn(Denoiser& inner, const Window& x, std::span<const Timestep> t, const Window& cond,
                             const Frame* reference, double sigma_data = 1.0) {
  if (static_cast<Eigen::Index>(t.size()) != x.rows()) throw ShapeError("consistency_fn: one timestep per frame");
  if (std::all_of(t.begin(), t.end(), [](Timestep v) { return v == 0; })) return x;
  return consistency_combine(x, inner.predict_x0(x, t, cond, reference), t, inner.schedule().T(), sigma_data);
}

/// Wraps a denoiser so that its consistency() is the parameterized
/// consistency function; predict() passes through.
class ConsistencyModel final : public Denoiser {
 public:
  explicit ConsistencyModel(std::shared_ptr<Denoiser> inner, double sigma_data = 1.0)
      : inner_(std::move(inner)), sigma_data_(sigma_data) {
    if (!inner_) throw ConfigError("ConsistencyModel: null inner denoiser");
    if (!(sigma_data_ > 0)) throw ConfigError("ConsistencyModel: sigma_data must be positive");
  }

  const NoiseSchedule& schedule() const override { return inner_->schedule(); }
  Denoiser& inner() { return *inner_; }
  double sigma_data() const { return sigma_data_; }

  Prediction predict(const Window& x, std::span<const Timestep> t, const Window& cond,
                     const Frame* reference) override {
    return inner_->predict(x, t, cond, reference);
  }

  Window consistency(const Window& x, std::span<const Timestep> t, const Window& cond,
                     const Frame* reference) override {
    return consistency_fn(*inner_, x, t, cond, reference, sigma_data_);
  }

 private:
  std::shared_ptr<Denoiser> inner_;
  double sigma_data_;
};

/// Pseudo-Huber distance sqrt(|a-b|^2 + c^2) - c over all entries.
template <class A, class B>
double huber(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b, double c) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("huber: shape mismatch");
  if (!(c > 0)) throw ConfigError("huber: c must be positive");
  return std::sqrt((a - b).squaredNorm() + c * c) - c;
}

/// Guided combination uncond + omega * (cond - uncond). The combination is
/// affine with weights summing to one, so it commutes with the conversions
/// between parameterizations; callers pass epsilon predictions.
inline Prediction cfg_teacher(const Prediction& cond, const Prediction& uncond, double omega) {
  if (cond.kind != uncond.kind)
    throw ConfigError(std::string("cfg_teacher: kind mismatch (") + std::string(to_string(cond.kind)) + " vs " +
                      std::string(to_string(uncond.kind)) + ")");
  if (cond.values.rows() != uncond.values.rows() || cond.values.cols() != uncond.values.cols())
    throw ShapeError("cfg_teacher: shape mismatch");
  return {cond.kind, uncond.values + omega * (cond.values - uncond.values)};
}

/// A trainable consistency function with explicit parameters. The tape
/// carries what the pullback needs from the forward pass.
template <class S>
concept DistillStudent = requires(const S s, const typename S::Params& p, typename S::Params& g, const Window& x,
                                  std::span<const Timestep> t, const Frame* ref, typename S::Tape* tape) {
  { s.consistency(p, x, t, x, ref, tape) } -> std::same_as<Window>;
  s.pullback(p, *tape, x, g);
  { p.flat() } -> std::convertible_to<const Eigen::VectorXd&>;
  { p.zeros_like() } -> std::same_as<typename S::Params>;
};

/// ToyNet as a consistency student: f = c_skip x + c_out (a x - s v).
struct ToyStudent {
  using Params = ToyNetParams;
  struct Tape {
    ToyNetCache net;
    Eigen::VectorXd dv_scale;  // d f / d v per row
  };

  NoiseSchedule schedule;
  AttentionMaskMode mask = AttentionMaskMode::full;
  double sigma_data = 1.0;

  Window consistency(const Params& p, const Window& x, std::span<const Timestep> t, const Window& cond,
                     const Frame* ref, Tape* tape = nullptr) const {
    const int T = schedule.T();
    const Window c = cond.cols() == 0 && p.c() > 0 ? Window::Zero(x.rows(), p.c()) : cond;
    const Window v = toynet_forward(p, x, t, c, ref, mask, tape ? &tape->net : nullptr);
    Window x0(x.rows(), x.cols());
    if (tape) tape->dv_scale.resize(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const Timestep ti = t[static_cast<std::size_t>(i)];
      x0.row(i) = schedule.signal(ti) * x.row(i) - schedule.noise(ti) * v.row(i);
      if (tape) tape->dv_scale[i] = ti == 0 ? 0.0 : -c_out(ti, T, sigma_data) * schedule.noise(ti);
    }
    return consistency_combine(x, x0, t, T, sigma_data);
  }

  void pullback(const Params& p, const Tape& tape, const Window& df, Params& grad) const {
    toynet_backward(p, tape.net, tape.dv_scale.asDiagonal() * df, grad);
  }
};

static_assert(DistillStudent<ToyStudent>);

/// Adjacent solver timesteps. Uniform pairs share one grid level across the
/// window; staggered pairs follow the pile layout offset by a grid level.
struct TimestepPair {
  Timesteps tn, tn1;
};

struct DistillConfig {
  int solver_steps = 100;
  double ema_rate = 0.95;
  double omega = 2.0;
  double huber_c = 0.001;
  double staggered_fraction = 0.5;
  int batch = 32;
  AdamWConfig opt{.lr = 3e-4};
  std::uint64_t seed = 0;
  long log_every = 1;

  void validate(const ScheduleConfig& cfg) const {
    cfg.validate();
    if (solver_steps < 1 || cfg.T % solver_steps != 0)
      throw ConfigError("distill: solver_steps must divide T=" + std::to_string(cfg.T));
    if (staggered_fraction > 0 && cfg.level_spacing() % (cfg.T / solver_steps) != 0)
      throw ConfigError("distill: staggered pairs need T/G divisible by the solver grid step");
    if (!(ema_rate >= 0 && ema_rate <= 1)) throw ConfigError("distill: ema_rate must lie in [0, 1]");
    if (!(huber_c > 0)) throw ConfigError("distill: huber_c must be positive");
    if (!(staggered_fraction >= 0 && staggered_fraction <= 1))
      throw ConfigError("distill: staggered_fraction must lie in [0, 1]");
    if (batch < 1) throw ConfigError("distill: batch must be >= 1");
  }
};

inline TimestepPair sample_pair(const ScheduleConfig& cfg, const DistillConfig& dc, Rng& rng) {
  const int step = cfg.T / dc.solver_steps;
  const auto K = static_cast<std::size_t>(cfg.K);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  TimestepPair p{Timesteps(K), Timesteps(K)};
  if (coin(rng) < dc.staggered_fraction) {
    std::uniform_int_distribution<int> n(0, cfg.level_spacing() / step - 1);
    const int base = n(rng) * step;
    for (std::size_t i = 0; i < K; ++i) p.tn[i] = base + static_cast<int>(i) / cfg.g() * cfg.level_spacing();
  } else {
    std::uniform_int_distribution<int> n(0, dc.solver_steps - 1);
    std::fill(p.tn.begin(), p.tn.end(), n(rng) * step);
  }
  for (std::size_t i = 0; i < K; ++i) p.tn1[i] = p.tn[i] + step;
  return p;
}

/// One teacher solver step tn1 -> tn with guidance applied in epsilon space.
inline Window teacher_step(Denoiser& teacher, const Window& x, const TimestepPair& pair, const Window& cond,
                           const Frame* reference, double omega) {
  const NoiseSchedule& s = teacher.schedule();
  const Window uncond = Window::Zero(cond.rows(), cond.cols());
  auto eps = [&](const Window& c) {
    return convert_prediction(teacher.predict(x, pair.tn1, c, reference), x, pair.tn1, s, PredictionKind::epsilon);
  };
  const Prediction e = omega == 1.0 ? eps(cond) : cfg_teacher(eps(cond), eps(uncond), omega);
  const Window x0 = convert_prediction(e, x, pair.tn1, s, PredictionKind::x0).values;
  Window out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto k = static_cast<std::size_t>(i);
    out.row(i) = ddim_step(x.row(i).transpose(), x0.row(i).transpose(), pair.tn1[k], pair.tn[k], s).transpose();
  }
  return out;
}

template <DistillStudent S>
struct DistillState {
  S student;
  typename S::Params theta;
  typename S::Params theta_ema;
  AdamW opt;
  DistillConfig cfg;
  long steps = 0;

  DistillState(S s, typename S::Params init, DistillConfig c)
      : student(std::move(s)), theta(init), theta_ema(std::move(init)), opt(theta.flat().size(), c.opt), cfg(c) {}
};

/// Mean distance over the batch between the online output at tn1 and the
/// EMA output at the teacher's estimate for tn, plus its gradient in theta.
/// The EMA parameters are read only.
template <DistillStudent S>
double cd_loss_grad(const DistillState<S>& st, const std::vector<Window>& x_tn1, const std::vector<Window>& conds,
                    const std::vector<const Frame*>& refs, const TimestepPair& pair, Denoiser& teacher,
                    typename S::Params& grad) {
  if (x_tn1.empty() || conds.size() != x_tn1.size() || refs.size() != x_tn1.size())
    throw ShapeError("cd_loss_grad: batch vectors must have equal nonzero length");
  grad = st.theta.zeros_like();
  const double scale = 1.0 / static_cast<double>(x_tn1.size());
  const double c = st.cfg.huber_c;
  double loss = 0;
  typename S::Tape tape;
  for (std::size_t b = 0; b < x_tn1.size(); ++b) {
    const Window xhat = teacher_step(teacher, x_tn1[b], pair, conds[b], refs[b], st.cfg.omega);
    const Window target = st.student.consistency(st.theta_ema, xhat, pair.tn, conds[b], refs[b], nullptr);
    const Window f = st.student.consistency(st.theta, x_tn1[b], pair.tn1, conds[b], refs[b], &tape);
    const double root = std::sqrt((f - target).squaredNorm() + c * c);
    loss += scale * (root - c);
    st.student.pullback(st.theta, tape, (scale / root) * (f - target), grad);
  }
  return loss;
}

/// theta_ema <- r * theta_ema + (1 - r) * theta.
template <class P>
void ema_update(P& ema, const P& theta, double rate) {
  ema.flat() = rate * ema.flat() + (1.0 - rate) * theta.flat();
}

/// One distillation step on a batch of clean windows.
template <DistillStudent S>
double cd_step(DistillState<S>& st, const std::vector<SequenceSample>& batch, Denoiser& teacher,
               const ScheduleConfig& cfg, Rng& rng) {
  const TimestepPair pair = sample_pair(cfg, st.cfg, rng);
  std::vector<Window> xs, conds;
  std::vector<const Frame*> refs;
  for (const SequenceSample& s : batch) {
    if (s.x0.rows() != cfg.K) throw ShapeError("cd_step: window length differs from K");
    xs.push_back(add_noise(s.x0, standard_normal(rng, s.x0.rows(), s.x0.cols()), pair.tn1, teacher.schedule()));
    conds.push_back(s.cond);
    refs.push_back(s.reference ? &*s.reference : nullptr);
  }
  typename S::Params grad = st.theta.zeros_like();
  const double loss = cd_loss_grad(st, xs, conds, refs, pair, teacher, grad);
  if (!std::isfinite(loss) || !grad.flat().allFinite())
    throw NumericError("distill: diverged at step " + std::to_string(st.steps) + " (loss " + std::to_string(loss) +
                       ")");
  st.opt.step(st.theta.flat(), grad.flat());
  ema_update(st.theta_ema, st.theta, st.cfg.ema_rate);
  ++st.steps;
  return loss;
}

/// Runs cd_step `steps` times and returns the online parameters.
template <DistillStudent S>
typename S::Params distill(Denoiser& teacher, S student, typename S::Params init, const SequenceSampler& data,
                           const ScheduleConfig& cfg, const DistillConfig& dc, long steps, std::ostream* log = nullptr) {
  dc.validate(cfg);
  if (steps < 0) throw ConfigError("distill: steps must be >= 0");
  if (teacher.schedule().T() != cfg.T) throw ConfigError("distill: teacher schedule T differs from config T");
  DistillState<S> st(std::move(student), std::move(init), dc);
  Rng rng(derive_seed(dc.seed, "distill"));
  std::vector<SequenceSample> batch(static_cast<std::size_t>(dc.batch));
  for (long k = 0; k < steps; ++k) {
    for (auto& s : batch) s = data(rng);
    const double loss = cd_step(st, batch, teacher, cfg, rng);
    if (log && dc.log_every > 0 && (k % dc.log_every == 0 || k + 1 == steps)) write_loss_ndjson(*log, k, loss, "cd");
  }
  return st.theta;
}

}  // namespace rain
