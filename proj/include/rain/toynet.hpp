#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "rain/core.hpp"
#include "rain/denoiser.hpp"
#include "rain/diffusion.hpp"

namespace rain {

enum class AttentionMaskMode { full, causal };

inline std::string_view to_string(AttentionMaskMode m) { return m == AttentionMaskMode::full ? "full" : "causal"; }

inline AttentionMaskMode parse_mask_mode(std::string_view s) {
  if (s == "full") return AttentionMaskMode::full;
  if (s == "causal") return AttentionMaskMode::causal;
  throw ConfigError("mask must be 'full' or 'causal', got '" + std::string(s) + "'");
}

/// Parameter blocks, in storage order. Matrices are (out x in).
enum class Block : int {
  W_in, b_in, W_cond, W_t, b_t, W_Q, W_K, W_V, W_O, b_O, W_f1, b_f1, W_f2, b_f2, W_out, b_out, count
};

inline constexpr std::array<std::string_view, static_cast<int>(Block::count)> kBlockNames{
    "W_in", "b_in", "W_cond", "W_t", "b_t", "W_Q", "W_K", "W_V",
    "W_O",  "b_O",  "W_f1",   "b_f1", "W_f2", "b_f2", "W_out", "b_out"};

/// Weights of the toy temporal-attention denoiser, stored as one flat vector
/// so optimizers, EMA and checkpoints treat them uniformly.
class ToyNetParams {
 public:
  struct Shape {
    Eigen::Index rows, cols;
  };

  ToyNetParams() = default;
  ToyNetParams(Eigen::Index d, Eigen::Index c, Eigen::Index h) : d_(d), c_(c), h_(h) {
    if (d < 1 || c < 0 || h < 2 || h % 2 != 0) throw ConfigError("toynet: need d >= 1, c >= 0, even h >= 2");
    const Shape shapes[] = {{h, d}, {h, 1}, {h, c},     {h, h}, {h, 1}, {h, h}, {h, h}, {h, h},
                            {h, h}, {h, 1}, {2 * h, h}, {2 * h, 1}, {h, 2 * h}, {h, 1}, {d, h}, {d, 1}};
    Eigen::Index off = 0;
    for (int b = 0; b < static_cast<int>(Block::count); ++b) {
      shapes_[b] = shapes[b];
      offsets_[b] = off;
      off += shapes[b].rows * shapes[b].cols;
    }
    flat_ = Eigen::VectorXd::Zero(off);
  }

  Eigen::Index d() const { return d_; }
  Eigen::Index c() const { return c_; }
  Eigen::Index h() const { return h_; }
  Eigen::Index size() const { return flat_.size(); }

  Eigen::VectorXd& flat() { return flat_; }
  const Eigen::VectorXd& flat() const { return flat_; }

  Shape shape(Block b) const { return shapes_[static_cast<int>(b)]; }
  Eigen::Index offset(Block b) const { return offsets_[static_cast<int>(b)]; }

  Eigen::Map<Eigen::MatrixXd> operator[](Block b) {
    const auto s = shape(b);
    return {flat_.data() + offset(b), s.rows, s.cols};
  }
  Eigen::Map<const Eigen::MatrixXd> operator[](Block b) const {
    const auto s = shape(b);
    return {flat_.data() + offset(b), s.rows, s.cols};
  }

  /// Same layout, all zeros (gradient buffers).
  ToyNetParams zeros_like() const {
    ToyNetParams z = *this;
    z.flat_.setZero();
    return z;
  }

  bool same_layout(const ToyNetParams& o) const { return d_ == o.d_ && c_ == o.c_ && h_ == o.h_; }

  friend bool operator==(const ToyNetParams& a, const ToyNetParams& b) {
    return a.same_layout(b) && a.flat_ == b.flat_;
  }

 private:
  Eigen::Index d_ = 0, c_ = 0, h_ = 0;
  std::array<Shape, static_cast<int>(Block::count)> shapes_{};
  std::array<Eigen::Index, static_cast<int>(Block::count)> offsets_{};
  Eigen::VectorXd flat_;
};

/// Uniform fan-in initialization (as in common Linear layers); biases start
/// at zero.
inline ToyNetParams init_params(Eigen::Index d, Eigen::Index c, Eigen::Index h, std::uint64_t seed) {
  ToyNetParams p(d, c, h);
  Rng rng(derive_seed(seed, "init"));
  for (int b = 0; b < static_cast<int>(Block::count); ++b) {
    const Block blk = static_cast<Block>(b);
    if (kBlockNames[b][0] == 'b') continue;
    auto m = p[blk];
    if (m.size() == 0) continue;
    const double bound = 1.0 / std::sqrt(static_cast<double>(m.cols()));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = u(rng);
  }
  return p;
}

/// Sinusoidal features of one scalar: [sin(v w_k), cos(v w_k)], w_k = 10000^(-k/half).
inline Eigen::RowVectorXd sinusoidal(double v, Eigen::Index dim) {
  const Eigen::Index half = dim / 2;
  Eigen::RowVectorXd out(dim);
  for (Eigen::Index k = 0; k < half; ++k) {
    const double w = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    out[k] = std::sin(v * w);
    out[half + k] = std::cos(v * w);
  }
  return out;
}

inline double silu(double u) { return u / (1.0 + std::exp(-u)); }
inline double silu_grad(double u) {
  const double s = 1.0 / (1.0 + std::exp(-u));
  return s * (1.0 + u * (1.0 - s));
}

/// Intermediate values kept for the backward pass.
struct ToyNetCache {
  Window x, cond, temb, h0, mem, q, k, v, attn, o, h1, u, f, h2;
  Frame reference;
  bool has_reference = false;
};

namespace detail {

inline void check_inputs(const ToyNetParams& p, const Window& x, std::span<const Timestep> t, const Window& cond,
                         const Frame* reference) {
  if (x.cols() != p.d()) throw ShapeError("toynet: latent dimension " + std::to_string(x.cols()) + " != d");
  if (static_cast<Eigen::Index>(t.size()) != x.rows()) throw ShapeError("toynet: one timestep per frame");
  if (cond.rows() != x.rows() || cond.cols() != p.c())
    throw ShapeError("toynet: conditioning must be frames x " + std::to_string(p.c()));
  if (reference && reference->size() != p.d()) throw ShapeError("toynet: reference dimension != d");
}

}  // namespace detail

/// Reference features: the encoder applied to the reference latent (1 x h).
inline Eigen::RowVectorXd reference_features(const ToyNetParams& p, const Frame& reference) {
  return (p[Block::W_in] * reference + p[Block::b_in]).transpose();
}

/// Single-head attention with keys/values over [X; Z] and the causal mask
/// applied to frame-to-frame logits only. Returns X + attn(X) W_O^T + b_O.
inline Window temporal_attention(const Window& X, const Eigen::RowVectorXd* Z, AttentionMaskMode mask,
                                 const ToyNetParams& p, ToyNetCache* cache = nullptr) {
  const Eigen::Index n = X.rows(), h = p.h();
  if (X.cols() != h) throw ShapeError("temporal_attention: hidden width mismatch");
  Window mem(n + (Z ? 1 : 0), h);
  mem.topRows(n) = X;
  if (Z) mem.row(n) = *Z;
  const Window q = X * p[Block::W_Q].transpose();
  const Window k = mem * p[Block::W_K].transpose();
  const Window v = mem * p[Block::W_V].transpose();
  Window a = q * k.transpose() / std::sqrt(static_cast<double>(h));
  for (Eigen::Index i = 0; i < n; ++i) {
    double mx = -INFINITY;
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      if (!(mask == AttentionMaskMode::causal && j < n && j > i)) mx = std::max(mx, a(i, j));
    double sum = 0;
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const bool masked = mask == AttentionMaskMode::causal && j < n && j > i;
      a(i, j) = masked ? 0.0 : std::exp(a(i, j) - mx);
      sum += a(i, j);
    }
    a.row(i) /= sum;
  }
  const Window o = a * v;
  Window out = X + o * p[Block::W_O].transpose();
  out.rowwise() += p[Block::b_O].col(0).transpose();
  if (cache) {
    cache->mem = mem;
    cache->q = q;
    cache->k = k;
    cache->v = v;
    cache->attn = a;
    cache->o = o;
  }
  return out;
}

/// Encoder -> conditioning add -> timestep embedding -> temporal attention
/// -> feed-forward -> decoder. Output is a v-prediction.
inline Window toynet_forward(const ToyNetParams& p, const Window& x, std::span<const Timestep> t, const Window& cond,
                             const Frame* reference, AttentionMaskMode mask, ToyNetCache* cache = nullptr,
                             const Eigen::RowVectorXd* cached_z = nullptr) {
  detail::check_inputs(p, x, t, cond, reference);
  const Eigen::Index n = x.rows(), h = p.h();
  Window temb(n, h);
  for (Eigen::Index i = 0; i < n; ++i) temb.row(i) = sinusoidal(static_cast<double>(t[i]), h);
  Window h0 = x * p[Block::W_in].transpose() + temb * p[Block::W_t].transpose();
  if (p.c() > 0) h0 += cond * p[Block::W_cond].transpose();
  const Eigen::RowVectorXd bias = (p[Block::b_in] + p[Block::b_t]).transpose();
  for (Eigen::Index i = 0; i < n; ++i) h0.row(i) += bias + sinusoidal(static_cast<double>(i), h);

  std::optional<Eigen::RowVectorXd> z;
  if (reference) z = cached_z ? *cached_z : reference_features(p, *reference);
  const Window h1 = temporal_attention(h0, z ? &*z : nullptr, mask, p, cache);

  Window u = h1 * p[Block::W_f1].transpose();
  u.rowwise() += p[Block::b_f1].col(0).transpose();
  const Window f = u.unaryExpr([](double v) { return silu(v); });
  Window h2 = h1 + f * p[Block::W_f2].transpose();
  h2.rowwise() += p[Block::b_f2].col(0).transpose();
  Window y = h2 * p[Block::W_out].transpose();
  y.rowwise() += p[Block::b_out].col(0).transpose();
  if (cache) {
    cache->x = x;
    cache->cond = cond;
    cache->temb = temb;
    cache->h0 = h0;
    cache->h1 = h1;
    cache->u = u;
    cache->f = f;
    cache->h2 = h2;
    cache->has_reference = reference != nullptr;
    if (reference) cache->reference = *reference;
  }
  return y;
}

/// Reverse pass: accumulates dLoss/dParams into `grad` given dLoss/dY.
inline void toynet_backward(const ToyNetParams& p, const ToyNetCache& c, const Window& dy, ToyNetParams& grad) {
  const Eigen::Index n = c.x.rows(), h = p.h();
  auto colsum = [](const Window& m) { return Eigen::VectorXd(m.colwise().sum().transpose()); };

  grad[Block::W_out] += dy.transpose() * c.h2;
  grad[Block::b_out] += colsum(dy);
  const Window dh2 = dy * p[Block::W_out];

  grad[Block::W_f2] += dh2.transpose() * c.f;
  grad[Block::b_f2] += colsum(dh2);
  const Window df = dh2 * p[Block::W_f2];
  const Window du = df.cwiseProduct(c.u.unaryExpr([](double v) { return silu_grad(v); }));
  grad[Block::W_f1] += du.transpose() * c.h1;
  grad[Block::b_f1] += colsum(du);
  const Window dh1 = dh2 + du * p[Block::W_f1];

  grad[Block::W_O] += dh1.transpose() * c.o;
  grad[Block::b_O] += colsum(dh1);
  const Window dout = dh1 * p[Block::W_O];
  const Window da = dout * c.v.transpose();
  const Window dv = c.attn.transpose() * dout;
  Window ds = c.attn.cwiseProduct(da);
  const Eigen::VectorXd rs = ds.rowwise().sum();
  ds -= c.attn.cwiseProduct(rs.replicate(1, ds.cols()));
  const double scale = 1.0 / std::sqrt(static_cast<double>(h));
  const Window dq = ds * c.k * scale;
  const Window dk = ds.transpose() * c.q * scale;
  grad[Block::W_Q] += dq.transpose() * c.h0;
  grad[Block::W_K] += dk.transpose() * c.mem;
  grad[Block::W_V] += dv.transpose() * c.mem;
  const Window dmem = dk * p[Block::W_K] + dv * p[Block::W_V];

  const Window dh0 = dh1 + dq * p[Block::W_Q] + dmem.topRows(n);
  if (c.has_reference) {
    const Eigen::RowVectorXd dz = dmem.row(n);
    grad[Block::W_in] += dz.transpose() * c.reference.transpose();
    grad[Block::b_in] += dz.transpose();
  }
  grad[Block::W_in] += dh0.transpose() * c.x;
  grad[Block::b_in] += colsum(dh0);
  if (p.c() > 0) grad[Block::W_cond] += dh0.transpose() * c.cond;
  grad[Block::W_t] += dh0.transpose() * c.temb;
  grad[Block::b_t] += colsum(dh0);
}

/// One training example: a noised window and its v target.
struct TrainExample {
  Window x;
  Timesteps t;
  Window cond;
  std::optional<Frame> reference;
  Window target;
};

/// Mean squared v-prediction error over all entries of the batch.
inline double toynet_loss(const ToyNetParams& p, const std::vector<TrainExample>& batch, AttentionMaskMode mask) {
  double total = 0;
  Eigen::Index count = 0;
  for (const auto& ex : batch) {
    const Window y = toynet_forward(p, ex.x, ex.t, ex.cond, ex.reference ? &*ex.reference : nullptr, mask);
    total += (y - ex.target).squaredNorm();
    count += y.size();
  }
  return total / static_cast<double>(count);
}

/// Exact gradient of toynet_loss; returns the loss.
inline double toynet_grad(const ToyNetParams& p, const std::vector<TrainExample>& batch, AttentionMaskMode mask,
                          ToyNetParams& grad) {
  grad = p.zeros_like();
  Eigen::Index count = 0;
  for (const auto& ex : batch) count += ex.x.size();
  double total = 0;
  ToyNetCache cache;
  for (const auto& ex : batch) {
    const Window y = toynet_forward(p, ex.x, ex.t, ex.cond, ex.reference ? &*ex.reference : nullptr, mask, &cache);
    const Window r = y - ex.target;
    total += r.squaredNorm();
    toynet_backward(p, cache, 2.0 * r / static_cast<double>(count), grad);
  }
  return total / static_cast<double>(count);
}

/// Denoiser adapter. Reference features are cached and recomputed only when
/// the reference latent or the weights change, unless recompute is set.
class ToyNetDenoiser final : public Denoiser {
 public:
  ToyNetDenoiser(ToyNetParams params, NoiseSchedule schedule, AttentionMaskMode mask = AttentionMaskMode::full)
      : params_(std::move(params)), schedule_(std::move(schedule)), mask_(mask) {}

  const NoiseSchedule& schedule() const override { return schedule_; }
  const ToyNetParams& params() const { return params_; }
  void set_params(ToyNetParams p) {
    params_ = std::move(p);
    cached_ref_.reset();
  }
  AttentionMaskMode mask() const { return mask_; }
  void set_recompute_reference(bool on) { recompute_ = on; }
  std::size_t reference_computations() const { return reference_computations_; }

  Prediction predict(const Window& x, std::span<const Timestep> t, const Window& cond,
                     const Frame* reference) override {
    for (Timestep v : t) schedule_.check(v);
    const Eigen::RowVectorXd* z = reference ? &features(*reference) : nullptr;
    return {PredictionKind::v, toynet_forward(params_, x, t, cond_or_zero(cond, x.rows()), reference, mask_, nullptr, z)};
  }

 private:
  Window cond_or_zero(const Window& cond, Eigen::Index n) const {
    if (cond.cols() == 0 && params_.c() > 0) return Window::Zero(n, params_.c());
    return cond;
  }

  const Eigen::RowVectorXd& features(const Frame& reference) {
    if (recompute_ || !cached_ref_ || cached_ref_->size() != reference.size() || *cached_ref_ != reference) {
      cached_ref_ = reference;
      cached_z_ = reference_features(params_, reference);
      ++reference_computations_;
    }
    return cached_z_;
  }

  ToyNetParams params_;
  NoiseSchedule schedule_;
  AttentionMaskMode mask_;
  bool recompute_ = false;
  std::optional<Frame> cached_ref_;
  Eigen::RowVectorXd cached_z_;
  std::size_t reference_computations_ = 0;
};

}  // namespace rain
