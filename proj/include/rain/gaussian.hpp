#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <sstream>
#include <utility>

#include "rain/core.hpp"
#include "rain/denoiser.hpp"
#include "rain/diffusion.hpp"

namespace rain {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Frame-major flattening: element (frame i, dim j) -> i*d + j.
inline Eigen::VectorXd flatten(const Window& w) {
  RowMajorMatrix rm = w;
  return Eigen::Map<const Eigen::VectorXd>(rm.data(), rm.size());
}

inline Window unflatten(const Eigen::VectorXd& v, Eigen::Index frames, Eigen::Index d) {
  if (v.size() != frames * d) throw ShapeError("unflatten: size mismatch");
  return Eigen::Map<const RowMajorMatrix>(v.data(), frames, d);
}

/// Stationary Gaussian prior over windows of consecutive frames:
/// cov(frame i dim a, frame j dim b) = kernel[|i-j|] * frame_cov(a, b).
class GaussianPrior {
 public:
  GaussianPrior(Frame frame_mean, Eigen::MatrixXd frame_cov, std::vector<double> kernel)
      : frame_mean_(std::move(frame_mean)), frame_cov_(std::move(frame_cov)), kernel_(std::move(kernel)) {
    if (kernel_.empty()) throw ConfigError("prior kernel must cover at least one frame");
    if (frame_cov_.rows() != frame_mean_.size() || frame_cov_.cols() != frame_mean_.size())
      throw ShapeError("prior: frame covariance must be d x d");
    if (!frame_cov_.isApprox(frame_cov_.transpose(), 1e-12)) throw ConfigError("prior: frame covariance not symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(covariance(frames()));
    if (llt.info() != Eigen::Success) throw ConfigError("prior: covariance is not positive definite");
  }

  Eigen::Index d() const { return frame_mean_.size(); }
  Eigen::Index frames() const { return static_cast<Eigen::Index>(kernel_.size()); }
  const Frame& frame_mean() const { return frame_mean_; }
  const Eigen::MatrixXd& frame_cov() const { return frame_cov_; }
  const std::vector<double>& kernel() const { return kernel_; }

  /// Marginal variance of each frame dimension.
  Frame marginal_variance() const { return kernel_[0] * frame_cov_.diagonal(); }

  Eigen::VectorXd mean(Eigen::Index n) const {
    check_frames(n);
    return frame_mean_.replicate(n, 1);
  }

  Eigen::MatrixXd covariance(Eigen::Index n) const {
    check_frames(n);
    const Eigen::Index dd = d();
    Eigen::MatrixXd s(n * dd, n * dd);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        s.block(i * dd, j * dd, dd, dd) = kernel_[static_cast<std::size_t>(std::abs(i - j))] * frame_cov_;
    return s;
  }

  /// Exact sample of n consecutive frames. The covariance is a Kronecker
  /// product, so X = L_k Z L_f^T with the two small Cholesky factors.
  Window sample(Eigen::Index n, Rng& rng) const {
    check_frames(n);
    Eigen::MatrixXd kern(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) kern(i, j) = kernel_[static_cast<std::size_t>(std::abs(i - j))];
    Eigen::LLT<Eigen::MatrixXd> lk(kern), lf(frame_cov_);
    const Window z = standard_normal(rng, n, d());
    Window x = lk.matrixL() * z * lf.matrixL().transpose();
    x.rowwise() += frame_mean_.transpose();
    return x;
  }

  void check_frames(Eigen::Index n) const {
    if (n < 1 || n > frames())
      throw ShapeError("prior covers " + std::to_string(frames()) + " frames, requested " + std::to_string(n));
  }

 private:

  Frame frame_mean_;
  Eigen::MatrixXd frame_cov_;
  std::vector<double> kernel_;
};

/// AR(1) temporal kernel rho^|i-j| over `frames` frames, isotropic per-frame
/// covariance `variance * I`.
inline GaussianPrior ar1_prior(Eigen::Index frames, Eigen::Index d, double rho, double variance = 1.0,
                               double mean = 0.0) {
  if (!(rho > -1.0 && rho < 1.0)) throw ConfigError("AR(1) rho must lie in (-1, 1)");
  if (!(variance > 0.0)) throw ConfigError("prior variance must be positive");
  if (d < 1 || frames < 1) throw ConfigError("prior needs d >= 1 and frames >= 1");
  std::vector<double> kernel(static_cast<std::size_t>(frames));
  for (Eigen::Index k = 0; k < frames; ++k) kernel[static_cast<std::size_t>(k)] = std::pow(rho, static_cast<double>(k));
  return GaussianPrior(Frame::Constant(d, mean), variance * Eigen::MatrixXd::Identity(d, d), std::move(kernel));
}

/// x0 = offset + gain * flatten(xt), for one timestep vector.
struct AffineMap {
  Eigen::VectorXd offset;
  Eigen::MatrixXd gain;

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return offset + gain * x; }
};

namespace detail {

inline std::string condition_report(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  std::ostringstream os;
  if (es.info() != Eigen::Success) {
    os << "eigenvalue computation failed";
    return os.str();
  }
  const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
  os << "min eigenvalue " << lo << ", max eigenvalue " << hi << ", condition " << (lo > 0 ? hi / lo : INFINITY);
  return os.str();
}

inline Eigen::LLT<Eigen::MatrixXd> factor(const Eigen::MatrixXd& m, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success || !llt.matrixLLT().allFinite())
    throw NumericError(std::string(what) + ": factorization failed (" + condition_report(m) + ")");
  return llt;
}

// Symmetric PSD square root and inverse square root.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> sqrt_pair(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0)
    throw NumericError(std::string(what) + ": matrix not positive definite (" + condition_report(m) + ")");
  const Eigen::VectorXd r = es.eigenvalues().array().sqrt();
  const Eigen::MatrixXd& u = es.eigenvectors();
  return {u * r.asDiagonal() * u.transpose(), u * r.cwiseInverse().asDiagonal() * u.transpose()};
}

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success) throw NumericError(std::string(what) + ": eigen decomposition failed");
  const Eigen::VectorXd r = es.eigenvalues().cwiseMax(0.0).array().sqrt();
  return es.eigenvectors() * r.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

/// Exact Gaussian computations for per-frame independent noising of a
/// window drawn from a GaussianPrior. Maps are cached per timestep vector;
/// the cache allows concurrent readers.
class GaussianPosterior {
 public:
  GaussianPosterior(GaussianPrior prior, NoiseSchedule schedule)
      : prior_(std::move(prior)), schedule_(std::move(schedule)) {}

  const GaussianPrior& prior() const { return prior_; }
  const NoiseSchedule& schedule() const { return schedule_; }

  /// E[x0 | xt] = mu + S A^T (A S A^T + R)^-1 (xt - A mu).
  Window posterior_mean(const Window& xt, std::span<const Timestep> t) const {
    check(xt, t);
    if (std::all_of(t.begin(), t.end(), [](Timestep v) { return v == 0; })) return xt;
    const auto map = lookup(Kind::posterior_mean, t);
    Window out = unflatten(map->apply(flatten(xt)), xt.rows(), xt.cols());
    for (Eigen::Index i = 0; i < xt.rows(); ++i)
      if (t[i] == 0) out.row(i) = xt.row(i);
    return out;
  }

  /// Exact consistency map: the symmetric transport taking the noised
  /// marginal N(A mu, A S A^T + R) onto the prior N(mu, S). For uniform
  /// timesteps this is the endpoint of the probability-flow ODE. Frames at
  /// t = 0 are held fixed and the remainder is transported under the prior
  /// conditioned on them.
  Window transport(const Window& xt, std::span<const Timestep> t) const {
    check(xt, t);
    if (std::all_of(t.begin(), t.end(), [](Timestep v) { return v == 0; })) return xt;
    const auto map = lookup(Kind::transport, t);
    Window out = unflatten(map->apply(flatten(xt)), xt.rows(), xt.cols());
    for (Eigen::Index i = 0; i < xt.rows(); ++i)
      if (t[i] == 0) out.row(i) = xt.row(i);
    return out;
  }

  std::shared_ptr<const AffineMap> posterior_map(std::span<const Timestep> t) const {
    return lookup(Kind::posterior_mean, t);
  }
  std::shared_ptr<const AffineMap> transport_map(std::span<const Timestep> t) const {
    return lookup(Kind::transport, t);
  }

  std::size_t cache_size() const {
    std::shared_lock lock(mutex_);
    return cache_.size();
  }

 private:
  enum class Kind { posterior_mean, transport };
  using Key = std::pair<Kind, Timesteps>;

  void check(const Window& xt, std::span<const Timestep> t) const {
    if (xt.cols() != prior_.d()) throw ShapeError("oracle: frame dimension does not match prior");
    if (static_cast<Eigen::Index>(t.size()) != xt.rows()) throw ShapeError("oracle: one timestep per frame");
    if (xt.rows() > prior_.frames()) throw ShapeError("oracle: window longer than prior");
    for (Timestep v : t) schedule_.check(v);
  }

  std::shared_ptr<const AffineMap> lookup(Kind kind, std::span<const Timestep> t) const {
    Key key{kind, Timesteps(t.begin(), t.end())};
    {
      std::shared_lock lock(mutex_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    auto map = std::make_shared<const AffineMap>(kind == Kind::posterior_mean ? build_posterior(key.second)
                                                                              : build_transport(key.second));
    std::unique_lock lock(mutex_);
    return cache_.emplace(std::move(key), std::move(map)).first->second;
  }

  Eigen::VectorXd per_coordinate(std::span<const Timestep> t, bool signal) const {
    const Eigen::Index d = prior_.d();
    Eigen::VectorXd v(static_cast<Eigen::Index>(t.size()) * d);
    for (std::size_t i = 0; i < t.size(); ++i)
      v.segment(static_cast<Eigen::Index>(i) * d, d).setConstant(signal ? schedule_.signal(t[i])
                                                                         : 1.0 - schedule_.alpha_bar(t[i]));
    return v;
  }

  AffineMap build_posterior(const Timesteps& t) const {
    const auto n = static_cast<Eigen::Index>(t.size());
    const Eigen::VectorXd mu = prior_.mean(n);
    const Eigen::MatrixXd sigma = prior_.covariance(n);
    const Eigen::VectorXd a = per_coordinate(t, true);
    Eigen::MatrixXd c = a.asDiagonal() * sigma * a.asDiagonal();
    c.diagonal() += per_coordinate(t, false);
    const auto llt = detail::factor(c, "posterior");
    // gain = S A C^-1 = (C^-1 A S)^T
    Eigen::MatrixXd gain = llt.solve(a.asDiagonal() * sigma).transpose();
    Eigen::VectorXd offset = mu - gain * a.cwiseProduct(mu);
    return {std::move(offset), std::move(gain)};
  }

  AffineMap build_transport(const Timesteps& t) const {
    const auto n = static_cast<Eigen::Index>(t.size());
    const Eigen::Index d = prior_.d();
    const Eigen::VectorXd mu = prior_.mean(n);
    const Eigen::MatrixXd sigma = prior_.covariance(n);
    const Eigen::VectorXd a = per_coordinate(t, true);
    const Eigen::VectorXd r = per_coordinate(t, false);

    std::vector<Eigen::Index> clean, noisy;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < d; ++j) (t[static_cast<std::size_t>(i)] == 0 ? clean : noisy).push_back(i * d + j);

    const auto nc = static_cast<Eigen::Index>(clean.size()), nn = static_cast<Eigen::Index>(noisy.size());
    auto pick = [](const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& rows,
                   const std::vector<Eigen::Index>& cols) {
      Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols.size(); ++j)
          out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(rows[i], cols[j]);
      return out;
    };
    auto pickv = [](const Eigen::VectorXd& v, const std::vector<Eigen::Index>& idx) {
      Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
      for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[idx[i]];
      return out;
    };

    // Prior of the noisy block conditioned on the clean block:
    // mean mu_N + B (x_Z - mu_Z), covariance S_NN - B S_ZN.
    Eigen::MatrixXd s_nn = pick(sigma, noisy, noisy);
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(nn, nc);
    if (nc > 0) {
      const Eigen::MatrixXd s_zz = pick(sigma, clean, clean);
      const Eigen::MatrixXd s_nz = pick(sigma, noisy, clean);
      b = detail::factor(s_zz, "transport conditioning").solve(s_nz.transpose()).transpose();
      s_nn -= b * s_nz.transpose();
      s_nn = 0.5 * (s_nn + s_nn.transpose());
    }
    const Eigen::VectorXd a_n = pickv(a, noisy);
    Eigen::MatrixXd c = a_n.asDiagonal() * s_nn * a_n.asDiagonal();
    c.diagonal() += pickv(r, noisy);
    const auto [c_half, c_inv_half] = detail::sqrt_pair(c, "transport");
    Eigen::MatrixXd inner = c_half * s_nn * c_half;
    inner = 0.5 * (inner + inner.transpose());
    const Eigen::MatrixXd m = c_inv_half * detail::psd_sqrt(inner, "transport") * c_inv_half;

    // f_N = mu_N|Z + M (x_N - A_N mu_N|Z), mu_N|Z = mu_N + B (x_Z - mu_Z)
    const Eigen::MatrixXd ma = m * a_n.asDiagonal();
    const Eigen::MatrixXd p = (Eigen::MatrixXd::Identity(nn, nn) - ma) * b;
    const Eigen::VectorXd mu_n = pickv(mu, noisy);
    const Eigen::VectorXd mu_z = pickv(mu, clean);
    Eigen::VectorXd c_n = mu_n - ma * mu_n;
    if (nc > 0) c_n -= p * mu_z;

    AffineMap out{Eigen::VectorXd::Zero(n * d), Eigen::MatrixXd::Zero(n * d, n * d)};
    for (Eigen::Index i = 0; i < nc; ++i) out.gain(clean[i], clean[i]) = 1.0;
    for (Eigen::Index i = 0; i < nn; ++i) {
      out.offset[noisy[i]] = c_n[i];
      for (Eigen::Index j = 0; j < nn; ++j) out.gain(noisy[i], noisy[j]) = m(i, j);
      for (Eigen::Index j = 0; j < nc; ++j) out.gain(noisy[i], clean[j]) = p(i, j);
    }
    return out;
  }

  GaussianPrior prior_;
  NoiseSchedule schedule_;
  mutable std::shared_mutex mutex_;
  mutable std::map<Key, std::shared_ptr<const AffineMap>> cache_;
};

/// Free-function form of the closed-form posterior mean.
inline Window gaussian_posterior_denoise(const Window& xt, std::span<const Timestep> t, const GaussianPrior& prior,
                                         const NoiseSchedule& s) {
  return GaussianPosterior(prior, s).posterior_mean(xt, t);
}

/// The oracle denoiser: posterior mean as its x0 prediction and the exact
/// transport map as its consistency function. Conditioning and reference
/// are ignored.
class GaussianOracle final : public Denoiser {
 public:
  GaussianOracle(GaussianPrior prior, NoiseSchedule schedule)
      : posterior_(std::make_shared<GaussianPosterior>(std::move(prior), std::move(schedule))) {}

  explicit GaussianOracle(std::shared_ptr<const GaussianPosterior> posterior) : posterior_(std::move(posterior)) {}

  const NoiseSchedule& schedule() const override { return posterior_->schedule(); }
  const GaussianPrior& prior() const { return posterior_->prior(); }
  const GaussianPosterior& posterior() const { return *posterior_; }

  Prediction predict(const Window& x, std::span<const Timestep> t, const Window&, const Frame*) override {
    return {PredictionKind::x0, posterior_->posterior_mean(x, t)};
  }

  Window consistency(const Window& x, std::span<const Timestep> t, const Window&, const Frame*) override {
    return posterior_->transport(x, t);
  }

 private:
  std::shared_ptr<const GaussianPosterior> posterior_;
};

}  // namespace rain
