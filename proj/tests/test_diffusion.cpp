#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "rain/diffusion.hpp"
#include "rain/gaussian.hpp"

using namespace rain;

namespace {

// Independent evaluation of the scaled-linear product in long double.
long double reference_alpha_bar(int t, int T = 1000, long double b0 = 0.00085L, long double b1 = 0.012L) {
  long double prod = 1.0L;
  for (int k = 1; k <= t; ++k) {
    const long double r = std::sqrt(b0) + (std::sqrt(b1) - std::sqrt(b0)) * (k - 1) / (T - 1);
    prod *= 1.0L - r * r;
  }
  return prod;
}


}  // namespace

TEST(Schedule, FirstAlphaBarIsOneMinusBetaStart) {
  const NoiseSchedule s = default_schedule();
  EXPECT_DOUBLE_EQ(s.alpha_bar(0), 1.0);
  EXPECT_NEAR(s.alpha_bar(1), 0.99915, 1e-15);
}

TEST(Schedule, MatchesScalarProductLoop) {
  const NoiseSchedule s = default_schedule();
  for (int t : {1, 2, 250, 500, 750, 999, 1000})
    EXPECT_NEAR(s.alpha_bar(t), static_cast<double>(reference_alpha_bar(t)), 1e-13) << "t=" << t;
  EXPECT_LT(s.alpha_bar(1000), 0.01);
  EXPECT_NEAR(s.alpha_bar(1000), 0.004660, 5e-6);
}

TEST(Schedule, StrictlyDecreasingAndBetaInRange) {
  for (auto [T, b0, b1] : {std::tuple{1000, 0.00085, 0.012}, std::tuple{2, 0.1, 0.1}, std::tuple{57, 1e-4, 0.5}}) {
    const NoiseSchedule s = build_schedule(T, b0, b1);
    for (int t = 1; t <= T; ++t) {
      EXPECT_GT(s.beta(t), 0.0);
      EXPECT_LT(s.beta(t), 1.0);
      EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    }
  }
}

TEST(Schedule, RejectsInvalidRanges) {
  EXPECT_THROW(build_schedule(1, 0.001, 0.01), ConfigError);
  EXPECT_THROW(build_schedule(10, 0.0, 0.01), ConfigError);
  EXPECT_THROW(build_schedule(10, 0.02, 0.01), ConfigError);
  EXPECT_THROW(build_schedule(10, 0.01, 1.0), ConfigError);
  const NoiseSchedule s = default_schedule();
  EXPECT_THROW(s.alpha_bar(-1), RangeError);
  EXPECT_THROW(s.alpha_bar(1001), RangeError);
}

TEST(AddNoise, Examples) {
  const NoiseSchedule s = default_schedule();
  Rng rng(1);
  const Frame x0 = standard_normal(rng, 8), eps = standard_normal(rng, 8);
  EXPECT_EQ(add_noise(x0, eps, 0, s), x0);
  const Frame z = add_noise(Frame(Frame::Zero(8)), eps, 400, s);
  EXPECT_TRUE(z.isApprox(std::sqrt(1.0 - s.alpha_bar(400)) * eps, 1e-15));
  const double ab = static_cast<double>(reference_alpha_bar(1000));
  const Frame expect = std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
  EXPECT_LT((add_noise(x0, eps, 1000, s) - expect).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(add_noise(x0, eps, 1001, s), RangeError);
}

TEST(AddNoise, UnitVariancePreserved) {
  const NoiseSchedule s = default_schedule();
  Rng rng(2);
  for (int t : {1, 300, 1000}) {
    double sum = 0, sq = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
      const Frame x0 = standard_normal(rng, 1), eps = standard_normal(rng, 1);
      const double v = add_noise(x0, eps, t, s)[0];
      sum += v;
      sq += v * v;
    }
    const double var = sq / n - (sum / n) * (sum / n);
    EXPECT_NEAR(var, 1.0, 0.015) << "t=" << t;
  }
}

TEST(ConvertPrediction, VAtTimestepZero) {
  const NoiseSchedule s = default_schedule();
  Rng rng(3);
  const Frame xt = standard_normal(rng, 4), v = standard_normal(rng, 4);
  EXPECT_TRUE(convert_prediction(PredictionKind::v, v, xt, 0, s, PredictionKind::x0).isApprox(xt));
  EXPECT_TRUE(convert_prediction(PredictionKind::v, v, xt, 0, s, PredictionKind::epsilon).isApprox(v));
  EXPECT_THROW(convert_prediction(PredictionKind::x0, xt, xt, 0, s, PredictionKind::epsilon), NumericError);
}

TEST(ConvertPrediction, RoundTripsAllKinds) {
  const NoiseSchedule s = default_schedule();
  Rng rng(4);
  const PredictionKind kinds[] = {PredictionKind::epsilon, PredictionKind::x0, PredictionKind::v};
  for (int t : {1, 2, 17, 500, 998, 999}) {
    const Frame xt = standard_normal(rng, 6);
    for (auto from : kinds)
      for (auto to : kinds) {
        const Frame p = standard_normal(rng, 6);
        const Frame q = convert_prediction(from, p, xt, t, s, to);
        const Frame back = convert_prediction(to, q, xt, t, s, from);
        EXPECT_LT((back - p).cwiseAbs().maxCoeff(), 1e-10) << to_string(from) << "->" << to_string(to) << " t=" << t;
      }
  }
  const Frame x0 = standard_normal(rng, 6), xt = standard_normal(rng, 6);
  const Frame v = convert_prediction(PredictionKind::x0, x0, xt, 321, s, PredictionKind::v);
  EXPECT_LT((convert_prediction(PredictionKind::v, v, xt, 321, s, PredictionKind::x0) - x0).norm(), 1e-12);
}

TEST(ConvertPrediction, TrueEpsilonRecoversTrueX0) {
  const NoiseSchedule s = default_schedule();
  Rng rng(5);
  for (int t : {1, 50, 600, 1000}) {
    const Frame x0 = standard_normal(rng, 8), eps = standard_normal(rng, 8);
    const Frame xt = add_noise(x0, eps, t, s);
    EXPECT_LT((convert_prediction(PredictionKind::epsilon, eps, xt, t, s, PredictionKind::x0) - x0).norm(), 1e-9);
    const Frame v = std::sqrt(s.alpha_bar(t)) * eps - std::sqrt(1 - s.alpha_bar(t)) * x0;
    EXPECT_LT((convert_prediction(PredictionKind::v, v, xt, t, s, PredictionKind::x0) - x0).norm(), 1e-12);
    EXPECT_LT((convert_prediction(PredictionKind::x0, x0, xt, t, s, PredictionKind::v) - v).norm(), 1e-10);
  }
}

TEST(ConvertPrediction, WindowFormUsesPerFrameTimesteps) {
  const NoiseSchedule s = default_schedule();
  Rng rng(6);
  const Window xt = standard_normal(rng, 3, 2), v = standard_normal(rng, 3, 2);
  const Timesteps t{10, 400, 1000};
  const Prediction x0 = convert_prediction({PredictionKind::v, v}, xt, t, s, PredictionKind::x0);
  for (int i = 0; i < 3; ++i) {
    const Frame row = convert_prediction(PredictionKind::v, v.row(i).transpose(), xt.row(i).transpose(), t[i], s,
                                         PredictionKind::x0);
    EXPECT_TRUE(x0.values.row(i).transpose().isApprox(row));
  }
  EXPECT_THROW(convert_prediction({PredictionKind::v, v}, xt, Timesteps{1, 2}, s, PredictionKind::x0), ShapeError);
}

TEST(Ddim, FinalStepReturnsEstimate) {
  const NoiseSchedule s = default_schedule();
  Rng rng(7);
  const Frame xt = standard_normal(rng, 5), x0 = standard_normal(rng, 5);
  EXPECT_EQ(ddim_step(xt, x0, 250, 0, s), x0);
  EXPECT_THROW(ddim_step(xt, x0, 250, 250, s), RangeError);
  EXPECT_THROW(ddim_step(xt, x0, 250, 300, s), RangeError);
}

TEST(Ddim, ExactPredictorStaysOnTrajectory) {
  const NoiseSchedule s = default_schedule();
  Rng rng(8);
  const Frame x0 = standard_normal(rng, 5), eps = standard_normal(rng, 5);
  Frame x = add_noise(x0, eps, 900, s);
  x = ddim_step(x, x0, 900, 420, s);
  EXPECT_LT((x - add_noise(x0, eps, 420, s)).norm(), 1e-12);
  EXPECT_LT((ddim_step(x, x0, 420, 0, s) - x0).norm(), 1e-15);
}

TEST(Ddim, TimeConsistentWithExactPredictor) {
  // An x0 estimate that stays fixed along the trajectory (the true x0, or
  // any affine predictor with zero gain) makes two hops equal one.
  const NoiseSchedule s = default_schedule();
  Rng rng(9);
  const Frame x0 = standard_normal(rng, 3), x = standard_normal(rng, 3);
  const Frame direct = ddim_step(x, x0, 800, 200, s);
  const Frame hop = ddim_step(ddim_step(x, x0, 800, 500, s), x0, 500, 200, s);
  EXPECT_LT((direct - hop).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Ddim, OraclePredictorConvergesUnderRefinement) {
  // With the Gaussian posterior mean the DDIM update is a first-order ODE
  // step: halving the hop size roughly halves the gap to a fine reference.
  const NoiseSchedule s = default_schedule();
  const GaussianPrior prior = ar1_prior(2, 1, 0.9);
  Rng rng(10);
  const Window x = standard_normal(rng, 2, 1);
  auto integrate = [&](int hop) {
    Window y = x;
    for (int t = 800; t > 200; t -= hop) {
      const Window x0 = gaussian_posterior_denoise(y, Timesteps(2, t), prior, s);
      for (int i = 0; i < 2; ++i)
        y.row(i) = ddim_step(y.row(i).transpose(), x0.row(i).transpose(), t, t - hop, s).transpose();
    }
    return y;
  };
  const Window fine = integrate(1);
  const double e100 = (integrate(100) - fine).norm(), e50 = (integrate(50) - fine).norm();
  EXPECT_LT(e50, 0.7 * e100);
  EXPECT_LT(e50, 0.05);
}

TEST(CmRenoise, ZeroTimestepAndDeterminism) {
  const NoiseSchedule s = default_schedule();
  Rng a(11), b(11);
  const Frame x0 = Frame::LinSpaced(4, -1, 1);
  EXPECT_EQ(cm_renoise_step(x0, 0, a, s), x0);
  Rng c(12), d(12);
  EXPECT_EQ(cm_renoise_step(x0, 500, c, s), cm_renoise_step(x0, 500, d, s));
  EXPECT_THROW(cm_renoise_step(x0, 1001, c, s), RangeError);
}

TEST(CmRenoise, NoiseVarianceMatchesSchedule) {
  const NoiseSchedule s = default_schedule();
  Rng rng(13);
  const Frame x0 = Frame::Constant(3, 0.7);
  for (int t : {5, 250, 1000}) {
    Eigen::Vector3d sum = Eigen::Vector3d::Zero(), sq = Eigen::Vector3d::Zero();
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      const Frame y = cm_renoise_step(x0, t, rng, s);
      sum += y;
      sq += y.cwiseProduct(y);
    }
    const Eigen::Vector3d mean = sum / n, var = sq / n - mean.cwiseProduct(mean);
    const double target = 1.0 - s.alpha_bar(t);
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(var[j] / target, 1.0, 0.02) << "t=" << t;
  }
}
