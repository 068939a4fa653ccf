#include <gtest/gtest.h>

#include "rain/distill.hpp"
#include "rain/gaussian.hpp"

using namespace rain;

namespace {

const NoiseSchedule& sched() {
  static const NoiseSchedule s = default_schedule();
  return s;
}

// Per-level linear maps on the flattened window; only uniform grid levels.
struct LinearStudent {
  struct Params {
    Eigen::VectorXd v;
    Eigen::Index n = 0;
    Eigen::VectorXd& flat() { return v; }
    const Eigen::VectorXd& flat() const { return v; }
    Params zeros_like() const { return {Eigen::VectorXd::Zero(v.size()), n}; }
    Eigen::Map<const Eigen::MatrixXd> level(int k) const { return {v.data() + k * n * n, n, n}; }
    Eigen::Map<Eigen::MatrixXd> level(int k) { return {v.data() + k * n * n, n, n}; }
  };
  struct Tape {
    Eigen::VectorXd x;
    int k = 0;
  };

  int step = 10;

  int level_of(std::span<const Timestep> t) const {
    for (Timestep v : t)
      if (v != t[0]) throw RangeError("LinearStudent: uniform levels only");
    return t[0] / step;
  }

  Window consistency(const Params& p, const Window& x, std::span<const Timestep> t, const Window&, const Frame*,
                     Tape* tape = nullptr) const {
    const int k = level_of(t);
    if (tape) *tape = {flatten(x), k};
    return unflatten(p.level(k) * flatten(x), x.rows(), x.cols());
  }

  void pullback(const Params&, const Tape& tape, const Window& df, Params& grad) const {
    grad.level(tape.k) += flatten(df) * tape.x.transpose();
  }
};

static_assert(DistillStudent<LinearStudent>);

// Composition of the oracle's DDIM steps down the grid, built from the
// closed-form posterior gain a S (a^2 S + s^2 I)^-1 at a uniform level.
LinearStudent::Params exact_student(const GaussianPrior& prior, Eigen::Index frames, int step, int levels) {
  const Eigen::Index n = frames * prior.d();
  const Eigen::MatrixXd S = prior.covariance(frames);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  LinearStudent::Params p{Eigen::VectorXd::Zero(n * n * (levels + 1)), n};
  p.level(0) = I;
  for (int k = 1; k <= levels; ++k) {
    const Timestep t = k * step, tp = (k - 1) * step;
    const double a = sched().signal(t), s = sched().noise(t);
    const Eigen::MatrixXd P = a * S * (a * a * S + s * s * I).inverse();
    Eigen::MatrixXd D;
    if (tp == 0)
      D = P;
    else
      D = (sched().signal(tp) - sched().noise(tp) * a / s) * P + (sched().noise(tp) / s) * I;
    p.level(k) = p.level(k - 1) * D;
  }
  return p;
}

ToyNetParams random_params(Eigen::Index d, Eigen::Index c, Eigen::Index h, std::uint64_t seed, double scale = 0.3) {
  ToyNetParams p(d, c, h);
  Rng rng(seed);
  p.flat() = scale * standard_normal(rng, p.size());
  return p;
}

}  // namespace

TEST(Boundary, CoefficientsAtZero) {
  EXPECT_EQ(c_skip(0, 1000), 1.0);
  EXPECT_EQ(c_out(0, 1000), 0.0);
  EXPECT_NEAR(c_skip(1000, 1000), 0.5, 1e-15);
  EXPECT_NEAR(c_out(1000, 1000), 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(Boundary, IdentityAtZeroBitExact) {
  auto net = std::make_shared<ToyNetDenoiser>(random_params(8, 3, 16, 1, 2.0), sched());
  ConsistencyModel model(net);
  const ToyStudent student{sched()};
  const ToyNetParams p = random_params(8, 3, 16, 2, 2.0);
  Rng rng(3);
  const Timesteps zero(4, 0);
  for (int k = 0; k < 1000; ++k) {
    const Window x = 10.0 * standard_normal(rng, 4, 8);
    const Window cond = standard_normal(rng, 4, 3);
    const Frame ref = standard_normal(rng, 8);
    ASSERT_TRUE((model.consistency(x, zero, cond, &ref).array() == x.array()).all());
    ASSERT_TRUE((student.consistency(p, x, zero, cond, &ref).array() == x.array()).all());
  }
}

TEST(Boundary, MixedWindowKeepsCleanRows) {
  const ToyStudent student{sched()};
  const ToyNetParams p = random_params(4, 0, 8, 4);
  Rng rng(5);
  const Window x = standard_normal(rng, 4, 4);
  const Timesteps t{0, 0, 250, 250};
  const Window f = student.consistency(p, x, t, Window(4, 0), nullptr);
  EXPECT_TRUE((f.topRows(2).array() == x.topRows(2).array()).all());
  EXPECT_GT((f.bottomRows(2) - x.bottomRows(2)).norm(), 1e-6);
}

TEST(ConsistencyFn, IsotropicOracleInterpolates) {
  auto oracle = std::make_shared<GaussianOracle>(ar1_prior(3, 2, 0.0), sched());
  ConsistencyModel model(oracle);
  Rng rng(6);
  for (Timestep t : {1, 40, 500, 1000}) {
    const Window x = standard_normal(rng, 3, 2);
    const Timesteps tv(3, t);
    const double expect = c_skip(t, 1000) + c_out(t, 1000) * sched().signal(t);
    EXPECT_LT((model.consistency(x, tv, Window(3, 0), nullptr) - expect * x).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ConsistencyFn, LinearForZeroMeanOracle) {
  auto oracle = std::make_shared<GaussianOracle>(ar1_prior(4, 2, 0.9), sched());
  ConsistencyModel model(oracle);
  Rng rng(7);
  const Timesteps t{5, 130, 400, 870};
  const Window x = standard_normal(rng, 4, 2), y = standard_normal(rng, 4, 2);
  const Window none(4, 0);
  const Window lhs = model.consistency(1.7 * x - 0.4 * y, t, none, nullptr);
  const Window rhs = 1.7 * model.consistency(x, t, none, nullptr) - 0.4 * model.consistency(y, t, none, nullptr);
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Huber, Regimes) {
  Eigen::VectorXd a(3), b(3);
  a << 1, 2, 3;
  EXPECT_EQ(huber(a, a, 1e-3), 0.0);
  b = a;
  b[0] += 1.0;
  EXPECT_NEAR(huber(a, b, 1e-3) / 1.0, 1.0, 1e-3);
  b = a;
  b[1] += 1e-6;
  EXPECT_NEAR(huber(a, b, 1e-3) / (1e-12 / 2e-3), 1.0, 1e-5);
}

TEST(Huber, SymmetricNonNegativeZeroIffEqual) {
  Rng rng(8);
  for (int k = 0; k < 200; ++k) {
    const Eigen::VectorXd a = standard_normal(rng, 5), b = standard_normal(rng, 5);
    const double c = 1e-3 * (1 + k % 7);
    EXPECT_EQ(huber(a, b, c), huber(b, a, c));
    EXPECT_GT(huber(a, b, c), 0.0);
    EXPECT_EQ(huber(a, a, c), 0.0);
  }
  EXPECT_THROW(huber(Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(3), 1e-3), ShapeError);
}

TEST(Guidance, EndpointsAndDegenerate) {
  Rng rng(9);
  const Prediction c{PredictionKind::epsilon, standard_normal(rng, 3, 2)};
  const Prediction u{PredictionKind::epsilon, standard_normal(rng, 3, 2)};
  EXPECT_EQ(cfg_teacher(c, u, 0.0).values, u.values);
  EXPECT_LT((cfg_teacher(c, u, 1.0).values - c.values).cwiseAbs().maxCoeff(), 1e-15);
  for (double w : {0.0, 0.5, 2.0, 3.5}) EXPECT_EQ(cfg_teacher(u, u, w).values, u.values);
  EXPECT_THROW(cfg_teacher(c, Prediction{PredictionKind::v, u.values}, 2.0), ConfigError);
}

TEST(Guidance, ExtrapolatesBeyondCond) {
  Rng rng(10);
  for (double w : {2.0, 2.5, 3.5}) {
    const Prediction c{PredictionKind::epsilon, standard_normal(rng, 4, 3)};
    const Prediction u{PredictionKind::epsilon, standard_normal(rng, 4, 3)};
    const Window out = cfg_teacher(c, u, w).values;
    // Outside the segment: the coordinate along (c - u) exceeds that of c.
    const Window dir = c.values - u.values;
    const double s = (out - u.values).cwiseProduct(dir).sum() / dir.squaredNorm();
    EXPECT_NEAR(s, w, 1e-12);
    EXPECT_GT(s, 1.0);
  }
}

TEST(Pairs, GridLayouts) {
  const ScheduleConfig cfg;
  DistillConfig dc;
  Rng rng(11);
  int staggered = 0;
  for (int k = 0; k < 2000; ++k) {
    const TimestepPair p = sample_pair(cfg, dc, rng);
    for (std::size_t i = 0; i < p.tn.size(); ++i) {
      ASSERT_EQ(p.tn1[i], p.tn[i] + 10);
      ASSERT_EQ(p.tn[i] % 10, 0);
      ASSERT_GE(p.tn[i], 0);
      ASSERT_LE(p.tn1[i], 1000);
    }
    if (p.tn.front() != p.tn.back()) {
      ++staggered;
      ASSERT_LT(p.tn[0], 250);
      ASSERT_EQ(p.tn[15], p.tn[0] + 750);
    }
  }
  EXPECT_NEAR(staggered / 2000.0, 0.5, 0.05);
  dc.solver_steps = 7;
  EXPECT_THROW(dc.validate(cfg), ConfigError);
}

TEST(CdStep, ExactConsistencyMapHasZeroLossAndGradient) {
  const GaussianPrior prior = ar1_prior(3, 2, 0.9);
  GaussianOracle teacher(prior, sched());
  DistillConfig dc{.staggered_fraction = 0.0};
  const LinearStudent::Params exact = exact_student(prior, 3, 10, 100);
  DistillState<LinearStudent> st(LinearStudent{}, exact, dc);
  const ScheduleConfig cfg{.K = 3, .G = 1, .N = 1, .T = 1000};
  Rng rng(12);
  for (int k = 0; k < 20; ++k) {
    const TimestepPair pair = sample_pair(cfg, dc, rng);
    std::vector<Window> xs, conds;
    for (int b = 0; b < 4; ++b) {
      xs.push_back(add_noise(prior.sample(3, rng), standard_normal(rng, 3, 2), pair.tn1, sched()));
      conds.push_back(Window(3, 0));
    }
    LinearStudent::Params grad;
    const double loss = cd_loss_grad(st, xs, conds, {4, nullptr}, pair, teacher, grad);
    EXPECT_LT(loss, 1e-9) << "tn1=" << pair.tn1[0];
    EXPECT_LT(grad.flat().norm(), 1e-6) << "tn1=" << pair.tn1[0];
  }
}

TEST(CdStep, ScalarToyMatchesHandValue) {
  // One frame, one dimension, unit prior: posterior mean a x, DDIM step
  // x -> (a a' + s s') x.
  const GaussianPrior prior = ar1_prior(1, 1, 0.0);
  GaussianOracle teacher(prior, sched());
  DistillConfig dc{.huber_c = 0.05};
  LinearStudent::Params init{Eigen::VectorXd::LinSpaced(101, 1.0, 0.3), 1};
  DistillState<LinearStudent> st(LinearStudent{}, init, dc);
  st.theta_ema.v = Eigen::VectorXd::LinSpaced(101, 0.9, 0.5);
  const TimestepPair pair{{370}, {380}};
  const double x = 0.83;
  const std::vector<Window> xs(5, Window::Constant(1, 1, x));
  const std::vector<Window> conds(5, Window(1, 0));
  LinearStudent::Params grad;
  const double loss = cd_loss_grad(st, xs, conds, {5, nullptr}, pair, teacher, grad);
  const double a = sched().signal(380), s = sched().noise(380), a2 = sched().signal(370), s2 = sched().noise(370);
  const double xhat = (a * a2 + s * s2) * x;
  const double diff = st.theta.v[38] * x - st.theta_ema.v[37] * xhat;
  EXPECT_NEAR(loss, std::sqrt(diff * diff + 0.05 * 0.05) - 0.05, 1e-14);
  EXPECT_NEAR(grad.v[38], diff / std::sqrt(diff * diff + 0.05 * 0.05) * x, 1e-14);
  EXPECT_EQ(grad.v[37], 0.0);
}

TEST(CdStep, EmaFollowsScalarRuleAndNeverTakesGradients) {
  const ScheduleConfig cfg{.K = 4, .G = 2, .N = 1, .T = 1000};
  const GaussianPrior prior = ar1_prior(4, 2, 0.9);
  GaussianOracle teacher(prior, sched());
  for (double rate : {1.0, 0.95, 0.5}) {
    DistillConfig dc{.ema_rate = rate, .batch = 2, .opt = {.lr = 1e-2}};
    const ToyNetParams init = random_params(2, 0, 8, 13);
    DistillState<ToyStudent> st(ToyStudent{sched()}, init, dc);
    Eigen::VectorXd ema = init.flat();
    Rng rng(14), data_rng(15);
    for (int k = 0; k < 6; ++k) {
      std::vector<SequenceSample> batch;
      for (int b = 0; b < 2; ++b) batch.push_back({prior.sample(4, data_rng), Window(4, 0), std::nullopt});
      cd_step(st, batch, teacher, cfg, rng);
      for (Eigen::Index i = 0; i < ema.size(); ++i) ema[i] = rate * ema[i] + (1 - rate) * st.theta.flat()[i];
      ASSERT_LT((st.theta_ema.flat() - ema).cwiseAbs().maxCoeff(), 1e-15);
    }
    EXPECT_NE(st.theta, init);
    if (rate == 1.0) {
      EXPECT_EQ(st.theta_ema, init);
    }
  }
}

TEST(CdStep, ToyStudentGradientMatchesFiniteDifferences) {
  const GaussianPrior prior = ar1_prior(4, 2, 0.9);
  GaussianOracle teacher(prior, sched());
  for (auto mask : {AttentionMaskMode::full, AttentionMaskMode::causal}) {
    DistillConfig dc{.huber_c = 0.1};
    DistillState<ToyStudent> st(ToyStudent{sched(), mask}, random_params(2, 1, 6, 16), dc);
    st.theta_ema = random_params(2, 1, 6, 17);
    Rng rng(18);
    const TimestepPair pair{{0, 0, 250, 250}, {10, 10, 260, 260}};
    std::vector<Window> xs, conds;
    for (int b = 0; b < 2; ++b) {
      xs.push_back(standard_normal(rng, 4, 2));
      conds.push_back(standard_normal(rng, 4, 1));
    }
    const Frame ref = standard_normal(rng, 2);
    const std::vector<const Frame*> refs{&ref, nullptr};
    ToyNetParams grad;
    cd_loss_grad(st, xs, conds, refs, pair, teacher, grad);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < grad.size(); ++i) {
      DistillState<ToyStudent> probe = st;
      ToyNetParams g;
      probe.theta.flat()[i] += h;
      const double up = cd_loss_grad(probe, xs, conds, refs, pair, teacher, g);
      probe.theta.flat()[i] -= 2 * h;
      const double down = cd_loss_grad(probe, xs, conds, refs, pair, teacher, g);
      const double fd = (up - down) / (2 * h);
      ASSERT_LT(std::abs(fd - grad.flat()[i]) / std::max(1e-6, std::abs(fd) + std::abs(grad.flat()[i])), 1e-4)
          << "param " << i << " mask " << to_string(mask);
    }
  }
}

TEST(Distill, ZeroStepsReturnsInit) {
  const ScheduleConfig cfg;
  GaussianOracle teacher(ar1_prior(16, 2, 0.9), sched());
  const ToyNetParams init = random_params(2, 0, 8, 19);
  const ToyNetParams out = distill(teacher, ToyStudent{sched()}, init, gaussian_sequences(ar1_prior(16, 2, 0.9), 16),
                                   cfg, DistillConfig{}, 0);
  EXPECT_EQ(out, init);
}

TEST(Distill, LogsAndDeterministic) {
  const ScheduleConfig cfg{.K = 8, .G = 4, .N = 1, .T = 1000};
  const GaussianPrior prior = ar1_prior(8, 2, 0.9);
  GaussianOracle teacher(prior, sched());
  DistillConfig dc{.batch = 2, .seed = 3};
  auto run = [&](std::ostream* log) {
    return distill(teacher, ToyStudent{sched()}, random_params(2, 0, 8, 20), gaussian_sequences(prior, 8), cfg, dc,
                   5, log);
  };
  std::ostringstream log;
  EXPECT_EQ(run(&log), run(nullptr));
  const std::string text = log.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
  EXPECT_NE(text.find("\"mode\":\"cd\""), std::string::npos);
}
