#include <gtest/gtest.h>

#include "rain/metrics.hpp"

using namespace rain;

namespace {

std::vector<Frame> white_noise(std::size_t n, Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Frame> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(standard_normal(rng, d));
  return out;
}

}  // namespace

TEST(Jitter, ConstantStream) {
  const JitterReport r = jitter_ratio(std::vector<Frame>(12, Frame::Constant(3, 2.0)), 4);
  EXPECT_EQ(r.boundary_msd, 0.0);
  EXPECT_EQ(r.interior_msd, 0.0);
  EXPECT_EQ(r.ratio, 1.0);
  EXPECT_THROW(jitter_ratio(std::vector<Frame>(7, Frame::Zero(1)), 4), Error);
}

TEST(Jitter, InjectedBoundaryJump) {
  // a unit-slope ramp gives squared increments of 1; every g-th frame jumps
  // by an extra delta
  const int g = 4;
  const double delta = 0.5;
  std::vector<Frame> frames;
  double level = 0;
  for (int i = 0; i < 40; ++i) {
    if (i > 0) level += 1.0 + (i % g == 0 ? delta : 0.0);
    frames.push_back(Frame::Constant(2, level));
  }
  const JitterReport r = jitter_ratio(frames, g);
  EXPECT_DOUBLE_EQ(r.interior_msd, 1.0);
  EXPECT_DOUBLE_EQ(r.boundary_msd, (1 + delta) * (1 + delta));
  EXPECT_DOUBLE_EQ(r.ratio, 2.25);
}

TEST(Jitter, ShiftInvariantAndPeriodicSignal) {
  auto frames = white_noise(64, 3, 1);
  const JitterReport a = jitter_ratio(frames, 4);
  for (auto& f : frames) f.array() += 7.5;
  const JitterReport b = jitter_ratio(frames, 4);
  EXPECT_NEAR(a.ratio, b.ratio, 1e-12);
  EXPECT_GE(a.boundary_msd, 0.0);
  EXPECT_GE(a.interior_msd, 0.0);
}

TEST(Drift, InjectedBiasSlope) {
  const GaussianPrior prior = ar1_prior(2, 4, 0.0);
  for (double b : {1e-3, -4e-4, 2e-4}) {
    auto frames = white_noise(5000, 4, 2);
    for (std::size_t i = 0; i < frames.size(); ++i) frames[i].array() += b * static_cast<double>(i);
    const DriftReport r = drift(frames, prior, 100);
    EXPECT_NEAR(r.slope / b, 1.0, 0.1) << "b=" << b;
    EXPECT_EQ(r.center.size(), 50u);
  }
}

TEST(Drift, WhiteNoiseHasNoTrend) {
  const GaussianPrior prior = ar1_prior(2, 8, 0.0);
  const DriftReport r = drift(white_noise(5000, 8, 3), prior, 50);
  EXPECT_LT(std::abs(r.tau), 0.2);
  EXPECT_EQ(r.mean_dev.size(), 100u);
  EXPECT_THROW(drift(white_noise(101, 8, 3), prior, 50), ConfigError);
}

TEST(Drift, KendallTauReference) {
  EXPECT_DOUBLE_EQ(kendall_tau({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(kendall_tau({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  // pairs: (1,2)+ (1,3)+ (1,4)+ (2,3)- (2,4)+ (3,4)+ -> (5-1)/6
  EXPECT_DOUBLE_EQ(kendall_tau({1, 2, 3, 4}, {1, 3, 2, 4}), 4.0 / 6.0);
}

TEST(Bench, DeterministicCounts) {
  GaussianOracle oracle(ar1_prior(16, 8, 0.95), default_schedule());
  const BenchReport a = bench_pipeline(ScheduleConfig{}, oracle, 8, 64, 1);
  EXPECT_EQ(a.first_frame_latency_iters, 4);
  EXPECT_DOUBLE_EQ(a.throughput_frames_per_iter, 4.0);
  EXPECT_GT(a.first_frame_latency_wall.count(), 0);
  const BenchReport b = bench_pipeline(ScheduleConfig{}, oracle, 8, 64, 9);
  EXPECT_EQ(a.first_frame_latency_iters, b.first_frame_latency_iters);
  EXPECT_EQ(a.series.size(), b.series.size());

  const BenchReport one = bench_pipeline({16, 1, 4, 1000}, oracle, 8, 64, 1);
  EXPECT_EQ(one.first_frame_latency_iters, 4);
  EXPECT_DOUBLE_EQ(one.throughput_frames_per_iter, 4.0);
  const BenchReport n2 = bench_pipeline({8, 4, 2, 1000}, oracle, 8, 64, 1);
  EXPECT_EQ(n2.first_frame_latency_iters, 8);
  EXPECT_DOUBLE_EQ(n2.throughput_frames_per_iter, 1.0);
}

TEST(Compare, SingleGroupIsExact) {
  const GaussianPrior prior = ar1_prior(16, 8, 0.95);
  for (Sampler s : {Sampler::consistency, Sampler::ddim}) {
    const auto mse = compare_streaming_offline({16, 1, 1, 1000}, prior, default_schedule(), 5, 16, s);
    for (double v : mse) EXPECT_EQ(v, 0.0);
  }
}

TEST(Compare, IndependentFramesMatchOffline) {
  const GaussianPrior prior = ar1_prior(64, 8, 0.0);
  for (Sampler s : {Sampler::consistency, Sampler::ddim}) {
    const auto mse = compare_streaming_offline(ScheduleConfig{}, prior, default_schedule(), 6, 64, s);
    EXPECT_LT(*std::max_element(mse.begin(), mse.end()), 1e-20);
  }
}

TEST(Compare, OfflineSamplerReproducesPrior) {
  // the offline reference itself is an exact sampler with the transport map
  const GaussianPrior prior = ar1_prior(8, 2, 0.9);
  GaussianOracle oracle(prior, default_schedule());
  const Eigen::MatrixXd sigma = prior.covariance(8);
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(16, 16);
  const int n = 4000;
  for (int k = 0; k < n; ++k) {
    const auto frames = offline_sample(ScheduleConfig{8, 4, 1, 1000}, oracle, 2, 8, static_cast<std::uint64_t>(k));
    Eigen::VectorXd v(16);
    for (int i = 0; i < 8; ++i) v.segment(2 * i, 2) = frames[i];
    acc += v * v.transpose();
  }
  EXPECT_LT((acc / n - sigma).norm() / sigma.norm(), 0.08);
}

TEST(StillStart, DriftsMoreThanSoftStart) {
  // A still image copied into every slot of the first pile pins the early
  // frames to that image. Across seeds, the ensemble of each early frame is
  // compared with the prior marginal: one drift window per frame index.
  const NoiseSchedule sched = default_schedule();
  const GaussianPrior prior = ar1_prior(16, 8, 0.95);
  GaussianOracle oracle(prior, sched);
  const ScheduleConfig cfg;
  Rng rng(7);
  const Frame image = prior.sample(1, rng).row(0).transpose();
  const int seeds = 32, early = 16;
  std::vector<Frame> soft(early * seeds), still(early * seeds);
  for (int k = 0; k < seeds; ++k) {
    auto collect = [&](EngineState s, std::vector<Frame>& dst) {
      int n = 0;
      while (n < early)
        for (auto& e : step(s, oracle, Window(s.pile.size(), 0)))
          if (n < early) dst[static_cast<std::size_t>(n++ * seeds + k)] = e.latent;
    };
    collect(init(cfg, 8, static_cast<std::uint64_t>(k)), soft);
    collect(init_still(cfg, image, sched, static_cast<std::uint64_t>(k)), still);
  }
  const DriftReport rs = drift(soft, prior, seeds), rt = drift(still, prior, seeds);
  EXPECT_GT(rt.max_deviation, 2 * rs.max_deviation) << "soft " << rs.max_deviation << " still " << rt.max_deviation;
  EXPECT_LT(rs.max_deviation, 0.5);
}
