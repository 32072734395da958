#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ecdiff/diffusion.hpp"
#include "test_util.hpp"

using namespace ecdiff;
using ecdiff::testing::normal_matrix;
using ecdiff::testing::random_matrix;

namespace {

TEST(Schedule, DefaultHasHundredStepsAndTenCoarseSteps) {
  const auto s = default_schedule();
  EXPECT_EQ(s.steps(), 100);
  EXPECT_EQ(s.coarse_steps(), 10);
  EXPECT_EQ(s.stride(), 10);
  EXPECT_DOUBLE_EQ(s.beta(1), 1e-4);
  EXPECT_DOUBLE_EQ(s.beta(100), 0.05);
  EXPECT_NEAR(s.alpha_hat(100), 0.08, 0.01);
}

TEST(Schedule, SingleStepProduct) {
  const auto s = build_schedule(1, 0.5, 0.5, 1, 1);
  ASSERT_EQ(s.betas().size(), 1u);
  EXPECT_DOUBLE_EQ(s.beta(1), 0.5);
  EXPECT_DOUBLE_EQ(s.alpha_hat(1), 0.5);
}

TEST(Schedule, ThreeStepHandProducts) {
  const auto s = build_schedule(3, 0.1, 0.3, 3, 1);
  EXPECT_NEAR(s.alpha_hat(1), 0.9, 1e-15);
  EXPECT_NEAR(s.alpha_hat(2), 0.72, 1e-15);
  EXPECT_NEAR(s.alpha_hat(3), 0.504, 1e-15);
}

TEST(Schedule, AlphaHatIsCumulativeProductAndStrictlyDecreasing) {
  const auto s = default_schedule();
  long double prod = 1;
  EXPECT_EQ(s.alpha_hat(0), 1.0);
  for (int t = 1; t <= s.steps(); ++t) {
    prod *= 1.0L - s.beta(t);
    EXPECT_NEAR(s.alpha_hat(t), static_cast<double>(prod), 1e-12 * static_cast<double>(prod));
    EXPECT_LT(s.alpha_hat(t), s.alpha_hat(t - 1));
    if (t > 1) {
      EXPECT_GE(s.beta(t), s.beta(t - 1));
    }
  }
}

TEST(Schedule, RejectsInvalidConstruction) {
  EXPECT_THROW(build_schedule(100, 1e-4, 0.05, 10, 9), std::invalid_argument);
  EXPECT_THROW(build_schedule(10, 0.0, 0.05, 10, 1), std::invalid_argument);
  EXPECT_THROW(build_schedule(10, 1e-4, 1.0, 10, 1), std::invalid_argument);
  EXPECT_THROW(build_schedule(10, 0.2, 0.1, 10, 1), std::invalid_argument);
  EXPECT_THROW(DiffusionSchedule({0.1, 0.05}, 2, 1), std::invalid_argument);
}

TEST(ForwardStep, ZeroNoiseLimit) {
  const DiffusionSchedule s({1e-12}, 1, 1);
  const MatrixD prev = random_matrix(3, 4, 1), eps = random_matrix(3, 4, 2);
  EXPECT_LE(max_abs_diff(forward_step(prev, 1, eps, s), prev), 1e-5);
}

TEST(ForwardStep, PureNoiseLimit) {
  const DiffusionSchedule s({1.0 - 1e-12}, 1, 1);
  const MatrixD eps = random_matrix(3, 4, 2);
  EXPECT_LE(max_abs_diff(forward_step(MatrixD(3, 4), 1, eps, s), eps), 1e-5);
}

TEST(ForwardStep, ScalarHandEvaluation) {
  const DiffusionSchedule s({0.19}, 1, 1);
  const MatrixD out = forward_step(MatrixD{{1.0}}, 1, MatrixD{{2.0}}, s);
  EXPECT_NEAR(out(0, 0), 0.9 + std::sqrt(0.19) * 2.0, 1e-15);
  EXPECT_NEAR(out(0, 0), 1.77178, 1e-5);
}

TEST(ForwardStep, RejectsBadInputs) {
  const auto s = default_schedule();
  EXPECT_THROW(forward_step(MatrixD(2, 2), 1, MatrixD(2, 3), s), ShapeError);
  EXPECT_THROW(forward_step(MatrixD(2, 2), 0, MatrixD(2, 2), s), std::out_of_range);
  EXPECT_THROW(forward_step(MatrixD(2, 2), 101, MatrixD(2, 2), s), std::out_of_range);
}

TEST(QSample, StepZeroReturnsCleanExactly) {
  const MatrixD h0 = random_matrix(4, 5, 3), eps = random_matrix(4, 5, 4);
  EXPECT_EQ(q_sample(h0, 0, eps, default_schedule()), h0);
}

TEST(QSample, LongScheduleTerminalIsNoise) {
  const auto s = build_schedule(1000, 1e-4, 0.05, 100, 10);
  ASSERT_LT(s.alpha_hat(1000), 1e-10);
  const MatrixD h0 = random_matrix(4, 5, 3), eps = random_matrix(4, 5, 4);
  EXPECT_LE(max_abs_diff(q_sample(h0, 1000, eps, s), eps), 1e-5);
}

TEST(QSample, RejectsStepOutOfRange) {
  EXPECT_THROW(q_sample(MatrixD(2, 2), -1, MatrixD(2, 2), default_schedule()), std::out_of_range);
  EXPECT_THROW(q_sample(MatrixD(2, 2), 101, MatrixD(2, 2), default_schedule()), std::out_of_range);
}

TEST(QSample, InterpolatesMonotonicallyFromSignalToNoise) {
  const auto s = default_schedule();
  for (int t = 1; t <= s.steps(); ++t) {
    EXPECT_LT(std::sqrt(s.alpha_hat(t)), std::sqrt(s.alpha_hat(t - 1)));
    EXPECT_GT(std::sqrt(1 - s.alpha_hat(t)), std::sqrt(1 - s.alpha_hat(t - 1)));
  }
}

// Moment oracle from the closed form: mean sqrt(ah) H0, variance 1 - ah.
// The 0.02 mean tolerance is about two standard errors at 10k draws, so the
// draw stream is seeded.
TEST(QSample, MonteCarloMomentsMatchClosedForm) {
  const auto s = default_schedule();
  const MatrixD h0 = random_matrix(2, 2, 11, -2.0, 2.0);
  std::mt19937_64 rng(12);
  for (int t : {1, 50, 100}) {
    MatrixD sum(2, 2), sq(2, 2);
    const int n = 10000;
    for (int k = 0; k < n; ++k) {
      const MatrixD x = q_sample(h0, t, normal_matrix(2, 2, rng), s);
      for (std::size_t i = 0; i < x.size(); ++i) {
        sum[i] += x[i];
        sq[i] += x[i] * x[i];
      }
    }
    for (std::size_t i = 0; i < h0.size(); ++i) {
      const double mean = sum[i] / n, var = sq[i] / n - mean * mean;
      EXPECT_NEAR(mean, std::sqrt(s.alpha_hat(t)) * h0[i], 0.02) << "t=" << t;
      EXPECT_NEAR(var, 1 - s.alpha_hat(t), 0.05) << "t=" << t;
    }
  }
}

TEST(ForwardStep, IteratedStepsMatchQSampleMoments) {
  const auto s = default_schedule();
  const MatrixD h0 = random_matrix(2, 2, 13, -2.0, 2.0);
  std::mt19937_64 rng(14);
  const int t = 30, n = 10000;
  MatrixD sum(2, 2), sq(2, 2);
  for (int k = 0; k < n; ++k) {
    MatrixD x = h0;
    for (int j = 1; j <= t; ++j) x = forward_step(x, j, normal_matrix(2, 2, rng), s);
    for (std::size_t i = 0; i < x.size(); ++i) {
      sum[i] += x[i];
      sq[i] += x[i] * x[i];
    }
  }
  for (std::size_t i = 0; i < h0.size(); ++i) {
    const double mean = sum[i] / n, var = sq[i] / n - mean * mean;
    EXPECT_NEAR(mean, std::sqrt(s.alpha_hat(t)) * h0[i], 0.02);
    EXPECT_NEAR(var, 1 - s.alpha_hat(t), 0.05);
  }
}

TEST(Posterior, FirstStepHasZeroVariance) {
  const auto p = posterior_params(random_matrix(2, 2, 1), random_matrix(2, 2, 2), 1, default_schedule());
  EXPECT_EQ(p.variance, 0.0);
}

TEST(Posterior, ZeroNoiseEstimateScalesByInverseRootAlpha) {
  const auto s = default_schedule();
  const MatrixD ht = random_matrix(3, 3, 5);
  const auto p = posterior_params(ht, MatrixD(3, 3), 40, s);
  for (std::size_t i = 0; i < ht.size(); ++i) EXPECT_NEAR(p.mean[i], ht[i] / std::sqrt(s.alpha(40)), 1e-14);
}

// A nondecreasing schedule cannot pair alpha_t = 0.9 with alpha_hat_t = 0.72,
// so the hand case is evaluated at both steps of the (0.1, 0.2) schedule.
TEST(Posterior, ScalarHandEvaluation) {
  const DiffusionSchedule s({0.1, 0.2}, 2, 1);
  const auto p = posterior_params(MatrixD{{1.0}}, MatrixD{{1.0}}, 1, s);
  EXPECT_NEAR(p.mean(0, 0), (1 - 0.1 / std::sqrt(0.1)) / std::sqrt(0.9), 1e-14);
  const auto p2 = posterior_params(MatrixD{{1.0}}, MatrixD{{1.0}}, 2, s);
  EXPECT_NEAR(p2.mean(0, 0), (1 - 0.2 / std::sqrt(0.28)) / std::sqrt(0.8), 1e-14);
  EXPECT_NEAR(p2.variance, (1 - 0.9) / (1 - 0.72) * 0.2, 1e-14);
}

TEST(Posterior, GuardsDegenerateSchedule) {
  const DiffusionSchedule s({1e-14}, 1, 1);
  EXPECT_THROW(posterior_params(MatrixD(1, 1), MatrixD(1, 1), 1, s), std::domain_error);
}

TEST(Ddim, OracleNoiseTransportsAlongTrajectoryForAllPairs) {
  const auto s = build_schedule(10, 1e-4, 0.2, 10, 1);
  const MatrixD h0 = random_matrix(3, 4, 21, -2, 2), eps = random_matrix(3, 4, 22, -2, 2);
  for (int tc = 1; tc <= 10; ++tc)
    for (int tp = 0; tp < tc; ++tp) {
      const MatrixD out = ddim_update(q_sample(h0, tc, eps, s), eps, tc, tp, s);
      const MatrixD expected = q_sample(h0, tp, eps, s);
      EXPECT_LE(max_abs_diff(out, expected), 1e-5 * std::max(1.0, frobenius_norm(expected) / 3.0))
          << tc << "->" << tp;
    }
}

TEST(Ddim, PerfectNoiseToStepZeroRecoversClean) {
  const auto s = default_schedule();
  const MatrixD h0 = random_matrix(3, 4, 23), eps = random_matrix(3, 4, 24);
  EXPECT_LE(max_abs_diff(ddim_update(q_sample(h0, 100, eps, s), eps, 100, 0, s), h0), 1e-12);
}

TEST(Ddim, ZeroNoiseEstimateRescales) {
  const auto s = default_schedule();
  const MatrixD ht = random_matrix(3, 4, 25);
  const MatrixD out = ddim_update(ht, MatrixD(3, 4), 70, 60, s);
  const double k = std::sqrt(s.alpha_hat(60) / s.alpha_hat(70));
  for (std::size_t i = 0; i < ht.size(); ++i) EXPECT_NEAR(out[i], k * ht[i], 1e-14);
}

TEST(Ddim, DeterministicAndRejectsBadOrdering) {
  const auto s = default_schedule();
  const MatrixD ht = random_matrix(3, 4, 26), e = random_matrix(3, 4, 27);
  EXPECT_EQ(ddim_update(ht, e, 50, 40, s), ddim_update(ht, e, 50, 40, s));
  EXPECT_THROW(ddim_update(ht, e, 40, 40, s), std::out_of_range);
  EXPECT_THROW(ddim_update(ht, e, 40, 50, s), std::out_of_range);
  EXPECT_THROW(ddim_update(ht, e, 101, 50, s), std::out_of_range);
}

TEST(StrideMap, Examples) {
  EXPECT_EQ(stride_map(55, 10, 10), 6);
  EXPECT_EQ(stride_map(1, 10, 10), 1);
  EXPECT_EQ(stride_map(100, 10, 10), 10);
}

TEST(StrideMap, FullTableAgainstClampedFormula) {
  for (int i = 1; i <= 100; ++i) {
    const int expected = i <= 9 ? 1 : (i >= 90 ? 10 : i / 10 + 1);
    EXPECT_EQ(stride_map(i, 10, 10), expected) << i;
  }
}

TEST(StrideMap, NondecreasingAndSurjective) {
  for (auto [m, tn] : {std::pair{10, 10}, std::pair{4, 25}, std::pair{2, 7}, std::pair{7, 3}}) {
    std::vector<int> hits(tn + 1, 0);
    int prev = 1;
    for (int i = 1; i <= m * tn; ++i) {
      const int j = stride_map(i, m, tn);
      ASSERT_GE(j, 1);
      ASSERT_LE(j, tn);
      EXPECT_GE(j, prev);
      prev = j;
      ++hits[j];
    }
    for (int j = 1; j <= tn; ++j) EXPECT_GT(hits[j], 0) << "m=" << m << " j=" << j;
  }
}

TEST(StrideMap, UnitStrideSkipsFirstBucket) {
  for (int i = 1; i <= 5; ++i) EXPECT_EQ(stride_map(i, 1, 5), std::min(i + 1, 5));
}

}  // namespace
