#include "bevrecon/schedule.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace bevrecon {
namespace {

TEST(Schedule, FirstAlphaBar) {
  const NoiseSchedule s = build_schedule(1000, 1e-4, 2e-2);
  EXPECT_NEAR(s.alpha_bar(1), 0.9999, 1e-12);
}

TEST(Schedule, Monotonicity) {
  const NoiseSchedule s = build_schedule(1000, 1e-4, 2e-2);
  for (int t = 2; t <= s.t_diff; ++t) {
    EXPECT_LT(s.beta(t - 1), s.beta(t));
    EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
  }
  for (int t = 1; t <= s.t_diff; ++t) {
    EXPECT_GT(s.beta(t), 0.0);
    EXPECT_LT(s.beta(t), 1.0);
    EXPECT_GT(s.alpha_bar(t), 0.0);
    EXPECT_LT(s.alpha_bar(t), 1.0);
  }
}

TEST(Schedule, RunningProductIdentity) {
  const NoiseSchedule s = build_schedule(1000, 1e-4, 2e-2);
  long double prod = 1.0L;
  for (int t = 1; t <= s.t_diff; ++t) {
    prod *= static_cast<long double>(s.alpha(t));
    const double rel =
        std::fabs(static_cast<double>(prod) - s.alpha_bar(t)) / s.alpha_bar(t);
    EXPECT_LE(rel, 1e-12) << "t=" << t;
  }
}

TEST(Schedule, TerminalAlphaBarRegression) {
  const NoiseSchedule s = build_schedule(1000, 1e-4, 2e-2);
  // Regression constant from an independent cumulative-product evaluation.
  EXPECT_NEAR(s.alpha_bar(1000), 4.035829765376e-05, 4.0e-14);
  EXPECT_LT(s.alpha_bar(1000), 1e-4);
  EXPECT_NEAR(s.alpha_bar(500), 7.858724288178e-02, 1e-10);
}

TEST(Schedule, PreconditionErrors) {
  EXPECT_THROW(build_schedule(1, 1e-4, 2e-2), std::invalid_argument);
  EXPECT_THROW(build_schedule(10, 0.0, 2e-2), std::invalid_argument);
  EXPECT_THROW(build_schedule(10, 2e-2, 1e-4), std::invalid_argument);
  EXPECT_THROW(build_schedule(10, 1e-4, 1.0), std::invalid_argument);
}

TEST(Schedule, PosteriorVarianceAndClipping) {
  const NoiseSchedule s = build_schedule(100, 1e-4, 2e-2);
  EXPECT_DOUBLE_EQ(s.posterior_variance(1), 0.0);
  EXPECT_DOUBLE_EQ(s.posterior_log_variance_clipped(1),
                   std::log(s.posterior_variance(2)));
  for (int t = 2; t <= 100; ++t) {
    EXPECT_GT(s.posterior_variance(t), 0.0);
    EXPECT_LT(s.posterior_variance(t), s.beta(t));
  }
  EXPECT_THROW(s.check_t(0), std::invalid_argument);
  EXPECT_THROW(s.check_t(101), std::invalid_argument);
}

}  // namespace
}  // namespace bevrecon
