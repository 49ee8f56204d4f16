#pragma once

#include <vector>

namespace bevrecon {

/// Per-timestep coefficients of the Gaussian forward process. Timesteps are
/// 1-indexed: t in [1, t_diff]. All coefficients are kept in double so the
/// running products hold to ~1e-15 relative.
struct NoiseSchedule {
  int t_diff = 0;
  std::vector<double> betas;       // beta_t, strictly increasing in (0,1)
  std::vector<double> alphas;      // 1 - beta_t
  std::vector<double> alpha_bars;  // running product of alphas

  double beta(int t) const { return betas[static_cast<size_t>(t - 1)]; }
  double alpha(int t) const { return alphas[static_cast<size_t>(t - 1)]; }
  double alpha_bar(int t) const { return alpha_bars[static_cast<size_t>(t - 1)]; }
  /// alpha_bar_{t-1}, defined as 1 for t == 1.
  double alpha_bar_prev(int t) const {
    return t <= 1 ? 1.0 : alpha_bars[static_cast<size_t>(t - 2)];
  }
  /// Posterior variance beta~_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t.
  double posterior_variance(int t) const {
    return (1.0 - alpha_bar_prev(t)) / (1.0 - alpha_bar(t)) * beta(t);
  }
  /// log beta~_t with the t=1 value clipped to beta~_2 (beta~_1 is zero).
  double posterior_log_variance_clipped(int t) const;

  void check_t(int t) const;  // throws std::invalid_argument when out of range
};

/// Linear beta interpolation between beta_start and beta_end over t_diff
/// steps. Requires t_diff >= 2 and 0 < beta_start < beta_end < 1.
NoiseSchedule build_schedule(int t_diff, double beta_start = 1e-4, double beta_end = 2e-2);

}  // namespace bevrecon
