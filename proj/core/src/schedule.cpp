#include "bevrecon/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace bevrecon {

double NoiseSchedule::posterior_log_variance_clipped(int t) const {
  check_t(t);
  if (t == 1) return std::log(posterior_variance(2));
  return std::log(posterior_variance(t));
}

void NoiseSchedule::check_t(int t) const {
  if (t < 1 || t > t_diff) {
    throw std::invalid_argument("timestep " + std::to_string(t) + " outside [1, " +
                                std::to_string(t_diff) + "]");
  }
}

NoiseSchedule build_schedule(int t_diff, double beta_start, double beta_end) {
  if (t_diff < 2) throw std::invalid_argument("t_diff must be >= 2");
  if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0)) {
    throw std::invalid_argument("require 0 < beta_start < beta_end < 1");
  }
  NoiseSchedule s;
  s.t_diff = t_diff;
  s.betas.resize(static_cast<size_t>(t_diff));
  s.alphas.resize(static_cast<size_t>(t_diff));
  s.alpha_bars.resize(static_cast<size_t>(t_diff));
  double prod = 1.0;
  for (int i = 0; i < t_diff; ++i) {
    const double beta = beta_start + (beta_end - beta_start) * i / (t_diff - 1);
    s.betas[static_cast<size_t>(i)] = beta;
    s.alphas[static_cast<size_t>(i)] = 1.0 - beta;
    prod *= 1.0 - beta;
    s.alpha_bars[static_cast<size_t>(i)] = prod;
  }
  return s;
}

}  // namespace bevrecon
