#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "bevrecon/config.hpp"
#include "bevrecon/denoiser.hpp"
#include "bevrecon/nn.hpp"
#include "bevrecon/rng.hpp"

namespace bevrecon::testing {

/// Tiny fp64 denoiser configuration used by the finite-difference checks.
/// The transformer side stays under 2,000 scalars.
inline DenoiserConfig tiny_denoiser_config() {
  DenoiserConfig cfg;
  cfg.patch_h = 2;
  cfg.patch_w = 2;
  cfg.hidden_dim = 8;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.semantic_len = 4;
  cfg.code_width = 16;
  cfg.mlp_ratio = 2.0;
  cfg.se_c1 = 2;
  cfg.se_c2 = 2;
  cfg.se_c3 = 2;
  return cfg;
}

inline GridShape tiny_grid() { return GridShape{4, 4, 1}; }

/// Moves every parameter off its initialization point so all gradient paths
/// (adaLN gates included) are live.
template <typename S>
void jitter_params(nn::ParamStore<S>& ps, uint64_t seed, double scale = 0.05) {
  Rng rng(seed);
  for (auto& e : ps.entries()) {
    for (Eigen::Index i = 0; i < e.value.size(); ++i) {
      e.value.data()[i] += static_cast<S>(rng.normal() * scale);
    }
  }
}

struct FdReport {
  double max_rel = 0;
  std::string worst_param;
  int64_t checked = 0;
};

/// Central finite differences over every scalar in the store against
/// pre-collected analytic gradients. loss_fn() must evaluate the objective
/// at the store's current values.
template <typename S>
FdReport fd_check(nn::ParamStore<S>& ps, const std::vector<nn::Mat<S>>& analytic,
                  const std::function<double()>& loss_fn, double h_base = 1e-5) {
  FdReport report;
  for (size_t p = 0; p < ps.size(); ++p) {
    auto& entry = ps.entries()[p];
    for (Eigen::Index i = 0; i < entry.value.size(); ++i) {
      S& theta = entry.value.data()[i];
      const S saved = theta;
      const double h = h_base * std::max(1.0, std::fabs(static_cast<double>(saved)));
      theta = saved + static_cast<S>(h);
      const double lp = loss_fn();
      theta = saved - static_cast<S>(h);
      const double lm = loss_fn();
      theta = saved;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = static_cast<double>(analytic[p].data()[i]);
      const double rel = std::fabs(fd - an) / std::max(std::fabs(fd) + std::fabs(an), 1e-6);
      ++report.checked;
      if (rel > report.max_rel) {
        report.max_rel = rel;
        report.worst_param = entry.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

template <typename S>
std::vector<nn::Mat<S>> snapshot_grads(const nn::ParamStore<S>& ps) {
  std::vector<nn::Mat<S>> out;
  out.reserve(ps.size());
  for (const auto& e : ps.entries()) out.push_back(e.grad);
  return out;
}

}  // namespace bevrecon::testing
