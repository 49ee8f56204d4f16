#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "bevrecon/nn.hpp"
#include "bevrecon/rng.hpp"
#include "bevrecon/schedule.hpp"
#include "bevrecon/tensor.hpp"

namespace bevrecon {

/// What the denoiser predicts at one timestep: the noise estimate and the
/// per-element interpolation weight for the learned step variance.
template <typename S>
struct DenoiserOutput {
  Tensor<S> eps_hat;
  Tensor<S> var_interp;  // elementwise in [0, 1]
};

/// A denoiser bound to its conditioning; the samplers only vary (f_t, t).
template <typename S>
using DenoiseFn = std::function<DenoiserOutput<S>(const Tensor<S>& f_t, int t)>;

/// f_t = sqrt(abar_t) f_0 + sqrt(1 - abar_t) eps. The caller supplies eps so
/// the map stays deterministic and testable.
template <typename S>
Tensor<S> forward_noise(const Tensor<S>& f0, int t, const Tensor<S>& eps,
                        const NoiseSchedule& sched) {
  sched.check_t(t);
  require_same_shape(f0, eps, "forward_noise");
  const S a = static_cast<S>(std::sqrt(sched.alpha_bar(t)));
  const S b = static_cast<S>(std::sqrt(1.0 - sched.alpha_bar(t)));
  Tensor<S> out(f0.shape);
  for (int64_t i = 0; i < f0.numel(); ++i) out[i] = a * f0[i] + b * eps[i];
  return out;
}

/// Posterior mean of p(f_{t-1} | f_t) expressed through the predicted noise.
template <typename S>
Tensor<S> posterior_mean_from_eps(const Tensor<S>& ft, const Tensor<S>& eps_hat, int t,
                                  const NoiseSchedule& sched) {
  sched.check_t(t);
  require_same_shape(ft, eps_hat, "posterior_mean_from_eps");
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
  const double coef = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
  Tensor<S> mu(ft.shape);
  for (int64_t i = 0; i < ft.numel(); ++i) {
    mu[i] = static_cast<S>(inv_sqrt_alpha * (static_cast<double>(ft[i]) - coef * eps_hat[i]));
  }
  return mu;
}

/// Mean of the true posterior q(f_{t-1} | f_t, f_0).
template <typename S>
Tensor<S> true_posterior_mean(const Tensor<S>& f0, const Tensor<S>& ft, int t,
                              const NoiseSchedule& sched) {
  sched.check_t(t);
  require_same_shape(f0, ft, "true_posterior_mean");
  const double abar = sched.alpha_bar(t);
  const double abar_prev = sched.alpha_bar_prev(t);
  const double c0 = std::sqrt(abar_prev) * sched.beta(t) / (1.0 - abar);
  const double ct = std::sqrt(sched.alpha(t)) * (1.0 - abar_prev) / (1.0 - abar);
  Tensor<S> mu(f0.shape);
  for (int64_t i = 0; i < f0.numel(); ++i) {
    mu[i] = static_cast<S>(c0 * f0[i] + ct * ft[i]);
  }
  return mu;
}

/// log step variance: interpolates log beta_t (var_interp = 1) and the
/// clipped log posterior variance (var_interp = 0), elementwise.
template <typename S>
inline double model_log_variance(S var_interp, int t, const NoiseSchedule& sched) {
  const double log_beta = std::log(sched.beta(t));
  const double log_btilde = sched.posterior_log_variance_clipped(t);
  return static_cast<double>(var_interp) * log_beta +
         (1.0 - static_cast<double>(var_interp)) * log_btilde;
}

/// Noise-prediction term: mean squared error over all elements.
template <typename S>
double simple_term(const Tensor<S>& eps_hat, const Tensor<S>& eps) {
  require_same_shape(eps_hat, eps, "simple_term");
  double acc = 0.0;
  for (int64_t i = 0; i < eps.numel(); ++i) {
    const double d = static_cast<double>(eps_hat[i]) - static_cast<double>(eps[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(eps.numel());
}

/// Variational term, elementwise mean in nats. For t >= 2 this is the
/// Gaussian KL between the true posterior and the model's distribution with
/// the supplied mean; for t == 1 it is the negative Gaussian decoder
/// log-likelihood of f_0. The mean argument is taken as given: callers pass
/// the predicted mean but gradient flows only into var_interp.
template <typename S>
double vlb_term(const Tensor<S>& var_interp, const Tensor<S>& mu_p, const Tensor<S>& f0,
                const Tensor<S>& ft, int t, const NoiseSchedule& sched) {
  sched.check_t(t);
  require_same_shape(var_interp, mu_p, "vlb_term");
  require_same_shape(f0, ft, "vlb_term");
  constexpr double kLogTwoPi = 1.8378770664093454836;
  double acc = 0.0;
  if (t == 1) {
    for (int64_t i = 0; i < f0.numel(); ++i) {
      const double logv = model_log_variance(var_interp[i], t, sched);
      const double d = static_cast<double>(f0[i]) - static_cast<double>(mu_p[i]);
      acc += 0.5 * (kLogTwoPi + logv + d * d * std::exp(-logv));
    }
  } else {
    const Tensor<S> mu_q = true_posterior_mean(f0, ft, t, sched);
    const double var_q = sched.posterior_variance(t);
    const double log_var_q = std::log(var_q);
    for (int64_t i = 0; i < f0.numel(); ++i) {
      const double logv = model_log_variance(var_interp[i], t, sched);
      const double d = static_cast<double>(mu_q[i]) - static_cast<double>(mu_p[i]);
      acc += 0.5 * ((logv - log_var_q) + (var_q + d * d) * std::exp(-logv) - 1.0);
    }
  }
  return acc / static_cast<double>(f0.numel());
}

struct LossValues {
  double total = 0.0;
  double simple = 0.0;
  double vlb = 0.0;
};

/// Hybrid objective: simple + lambda * vlb, with the vlb's mean input taken
/// from the current noise prediction.
template <typename S>
LossValues training_loss(const DenoiserOutput<S>& out, const Tensor<S>& eps,
                         const Tensor<S>& f0, const Tensor<S>& ft, int t,
                         const NoiseSchedule& sched, double lambda_vlb = 1e-3) {
  if (!out.eps_hat.all_finite() || !out.var_interp.all_finite() || !eps.all_finite() ||
      !f0.all_finite() || !ft.all_finite()) {
    throw std::invalid_argument("training_loss: non-finite input");
  }
  LossValues v;
  v.simple = simple_term(out.eps_hat, eps);
  const Tensor<S> mu_p = posterior_mean_from_eps(ft, out.eps_hat, t, sched);
  v.vlb = vlb_term(out.var_interp, mu_p, f0, ft, t, sched);
  v.total = v.simple + lambda_vlb * v.vlb;
  return v;
}

/// Batched hybrid loss over row-major (B, N) matrices with one timestep per
/// row, plus the gradients the optimizer needs: d total / d eps_hat and
/// d total / d var_pre (the pre-sigmoid variance channel). The variational
/// term reads the predicted mean but its gradient flows only through the
/// variance channel.
template <typename S>
struct BatchLoss {
  LossValues values;
  nn::Mat<S> d_eps_hat;
  nn::Mat<S> d_var_pre;
};

template <typename S>
BatchLoss<S> hybrid_loss_batch(const nn::Mat<S>& eps_hat, const nn::Mat<S>& var_interp,
                               const nn::Mat<S>& eps, const nn::Mat<S>& f0,
                               const nn::Mat<S>& ft, const std::vector<int>& ts,
                               const NoiseSchedule& sched, double lambda_vlb) {
  const int batch = static_cast<int>(eps_hat.rows());
  const int64_t n = eps_hat.cols();
  BatchLoss<S> out;
  out.d_eps_hat.resize(batch, n);
  out.d_var_pre.resize(batch, n);
  double simple_acc = 0, vlb_acc = 0;
  const double inv_bn = 1.0 / (static_cast<double>(batch) * static_cast<double>(n));
  constexpr double kLogTwoPi = 1.8378770664093454836;

  for (int b = 0; b < batch; ++b) {
    const int t = ts[static_cast<size_t>(b)];
    sched.check_t(t);
    const double abar = sched.alpha_bar(t);
    const double abar_prev = sched.alpha_bar_prev(t);
    const double beta = sched.beta(t);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
    const double eps_coef = beta / std::sqrt(1.0 - abar);
    const double log_beta = std::log(beta);
    const double log_btilde = sched.posterior_log_variance_clipped(t);
    const double c0 = std::sqrt(abar_prev) * beta / (1.0 - abar);
    const double ct = std::sqrt(sched.alpha(t)) * (1.0 - abar_prev) / (1.0 - abar);
    const double var_q = sched.posterior_variance(t);
    const double log_var_q = t >= 2 ? std::log(var_q) : 0.0;

    for (int64_t i = 0; i < n; ++i) {
      const double d = static_cast<double>(eps_hat(b, i)) - static_cast<double>(eps(b, i));
      simple_acc += d * d;
      out.d_eps_hat(b, i) = static_cast<S>(2.0 * d * inv_bn);

      const double vi = var_interp(b, i);
      const double logv = vi * log_beta + (1.0 - vi) * log_btilde;
      const double exp_neg = std::exp(-logv);
      const double mu_p =
          inv_sqrt_alpha * (static_cast<double>(ft(b, i)) - eps_coef * eps_hat(b, i));
      double kl, dkl_dlogv;
      if (t >= 2) {
        const double mu_q = c0 * f0(b, i) + ct * ft(b, i);
        const double dd = mu_q - mu_p;
        kl = 0.5 * ((logv - log_var_q) + (var_q + dd * dd) * exp_neg - 1.0);
        dkl_dlogv = 0.5 * (1.0 - (var_q + dd * dd) * exp_neg);
      } else {
        const double dd = static_cast<double>(f0(b, i)) - mu_p;
        kl = 0.5 * (kLogTwoPi + logv + dd * dd * exp_neg);
        dkl_dlogv = 0.5 * (1.0 - dd * dd * exp_neg);
      }
      vlb_acc += kl;
      out.d_var_pre(b, i) = static_cast<S>(lambda_vlb * dkl_dlogv * (log_beta - log_btilde) *
                                           vi * (1.0 - vi) * inv_bn);
    }
  }
  out.values.simple = simple_acc * inv_bn;
  out.values.vlb = vlb_acc * inv_bn;
  out.values.total = out.values.simple + lambda_vlb * out.values.vlb;
  return out;
}

/// One ancestral step: sample f_{t-1} ~ N(mu_theta, Sigma_theta). The caller
/// supplies the standard-normal draw; it must be the zero tensor at t == 1.
template <typename S>
Tensor<S> ddpm_step(const DenoiseFn<S>& model, const Tensor<S>& ft, int t,
                    const NoiseSchedule& sched, const Tensor<S>& noise) {
  sched.check_t(t);
  require_same_shape(ft, noise, "ddpm_step");
  if (t == 1) {
    for (int64_t i = 0; i < noise.numel(); ++i) {
      if (noise[i] != S(0)) {
        throw std::invalid_argument("ddpm_step: noise must be zero at t == 1");
      }
    }
  }
  const DenoiserOutput<S> out = model(ft, t);
  require_same_shape(ft, out.eps_hat, "ddpm_step model output");
  if (!out.eps_hat.all_finite()) throw std::invalid_argument("ddpm_step: non-finite eps_hat");
  Tensor<S> prev = posterior_mean_from_eps(ft, out.eps_hat, t, sched);
  for (int64_t i = 0; i < prev.numel(); ++i) {
    const double logv = model_log_variance(out.var_interp[i], t, sched);
    prev[i] += static_cast<S>(std::exp(0.5 * logv) * static_cast<double>(noise[i]));
  }
  return prev;
}

/// Evenly spaced sub-sequence of `steps` timesteps spanning [1, t_diff],
/// endpoints included, returned descending.
inline std::vector<int> ddim_timesteps(int t_diff, int steps) {
  if (steps < 2 || steps > t_diff) {
    throw std::invalid_argument("steps must be in [2, t_diff]");
  }
  std::vector<int> ts(static_cast<size_t>(steps));
  for (int k = 0; k < steps; ++k) {
    const double pos = 1.0 + (static_cast<double>(t_diff) - 1.0) * k / (steps - 1);
    ts[static_cast<size_t>(steps - 1 - k)] = static_cast<int>(std::lround(pos));
  }
  return ts;
}

/// DDIM sampler over the evenly spaced sub-sequence. eta = 0 is fully
/// deterministic given (f_T, conditions); eta > 0 requires an Rng.
template <typename S>
Tensor<S> ddim_sample(const DenoiseFn<S>& model, Tensor<S> f_t, const NoiseSchedule& sched,
                      int steps, double eta = 0.0, Rng* rng = nullptr) {
  if (eta < 0.0 || eta > 1.0) throw std::invalid_argument("eta must be in [0, 1]");
  if (eta > 0.0 && rng == nullptr) {
    throw std::invalid_argument("eta > 0 requires an rng for the stochastic term");
  }
  const std::vector<int> ts = ddim_timesteps(sched.t_diff, steps);
  for (size_t k = 0; k < ts.size(); ++k) {
    const int t = ts[k];
    const int t_prev = (k + 1 < ts.size()) ? ts[k + 1] : 0;
    const DenoiserOutput<S> out = model(f_t, t);
    require_same_shape(f_t, out.eps_hat, "ddim_sample model output");
    if (!out.eps_hat.all_finite()) throw std::invalid_argument("ddim_sample: non-finite eps_hat");

    const double abar = sched.alpha_bar(t);
    const double abar_prev = (t_prev == 0) ? 1.0 : sched.alpha_bar(t_prev);
    const double sigma =
        eta * std::sqrt((1.0 - abar_prev) / (1.0 - abar)) * std::sqrt(1.0 - abar / abar_prev);
    const double dir_coef_sq = 1.0 - abar_prev - sigma * sigma;
    const double dir_coef = std::sqrt(dir_coef_sq < 0.0 ? 0.0 : dir_coef_sq);
    const double inv_sqrt_abar = 1.0 / std::sqrt(abar);
    const double sqrt_one_minus_abar = std::sqrt(1.0 - abar);
    const double sqrt_abar_prev = std::sqrt(abar_prev);

    for (int64_t i = 0; i < f_t.numel(); ++i) {
      const double e = static_cast<double>(out.eps_hat[i]);
      const double x0 = (static_cast<double>(f_t[i]) - sqrt_one_minus_abar * e) * inv_sqrt_abar;
      double next = sqrt_abar_prev * x0 + dir_coef * e;
      if (sigma > 0.0) next += sigma * rng->normal();
      f_t[i] = static_cast<S>(next);
    }
  }
  return f_t;
}

}  // namespace bevrecon
