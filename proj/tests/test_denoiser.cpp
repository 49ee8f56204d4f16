#include "bevrecon/denoiser.hpp"

#include <gtest/gtest.h>

#include "bevrecon/diffusion.hpp"
#include "support/test_util.hpp"

namespace bevrecon {
namespace {

using MatD = nn::Mat<double>;
using bevrecon::testing::fd_check;
using bevrecon::testing::jitter_params;
using bevrecon::testing::snapshot_grads;
using bevrecon::testing::tiny_denoiser_config;
using bevrecon::testing::tiny_grid;

MatD random_mat(int rows, int cols, uint64_t seed) {
  Rng rng(seed);
  MatD m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

TEST(Patchify, TokenCountMatchesGridGeometry) {
  // Full-scale geometry: 352x96 with 16x8 patches -> 22x12 = 264 tokens.
  const MatD x = MatD::Zero(1, 352 * 96 * 2);
  const MatD tokens = patchify_pixels(x, 352, 96, 2, 16, 8);
  EXPECT_EQ(tokens.rows(), 264);
  EXPECT_EQ(tokens.cols(), 16 * 8 * 2);

  // Toy geometry preserves the same token grid: 44x24 with 2x2 -> 264.
  const MatD y = MatD::Zero(3, 44 * 24 * 8);
  const MatD toy = patchify_pixels(y, 44, 24, 8, 2, 2);
  EXPECT_EQ(toy.rows(), 3 * 264);
}

TEST(Patchify, UnpatchifyIsExactInverse) {
  const MatD x = random_mat(2, 6 * 4 * 3, 42);
  const MatD tokens = patchify_pixels(x, 6, 4, 3, 2, 2);
  const MatD back = unpatchify_pixels(tokens, 6, 4, 3, 2, 2, 2);
  ASSERT_EQ(back.rows(), x.rows());
  ASSERT_EQ(back.cols(), x.cols());
  EXPECT_TRUE((back.array() == x.array()).all());
}

TEST(Patchify, RejectsIndivisibleGrid) {
  const MatD x = MatD::Zero(1, 5 * 4 * 2);
  EXPECT_THROW(patchify_pixels(x, 5, 4, 2, 2, 2), std::invalid_argument);
}

TEST(Denoiser, IdentityAtInitAndConditionInvariant) {
  Model<double> model(tiny_denoiser_config(), tiny_grid(), 7);
  const auto grid = tiny_grid();
  const MatD f_e = random_mat(2, grid.elems(), 1);
  const MatD ft = random_mat(2, grid.elems(), 2);
  const MatD delta1 = random_mat(2, 3, 3), delta2 = random_mat(2, 3, 30);
  const MatD vc1 = random_mat(2, 4, 4), vc2 = random_mat(2, 4, 40);
  const MatD ve1 = random_mat(2, 4, 5), ve2 = random_mat(2, 4, 50);

  const auto out1 = model.net.forward(f_e, ft, {3, 9}, delta1, vc1, ve1, false);
  EXPECT_EQ(out1.eps_hat.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_TRUE((out1.var_interp.array() == 0.5).all());

  const auto out2 = model.net.forward(f_e, ft, {5, 2}, delta2, vc2, ve2, false);
  EXPECT_LT((out1.eps_hat - out2.eps_hat).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((out1.var_pre - out2.var_pre).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Denoiser, OutputShapeMatchesInput) {
  Model<double> model(tiny_denoiser_config(), tiny_grid(), 8);
  jitter_params(model.params, 11);
  const auto grid = tiny_grid();
  const auto out = model.net.forward(random_mat(3, grid.elems(), 1), random_mat(3, grid.elems(), 2),
                                     {1, 5, 9}, random_mat(3, 3, 3), random_mat(3, 4, 4),
                                     random_mat(3, 4, 5), false);
  EXPECT_EQ(out.eps_hat.rows(), 3);
  EXPECT_EQ(out.eps_hat.cols(), grid.elems());
  EXPECT_EQ(out.var_interp.rows(), 3);
  EXPECT_TRUE((out.var_interp.array() >= 0.0).all());
  EXPECT_TRUE((out.var_interp.array() <= 1.0).all());
}

TEST(GeometryEmbedder, DeterministicAndSizedD) {
  Model<double> model(tiny_denoiser_config(), tiny_grid(), 9);
  jitter_params(model.params, 12);
  const std::array<float, 3> delta{1.5f, -2.0f, 0.f};
  const auto g1 = model.net.embed_geometry(delta);
  const auto g2 = model.net.embed_geometry(delta);
  EXPECT_EQ(g1.size(), tiny_denoiser_config().hidden_dim);
  EXPECT_TRUE((g1.array() == g2.array()).all());
  EXPECT_THROW(model.net.embed_geometry({std::nanf(""), 0.f, 0.f}), std::invalid_argument);
}

TEST(GeometryEmbedder, MatchesIndependentTwoLayerForward) {
  Model<double> model(tiny_denoiser_config(), tiny_grid(), 10);
  jitter_params(model.params, 13);
  const auto g = model.net.embed_geometry({0.f, 0.f, 0.f});

  // Independent forward from the raw parameters: silu(b1) through layer 2.
  const auto& ps = model.params;
  const auto& w1 = ps.at(ps.find("dit.geom_embed.fc1.weight")).value;
  const auto& b1 = ps.at(ps.find("dit.geom_embed.fc1.bias")).value;
  const auto& w2 = ps.at(ps.find("dit.geom_embed.fc2.weight")).value;
  const auto& b2 = ps.at(ps.find("dit.geom_embed.fc2.bias")).value;
  ASSERT_EQ(w1.cols(), 3);
  nn::Vec<double> h(w1.rows());
  for (Eigen::Index i = 0; i < h.size(); ++i) {
    const double pre = b1(0, i);  // delta = 0, so only the bias path remains
    h(i) = pre / (1.0 + std::exp(-pre));
  }
  for (Eigen::Index o = 0; o < w2.rows(); ++o) {
    double acc = b2(0, o);
    for (Eigen::Index i = 0; i < h.size(); ++i) acc += w2(o, i) * h(i);
    EXPECT_NEAR(g(o), acc, 1e-6);
  }
}

TEST(SemanticExtractor, SharedWeightsAreLabelBlind) {
  Model<double> model(tiny_denoiser_config(), tiny_grid(), 14);
  jitter_params(model.params, 15);
  const MatD a = random_mat(1, tiny_grid().elems(), 16);
  const MatD b = random_mat(1, tiny_grid().elems(), 17);
  MatD ab(2, a.cols()), ba(2, a.cols());
  ab.row(0) = a.row(0);
  ab.row(1) = b.row(0);
  ba.row(0) = b.row(0);
  ba.row(1) = a.row(0);
  const MatD v_ab = model.se.forward(ab, false);
  const MatD v_ba = model.se.forward(ba, false);
  EXPECT_TRUE((v_ab.row(0).array() == v_ba.row(1).array()).all());
  EXPECT_TRUE((v_ab.row(1).array() == v_ba.row(0).array()).all());
}

TEST(SemanticExtractor, SingleParameterSetInStore) {
  Model<double> model(tiny_denoiser_config(), tiny_grid(), 18);
  int bottlenecks = 0;
  for (const auto& e : model.params.entries()) {
    EXPECT_TRUE(e.name.rfind("dit.", 0) == 0 || e.name.rfind("se.", 0) == 0) << e.name;
    if (e.name.find("bottleneck.weight") != std::string::npos) ++bottlenecks;
  }
  EXPECT_EQ(bottlenecks, 1);
}

TEST(SemanticExtractor, IdentityBottleneckExposesCode) {
  DenoiserConfig cfg = tiny_denoiser_config();
  cfg.semantic_len = cfg.code_width;  // square bottleneck
  Model<double> model(cfg, tiny_grid(), 19);
  jitter_params(model.params, 20);
  auto& bw = model.params.at(model.params.find("se.bottleneck.weight")).value;
  auto& bb = model.params.at(model.params.find("se.bottleneck.bias")).value;
  bw.setIdentity();
  bb.setZero();
  const MatD f = random_mat(1, tiny_grid().elems(), 21);
  const MatD v = model.se.forward(f, true);
  EXPECT_LT((v - model.se.last_code()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(DistillInit, CopiesEverythingButAdapters) {
  Model<double> source(tiny_denoiser_config(), tiny_grid(), 22);
  jitter_params(source.params, 23);
  const auto target = distill_init(source, 2, 24);
  EXPECT_EQ(target->config().semantic_len, 2);
  int fresh = 0;
  int64_t source_count = 0, target_count = 0;
  for (const auto& e : target->params.entries()) {
    const int src = source.params.find(e.name);
    ASSERT_GE(src, 0) << e.name;
    const auto& sv = source.params.at(src).value;
    target_count += e.value.size();
    const bool adapter = e.name.rfind("se.bottleneck.", 0) == 0 ||
                         e.name.rfind("dit.sem_expand.", 0) == 0;
    if (adapter) {
      ++fresh;
    } else {
      ASSERT_EQ(sv.rows(), e.value.rows()) << e.name;
      ASSERT_EQ(sv.cols(), e.value.cols()) << e.name;
      EXPECT_TRUE((sv.array() == e.value.array()).all()) << e.name;
    }
  }
  for (const auto& e : source.params.entries()) source_count += e.value.size();
  EXPECT_EQ(fresh, 4);  // two adapter layers, weight + bias each
  // The size delta is exactly the two adapter layers: the expansion weight
  // (code x L), the bottleneck weight (L x code), and the bottleneck bias (L).
  const int code = tiny_denoiser_config().code_width;
  const int l_old = tiny_denoiser_config().semantic_len, l_new = 2;
  EXPECT_EQ(source_count - target_count,
            static_cast<int64_t>(2 * code + 1) * (l_old - l_new));
}

TEST(DistillInit, DegenerateCopyAndErrors) {
  Model<double> source(tiny_denoiser_config(), tiny_grid(), 25);
  jitter_params(source.params, 26);
  const auto same = distill_init(source, tiny_denoiser_config().semantic_len, 27);
  for (const auto& e : same->params.entries()) {
    const auto& sv = source.params.at(source.params.find(e.name)).value;
    EXPECT_TRUE((sv.array() == e.value.array()).all()) << e.name;
  }
  EXPECT_THROW(distill_init(source, tiny_denoiser_config().semantic_len + 1, 28),
               std::invalid_argument);
}

// Finite-difference check of the full hybrid loss through the transformer.
// The variational term's mean input is held at its base-point value so the
// finite differences see the same function the mean-detached gradient
// defines.
struct FdProblem {
  GridShape grid = tiny_grid();
  NoiseSchedule sched = build_schedule(20, 1e-3, 0.2);
  int batch = 2;
  std::vector<int> ts{1, 7};
  double lambda = 0.5;
  MatD f_e, f0, eps, ft, delta, v_c, v_e;

  FdProblem() {
    f_e = random_mat(batch, grid.elems(), 100);
    f0 = random_mat(batch, grid.elems(), 101);
    eps = random_mat(batch, grid.elems(), 102);
    ft.resize(batch, grid.elems());
    for (int b = 0; b < batch; ++b) {
      const double abar = sched.alpha_bar(ts[static_cast<size_t>(b)]);
      ft.row(b) = std::sqrt(abar) * f0.row(b) + std::sqrt(1.0 - abar) * eps.row(b);
    }
    delta = random_mat(batch, 3, 103);
    v_c = random_mat(batch, 4, 104);
    v_e = random_mat(batch, 4, 105);
  }

  // Independent loss evaluation used as the finite-difference oracle.
  double frozen_loss(Model<double>& model, const MatD& mu_bar, bool through_se) const {
    MatD vc = v_c, ve = v_e;
    if (through_se) {
      MatD stack(2 * batch, grid.elems());
      stack.topRows(batch) = f0;
      stack.bottomRows(batch) = f_e;
      const MatD v = model.se.forward(stack, false);
      vc = v.topRows(batch);
      ve = v.bottomRows(batch);
    }
    const auto out = model.net.forward(f_e, ft, ts, delta, vc, ve, false);
    double simple = 0, vlb = 0;
    const int64_t n = grid.elems();
    for (int b = 0; b < batch; ++b) {
      const int t = ts[static_cast<size_t>(b)];
      const double log_beta = std::log(sched.beta(t));
      const double log_btilde = sched.posterior_log_variance_clipped(t);
      const double abar_prev = sched.alpha_bar_prev(t);
      const double abar = sched.alpha_bar(t);
      const double c0 = std::sqrt(abar_prev) * sched.beta(t) / (1.0 - abar);
      const double ct = std::sqrt(sched.alpha(t)) * (1.0 - abar_prev) / (1.0 - abar);
      const double var_q = sched.posterior_variance(t);
      for (int64_t i = 0; i < n; ++i) {
        const double de = out.eps_hat(b, i) - eps(b, i);
        simple += de * de;
        const double vi = out.var_interp(b, i);
        const double logv = vi * log_beta + (1.0 - vi) * log_btilde;
        if (t >= 2) {
          const double dd = c0 * f0(b, i) + ct * ft(b, i) - mu_bar(b, i);
          vlb += 0.5 * ((logv - std::log(var_q)) + (var_q + dd * dd) * std::exp(-logv) - 1.0);
        } else {
          const double dd = f0(b, i) - mu_bar(b, i);
          vlb += 0.5 * (1.8378770664093454836 + logv + dd * dd * std::exp(-logv));
        }
      }
    }
    const double inv = 1.0 / (static_cast<double>(batch) * static_cast<double>(n));
    return simple * inv + lambda * vlb * inv;
  }

  MatD base_mean(Model<double>& model, bool through_se) const {
    MatD vc = v_c, ve = v_e;
    if (through_se) {
      MatD stack(2 * batch, grid.elems());
      stack.topRows(batch) = f0;
      stack.bottomRows(batch) = f_e;
      const MatD v = model.se.forward(stack, false);
      vc = v.topRows(batch);
      ve = v.bottomRows(batch);
    }
    const auto out = model.net.forward(f_e, ft, ts, delta, vc, ve, false);
    MatD mu(batch, grid.elems());
    for (int b = 0; b < batch; ++b) {
      const int t = ts[static_cast<size_t>(b)];
      const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(t));
      const double eps_coef = sched.beta(t) / std::sqrt(1.0 - sched.alpha_bar(t));
      for (int64_t i = 0; i < grid.elems(); ++i) {
        mu(b, i) = inv_sqrt_alpha * (ft(b, i) - eps_coef * out.eps_hat(b, i));
      }
    }
    return mu;
  }
};

TEST(Denoiser, HybridLossGradientsMatchFiniteDifferences) {
  Model<double> model(tiny_denoiser_config(), tiny_grid(), 30);
  jitter_params(model.params, 31);
  FdProblem prob;

  // Transformer parameters stay within the tiny budget.
  int64_t dit_params = 0;
  for (const auto& e : model.params.entries()) {
    if (e.name.rfind("dit.", 0) == 0) dit_params += e.value.size();
  }
  EXPECT_LE(dit_params, 2000);

  // Analytic gradients with v_c, v_e as fixed inputs.
  model.params.zero_grad();
  const auto out = model.net.forward(prob.f_e, prob.ft, prob.ts, prob.delta, prob.v_c, prob.v_e,
                                     true);
  const auto loss = hybrid_loss_batch<double>(out.eps_hat, out.var_interp, prob.eps, prob.f0,
                                              prob.ft, prob.ts, prob.sched, prob.lambda);
  model.net.backward(loss.d_eps_hat, loss.d_var_pre);
  auto analytic = snapshot_grads(model.params);
  // The SE was not part of this graph; its gradient entries stay zero and
  // its parameters are not probed.
  const MatD mu_bar = prob.base_mean(model, false);
  double base = prob.frozen_loss(model, mu_bar, false);
  EXPECT_NEAR(base, loss.values.total, 1e-10);

  nn::ParamStore<double>& ps = model.params;
  double max_rel = 0;
  std::string worst;
  for (size_t p = 0; p < ps.size(); ++p) {
    auto& entry = ps.entries()[p];
    if (entry.name.rfind("se.", 0) == 0) continue;
    for (Eigen::Index i = 0; i < entry.value.size(); ++i) {
      double& theta = entry.value.data()[i];
      const double saved = theta;
      const double h = 1e-5 * std::max(1.0, std::fabs(saved));
      theta = saved + h;
      const double lp = prob.frozen_loss(model, mu_bar, false);
      theta = saved - h;
      const double lm = prob.frozen_loss(model, mu_bar, false);
      theta = saved;
      const double fd = (lp - lm) / (2 * h);
      const double an = analytic[p].data()[i];
      const double rel = std::fabs(fd - an) / std::max(std::fabs(fd) + std::fabs(an), 1e-6);
      if (rel > max_rel) {
        max_rel = rel;
        worst = entry.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  EXPECT_LT(max_rel, 1e-4) << worst;
}

TEST(SemanticExtractor, GradientsThroughConditionPathMatchFiniteDifferences) {
  Model<double> model(tiny_denoiser_config(), tiny_grid(), 33);
  jitter_params(model.params, 34);
  FdProblem prob;

  model.params.zero_grad();
  MatD stack(2 * prob.batch, prob.grid.elems());
  stack.topRows(prob.batch) = prob.f0;
  stack.bottomRows(prob.batch) = prob.f_e;
  const MatD v = model.se.forward(stack, true);
  const auto out = model.net.forward(prob.f_e, prob.ft, prob.ts, prob.delta,
                                     v.topRows(prob.batch), v.bottomRows(prob.batch), true);
  const auto loss = hybrid_loss_batch<double>(out.eps_hat, out.var_interp, prob.eps, prob.f0,
                                              prob.ft, prob.ts, prob.sched, prob.lambda);
  const auto grads = model.net.backward(loss.d_eps_hat, loss.d_var_pre);
  MatD d_v(2 * prob.batch, model.config().semantic_len);
  d_v.topRows(prob.batch) = grads.d_v_c;
  d_v.bottomRows(prob.batch) = grads.d_v_e;
  model.se.backward(d_v);
  auto analytic = snapshot_grads(model.params);

  const MatD mu_bar = prob.base_mean(model, true);
  nn::ParamStore<double>& ps = model.params;
  double max_rel = 0;
  std::string worst;
  for (size_t p = 0; p < ps.size(); ++p) {
    auto& entry = ps.entries()[p];
    if (entry.name.rfind("se.", 0) != 0) continue;  // SE parameters only
    for (Eigen::Index i = 0; i < entry.value.size(); ++i) {
      double& theta = entry.value.data()[i];
      const double saved = theta;
      const double h = 1e-5 * std::max(1.0, std::fabs(saved));
      theta = saved + h;
      const double lp = prob.frozen_loss(model, mu_bar, true);
      theta = saved - h;
      const double lm = prob.frozen_loss(model, mu_bar, true);
      theta = saved;
      const double fd = (lp - lm) / (2 * h);
      const double an = analytic[p].data()[i];
      const double rel = std::fabs(fd - an) / std::max(std::fabs(fd) + std::fabs(an), 1e-6);
      if (rel > max_rel) {
        max_rel = rel;
        worst = entry.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  EXPECT_LT(max_rel, 1e-4) << worst;
}

}  // namespace
}  // namespace bevrecon
