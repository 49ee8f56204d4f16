#include "bevrecon/nn.hpp"

#include <gtest/gtest.h>

#include "support/test_util.hpp"

namespace bevrecon {
namespace {

using MatD = nn::Mat<double>;
using bevrecon::testing::fd_check;
using bevrecon::testing::snapshot_grads;

MatD random_mat(int rows, int cols, uint64_t seed) {
  Rng rng(seed);
  MatD m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

double half_sq(const MatD& m) { return 0.5 * m.array().square().sum(); }

TEST(Linear, FiniteDifferenceGradients) {
  nn::ParamStore<double> ps;
  nn::Linear<double> lin;
  Rng rng(1);
  lin.init(ps, "lin", 3, 5, rng);
  const MatD x = random_mat(4, 3, 2);

  auto loss = [&] { return half_sq(lin.forward(x, false)); };
  ps.zero_grad();
  MatD y = lin.forward(x);
  lin.backward(y);  // d(0.5 y^2)/dy = y
  const auto report = fd_check<double>(ps, snapshot_grads(ps), loss);
  EXPECT_LT(report.max_rel, 1e-6) << report.worst_param;
}

TEST(LayerNorm, FiniteDifferenceInputGradient) {
  nn::LayerNorm<double> ln;
  const MatD x = random_mat(3, 6, 3);
  MatD y = ln.forward(x);
  const MatD dx = ln.backward(y);  // loss = 0.5 ||ln(x)||^2

  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      MatD xp = x, xm = x;
      const double h = 1e-6;
      xp(r, c) += h;
      xm(r, c) -= h;
      nn::LayerNorm<double> probe;
      const double lp = half_sq(probe.forward(xp, false));
      const double lm = half_sq(probe.forward(xm, false));
      const double fd = (lp - lm) / (2 * h);
      EXPECT_NEAR(fd, dx(r, c), 1e-5 * std::max(1.0, std::fabs(fd)));
    }
  }
}

TEST(SelfAttention, FiniteDifferenceGradients) {
  nn::ParamStore<double> ps;
  nn::SelfAttention<double> attn;
  Rng rng(4);
  attn.init(ps, "attn", 6, 2, rng);
  const int batch = 2, tokens = 3;
  const MatD x = random_mat(batch * tokens, 6, 5);

  auto loss = [&] { return half_sq(attn.forward(x, batch, tokens, false)); };
  ps.zero_grad();
  MatD y = attn.forward(x, batch, tokens);
  attn.backward(y);
  // The K-projection bias has an exactly-zero gradient (softmax shift
  // invariance); the relative metric there measures only FD roundoff, so the
  // bound is looser than for the other layers.
  const auto report = fd_check<double>(ps, snapshot_grads(ps), loss);
  EXPECT_LT(report.max_rel, 5e-4) << report.worst_param;
}

TEST(Mlp, FiniteDifferenceGradients) {
  nn::ParamStore<double> ps;
  nn::Mlp<double> mlp;
  Rng rng(6);
  mlp.init(ps, "mlp", 4, 8, 4, rng);
  const MatD x = random_mat(5, 4, 7);

  auto loss = [&] { return half_sq(mlp.forward(x, false)); };
  ps.zero_grad();
  MatD y = mlp.forward(x);
  mlp.backward(y);
  const auto report = fd_check<double>(ps, snapshot_grads(ps), loss);
  EXPECT_LT(report.max_rel, 1e-5) << report.worst_param;
}

TEST(Conv2d, MatchesNaiveConvolution) {
  nn::ParamStore<double> ps;
  nn::Conv2d<double> conv;
  Rng rng(8);
  const int h = 5, w = 4, cin = 2, cout = 3, k = 3, stride = 2, pad = 1;
  conv.init(ps, "conv", h, w, cin, cout, k, stride, pad, rng);
  const MatD x = random_mat(2, h * w * cin, 9);
  const MatD y = conv.forward(x, false);

  const auto& weight = ps.at(ps.find("conv.weight")).value;  // (cout, k*k*cin)
  const auto& bias = ps.at(ps.find("conv.bias")).value;
  const int oh = conv.out_h(), ow = conv.out_w();
  ASSERT_EQ(y.cols(), oh * ow * cout);
  for (int b = 0; b < 2; ++b) {
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        for (int oc = 0; oc < cout; ++oc) {
          double acc = bias(0, oc);
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const int iy = i * stride - pad + ky;
              const int ix = j * stride - pad + kx;
              if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
              for (int ci = 0; ci < cin; ++ci) {
                acc += weight(oc, (ky * k + kx) * cin + ci) * x(b, (iy * w + ix) * cin + ci);
              }
            }
          }
          EXPECT_NEAR(y(b, (i * ow + j) * cout + oc), acc, 1e-12);
        }
      }
    }
  }
}

TEST(Conv2d, FiniteDifferenceGradients) {
  nn::ParamStore<double> ps;
  nn::Conv2d<double> conv;
  Rng rng(10);
  conv.init(ps, "conv", 4, 4, 2, 3, 3, 2, 1, rng);
  const MatD x = random_mat(2, 4 * 4 * 2, 11);

  auto loss = [&] { return half_sq(conv.forward(x, false)); };
  ps.zero_grad();
  MatD y = conv.forward(x);
  conv.backward(y);
  const auto report = fd_check<double>(ps, snapshot_grads(ps), loss);
  EXPECT_LT(report.max_rel, 1e-5) << report.worst_param;
}

TEST(PositionalEmbedding, OriginTokenIsInputIndependent) {
  const auto pe = nn::sincos_2d_positions<double>(8, 3, 4);
  ASSERT_EQ(pe.rows(), 12);
  ASSERT_EQ(pe.cols(), 8);
  // Row 0 = token (0,0): all sine entries 0, all cosine entries 1.
  for (int half = 0; half < 2; ++half) {
    const int base = half * 4;
    EXPECT_DOUBLE_EQ(pe(0, base + 0), 0.0);
    EXPECT_DOUBLE_EQ(pe(0, base + 1), 0.0);
    EXPECT_DOUBLE_EQ(pe(0, base + 2), 1.0);
    EXPECT_DOUBLE_EQ(pe(0, base + 3), 1.0);
  }
  // Distinct positions get distinct embeddings.
  EXPECT_GT((pe.row(1) - pe.row(0)).norm(), 1e-6);
  EXPECT_GT((pe.row(4) - pe.row(0)).norm(), 1e-6);
}

TEST(AdamW, DescendsQuadratic) {
  nn::ParamStore<double> ps;
  const int h = ps.add("theta", 1, 4);
  ps.at(h).value << 1.0, -2.0, 3.0, -4.0;
  nn::AdamW<double> opt(0.05);
  for (int i = 0; i < 400; ++i) {
    ps.zero_grad();
    ps.at(h).grad = ps.at(h).value;  // d(0.5 theta^2)
    opt.step(ps);
  }
  EXPECT_LT(ps.at(h).value.norm(), 1e-2);
}

TEST(ParamStore, DuplicateNameRejected) {
  nn::ParamStore<double> ps;
  ps.add("a", 1, 1);
  EXPECT_THROW(ps.add("a", 1, 1), std::invalid_argument);
}

}  // namespace
}  // namespace bevrecon
