#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "bevrecon/config.hpp"
#include "bevrecon/diffusion.hpp"
#include "bevrecon/nn.hpp"
#include "bevrecon/rng.hpp"
#include "bevrecon/tensor.hpp"

namespace bevrecon {

struct GridShape {
  int h = 0;
  int w = 0;
  int c = 0;

  int cells() const { return h * w; }
  int64_t elems() const { return static_cast<int64_t>(h) * w * c; }
  bool operator==(const GridShape&) const = default;
};

/// The assembled conditioning bundle consumed by the transformer blocks:
/// embedded timestep, embedded geometry, and the two semantic vectors.
template <typename S>
struct ConditionSet {
  nn::Vec<S> t_emb;  // length d
  nn::Vec<S> g;      // length d
  nn::Vec<S> v_c;    // length L, recovered from the wire at inference time
  nn::Vec<S> v_e;    // length L, computed locally
};

/// (B, H*W*ch) rows -> (B*T, ph*pw*ch) token pixel rows, tokens ordered
/// row-major over the patch grid, pixel vector ordered (i, j, channel).
template <typename S>
nn::Mat<S> patchify_pixels(const nn::Mat<S>& x, int h, int w, int ch, int ph, int pw) {
  if (h % ph != 0 || w % pw != 0) {
    throw std::invalid_argument("patchify: grid not divisible by patch size");
  }
  const int th = h / ph, tw = w / pw;
  const int batch = static_cast<int>(x.rows());
  const int patch = ph * pw * ch;
  nn::Mat<S> out(static_cast<Eigen::Index>(batch) * th * tw, patch);
  for (int b = 0; b < batch; ++b) {
    const S* src = x.row(b).data();
    for (int pr = 0; pr < th; ++pr) {
      for (int pc = 0; pc < tw; ++pc) {
        S* dst = out.row((static_cast<Eigen::Index>(b) * th + pr) * tw + pc).data();
        for (int i = 0; i < ph; ++i) {
          const int row = pr * ph + i;
          for (int j = 0; j < pw; ++j) {
            const int col = pc * pw + j;
            const S* cell = src + (static_cast<int64_t>(row) * w + col) * ch;
            S* to = dst + (i * pw + j) * ch;
            for (int k = 0; k < ch; ++k) to[k] = cell[k];
          }
        }
      }
    }
  }
  return out;
}

/// Exact inverse of patchify_pixels.
template <typename S>
nn::Mat<S> unpatchify_pixels(const nn::Mat<S>& tokens, int h, int w, int ch, int ph, int pw,
                             int batch) {
  const int th = h / ph, tw = w / pw;
  nn::Mat<S> out(batch, static_cast<Eigen::Index>(h) * w * ch);
  for (int b = 0; b < batch; ++b) {
    S* dst = out.row(b).data();
    for (int pr = 0; pr < th; ++pr) {
      for (int pc = 0; pc < tw; ++pc) {
        const S* src = tokens.row((static_cast<Eigen::Index>(b) * th + pr) * tw + pc).data();
        for (int i = 0; i < ph; ++i) {
          const int row = pr * ph + i;
          for (int j = 0; j < pw; ++j) {
            const int col = pc * pw + j;
            S* cell = dst + (static_cast<int64_t>(row) * w + col) * ch;
            const S* from = src + (i * pw + j) * ch;
            for (int k = 0; k < ch; ++k) cell[k] = from[k];
          }
        }
      }
    }
  }
  return out;
}

/// Shared-weight encoder producing the semantic vector v from a BEV feature:
/// three stride-2 convolutions, flatten, two-layer MLP to a fixed-width code,
/// then the linear bottleneck adapter to length L.
template <typename S>
class SemanticExtractor {
 public:
  void init(nn::ParamStore<S>& ps, const std::string& prefix, GridShape grid,
            const DenoiserConfig& cfg, Rng& rng) {
    grid_ = grid;
    cfg_ = cfg;
    c1_.init(ps, prefix + ".conv1", grid.h, grid.w, grid.c, cfg.se_c1, 3, 2, 1, rng);
    c2_.init(ps, prefix + ".conv2", c1_.out_h(), c1_.out_w(), cfg.se_c1, cfg.se_c2, 3, 2, 1, rng);
    c3_.init(ps, prefix + ".conv3", c2_.out_h(), c2_.out_w(), cfg.se_c2, cfg.se_c3, 3, 2, 1, rng);
    const int flat = c3_.out_h() * c3_.out_w() * cfg.se_c3;
    fc1_.init(ps, prefix + ".fc1", flat, cfg.code_width, rng);
    fc2_.init(ps, prefix + ".fc2", cfg.code_width, cfg.code_width, rng);
    bottleneck_.init(ps, prefix + ".bottleneck", cfg.code_width, cfg.semantic_len, rng);
  }

  /// features: (N, H*W*C) rows -> (N, L).
  nn::Mat<S> forward(const nn::Mat<S>& features, bool cache = true) {
    auto act = [](nn::Mat<S>& m) { m = m.unaryExpr([](S v) { return nn::silu(v); }); };
    nn::Mat<S> h1 = c1_.forward(features, cache);
    if (cache) h1_pre_ = h1;
    act(h1);
    nn::Mat<S> h2 = c2_.forward(h1, cache);
    if (cache) h2_pre_ = h2;
    act(h2);
    nn::Mat<S> h3 = c3_.forward(h2, cache);
    if (cache) h3_pre_ = h3;
    act(h3);
    nn::Mat<S> f1 = fc1_.forward(h3, cache);
    if (cache) f1_pre_ = f1;
    act(f1);
    nn::Mat<S> code = fc2_.forward(f1, cache);
    if (cache) code_ = code;
    return bottleneck_.forward(code, cache);
  }

  nn::Mat<S> backward(const nn::Mat<S>& d_v) {
    nn::Mat<S> d = bottleneck_.backward(d_v);
    d = fc2_.backward(d);
    d.array() *= f1_pre_.unaryExpr([](S v) { return nn::dsilu(v); }).array();
    d = fc1_.backward(d);
    d.array() *= h3_pre_.unaryExpr([](S v) { return nn::dsilu(v); }).array();
    d = c3_.backward(d);
    d.array() *= h2_pre_.unaryExpr([](S v) { return nn::dsilu(v); }).array();
    d = c2_.backward(d);
    d.array() *= h1_pre_.unaryExpr([](S v) { return nn::dsilu(v); }).array();
    return c1_.backward(d);
  }

  /// Pre-bottleneck code from the last cached forward.
  const nn::Mat<S>& last_code() const { return code_; }

 private:
  GridShape grid_;
  DenoiserConfig cfg_;
  nn::Conv2d<S> c1_, c2_, c3_;
  nn::Linear<S> fc1_, fc2_, bottleneck_;
  nn::Mat<S> h1_pre_, h2_pre_, h3_pre_, f1_pre_, code_;
};

namespace detail {

/// One transformer block with adaLN-Zero conditioning. The modulation layer
/// regresses shift/scale/gate for both branches from silu(c); weights and
/// bias start at zero so the block is the identity at initialization.
template <typename S>
class DitBlock {
 public:
  void init(nn::ParamStore<S>& ps, const std::string& prefix, int dim, int heads, int mlp_hidden,
            Rng& rng) {
    dim_ = dim;
    attn_.init(ps, prefix + ".attn", dim, heads, rng);
    mlp_.init(ps, prefix + ".mlp", dim, mlp_hidden, dim, rng);
    adaln_.init(ps, prefix + ".adaln", dim, 6 * dim, rng, nn::Init::kZero);
  }

  nn::Mat<S> forward(const nn::Mat<S>& x, const nn::Mat<S>& c_silu, int batch, int tokens,
                     bool cache = true) {
    batch_ = batch;
    tokens_ = tokens;
    const nn::Mat<S> mod = adaln_.forward(c_silu, cache);

    nn::Mat<S> h1 = ln1_.forward(x, cache);
    if (cache) xhat1_ = h1;
    modulate(h1, mod, 0, 1);
    nn::Mat<S> a = attn_.forward(h1, batch, tokens, cache);
    if (cache) attn_out_ = a;
    gate(a, mod, 2);
    nn::Mat<S> x2 = x + a;

    nn::Mat<S> h2 = ln2_.forward(x2, cache);
    if (cache) xhat2_ = h2;
    modulate(h2, mod, 3, 4);
    nn::Mat<S> m = mlp_.forward(h2, cache);
    if (cache) mlp_out_ = m;
    gate(m, mod, 5);
    if (cache) mod_ = mod;
    return x2 + m;
  }

  /// dy -> dx; the modulation-input gradient is accumulated into d_c_silu.
  nn::Mat<S> backward(const nn::Mat<S>& dy, nn::Mat<S>& d_c_silu) {
    nn::Mat<S> d_mod = nn::Mat<S>::Zero(batch_, 6 * dim_);

    // MLP branch.
    nn::Mat<S> d_m = dy;
    gate_backward(d_m, mlp_out_, d_mod, 5);
    nn::Mat<S> d_h2 = mlp_.backward(d_m);
    modulate_backward(d_h2, xhat2_, d_mod, 3, 4);
    nn::Mat<S> d_x2 = dy + ln2_.backward(d_h2);

    // Attention branch.
    nn::Mat<S> d_a = d_x2;
    gate_backward(d_a, attn_out_, d_mod, 2);
    nn::Mat<S> d_h1 = attn_.backward(d_a);
    modulate_backward(d_h1, xhat1_, d_mod, 0, 1);
    nn::Mat<S> dx = d_x2 + ln1_.backward(d_h1);

    d_c_silu += adaln_.backward(d_mod);
    return dx;
  }

 private:
  // y = y * (1 + scale_b) + shift_b with per-sample rows broadcast over tokens.
  void modulate(nn::Mat<S>& y, const nn::Mat<S>& mod, int shift_slot, int scale_slot) const {
    for (int b = 0; b < batch_; ++b) {
      const auto shift = mod.row(b).segment(shift_slot * dim_, dim_);
      const auto scale = mod.row(b).segment(scale_slot * dim_, dim_);
      for (int t = 0; t < tokens_; ++t) {
        auto row = y.row(static_cast<Eigen::Index>(b) * tokens_ + t);
        row.array() = row.array() * (scale.array() + S(1)) + shift.array();
      }
    }
  }

  // In-place: given dy at the modulated output and the cached normalized
  // input, produce dy at the normalized input and accumulate d shift/scale.
  void modulate_backward(nn::Mat<S>& dy, const nn::Mat<S>& xhat, nn::Mat<S>& d_mod,
                         int shift_slot, int scale_slot) const {
    for (int b = 0; b < batch_; ++b) {
      auto d_shift = d_mod.row(b).segment(shift_slot * dim_, dim_);
      auto d_scale = d_mod.row(b).segment(scale_slot * dim_, dim_);
      const auto scale = mod_.row(b).segment(scale_slot * dim_, dim_);
      for (int t = 0; t < tokens_; ++t) {
        const Eigen::Index r = static_cast<Eigen::Index>(b) * tokens_ + t;
        d_shift += dy.row(r);
        d_scale += dy.row(r).cwiseProduct(xhat.row(r));
        dy.row(r).array() *= scale.array() + S(1);
      }
    }
  }

  void gate(nn::Mat<S>& y, const nn::Mat<S>& mod, int gate_slot) const {
    for (int b = 0; b < batch_; ++b) {
      const auto g = mod.row(b).segment(gate_slot * dim_, dim_);
      for (int t = 0; t < tokens_; ++t) {
        y.row(static_cast<Eigen::Index>(b) * tokens_ + t).array() *= g.array();
      }
    }
  }

  void gate_backward(nn::Mat<S>& dy, const nn::Mat<S>& branch, nn::Mat<S>& d_mod,
                     int gate_slot) const {
    for (int b = 0; b < batch_; ++b) {
      auto d_g = d_mod.row(b).segment(gate_slot * dim_, dim_);
      const auto g = mod_.row(b).segment(gate_slot * dim_, dim_);
      for (int t = 0; t < tokens_; ++t) {
        const Eigen::Index r = static_cast<Eigen::Index>(b) * tokens_ + t;
        d_g += dy.row(r).cwiseProduct(branch.row(r));
        dy.row(r) = dy.row(r).cwiseProduct(g);
      }
    }
  }

  int dim_ = 0, batch_ = 0, tokens_ = 0;
  nn::LayerNorm<S> ln1_, ln2_;
  nn::SelfAttention<S> attn_;
  nn::Mlp<S> mlp_;
  nn::Linear<S> adaln_;
  nn::Mat<S> mod_, xhat1_, xhat2_, attn_out_, mlp_out_;
};

}  // namespace detail

/// The conditional denoiser: ego/noised-co concatenation, patchify with fixed
/// 2-D sin/cos positions, adaLN-Zero transformer blocks, and a zero-initialized
/// final projection producing (eps_hat, variance-interpolation pre-activation).
template <typename S>
class DiffusionTransformer {
 public:
  void init(nn::ParamStore<S>& ps, const std::string& prefix, GridShape grid,
            const DenoiserConfig& cfg, Rng& rng) {
    cfg.validate();
    if (grid.h % cfg.patch_h != 0 || grid.w % cfg.patch_w != 0) {
      throw std::invalid_argument("grid not divisible by patch size");
    }
    grid_ = grid;
    cfg_ = cfg;
    th_ = grid.h / cfg.patch_h;
    tw_ = grid.w / cfg.patch_w;
    const int d = cfg.hidden_dim;
    const int patch = cfg.patch_h * cfg.patch_w * 2 * grid.c;

    patch_embed_.init(ps, prefix + ".patch_embed", patch, d, rng);
    pos_embed_ = nn::sincos_2d_positions<S>(d, th_, tw_);
    t_fc1_.init(ps, prefix + ".t_embed.fc1", d, d, rng, nn::Init::kNormal002);
    t_fc2_.init(ps, prefix + ".t_embed.fc2", d, d, rng, nn::Init::kNormal002);
    ge_fc1_.init(ps, prefix + ".geom_embed.fc1", 3, d, rng);
    ge_fc2_.init(ps, prefix + ".geom_embed.fc2", d, d, rng);
    sem_expand_.init(ps, prefix + ".sem_expand", cfg.semantic_len, cfg.code_width, rng);
    sem_proj_.init(ps, prefix + ".sem_proj", cfg.code_width, d, rng);
    blocks_.resize(static_cast<size_t>(cfg.depth));
    for (int i = 0; i < cfg.depth; ++i) {
      blocks_[static_cast<size_t>(i)].init(ps, prefix + ".blocks." + std::to_string(i), d,
                                           cfg.heads, cfg.mlp_hidden(), rng);
    }
    final_adaln_.init(ps, prefix + ".final.adaln", d, 2 * d, rng, nn::Init::kZero);
    final_linear_.init(ps, prefix + ".final.linear", d, patch, rng, nn::Init::kZero);
  }

  int tokens() const { return th_ * tw_; }
  int token_rows() const { return th_; }
  int token_cols() const { return tw_; }
  const nn::Mat<S>& positional_embedding() const { return pos_embed_; }
  const GridShape& grid() const { return grid_; }

  struct Out {
    nn::Mat<S> eps_hat;     // (B, H*W*C)
    nn::Mat<S> var_pre;     // (B, H*W*C)
    nn::Mat<S> var_interp;  // sigmoid(var_pre)
  };

  /// Batched forward. f_e, ft_c: (B, H*W*C); delta: (B, 3); v_c, v_e: (B, L).
  Out forward(const nn::Mat<S>& f_e, const nn::Mat<S>& ft_c, const std::vector<int>& ts,
              const nn::Mat<S>& delta, const nn::Mat<S>& v_c, const nn::Mat<S>& v_e,
              bool cache = true) {
    const int B = static_cast<int>(f_e.rows());
    if (ft_c.rows() != B || delta.rows() != B || v_c.rows() != B || v_e.rows() != B ||
        static_cast<int>(ts.size()) != B) {
      throw std::invalid_argument("denoiser forward: batch size mismatch");
    }
    if (f_e.cols() != grid_.elems() || ft_c.cols() != grid_.elems()) {
      throw std::invalid_argument("denoiser forward: feature size mismatch");
    }
    if (v_c.cols() != cfg_.semantic_len || v_e.cols() != cfg_.semantic_len) {
      throw std::invalid_argument("denoiser forward: semantic length mismatch");
    }
    batch_ = B;
    const int d = cfg_.hidden_dim;
    const int T = tokens();

    // Channel concatenation [f_e || ft_c] per cell.
    nn::Mat<S> x2c(B, static_cast<Eigen::Index>(grid_.cells()) * 2 * grid_.c);
    for (int b = 0; b < B; ++b) {
      const S* e = f_e.row(b).data();
      const S* n = ft_c.row(b).data();
      S* dst = x2c.row(b).data();
      for (int cell = 0; cell < grid_.cells(); ++cell) {
        for (int k = 0; k < grid_.c; ++k) dst[cell * 2 * grid_.c + k] = e[cell * grid_.c + k];
        for (int k = 0; k < grid_.c; ++k) {
          dst[cell * 2 * grid_.c + grid_.c + k] = n[cell * grid_.c + k];
        }
      }
    }

    nn::Mat<S> pixels = patchify_pixels(x2c, grid_.h, grid_.w, 2 * grid_.c, cfg_.patch_h,
                                        cfg_.patch_w);
    nn::Mat<S> x = patch_embed_.forward(pixels, cache);
    for (int b = 0; b < B; ++b) {
      x.middleRows(static_cast<Eigen::Index>(b) * T, T) += pos_embed_;
    }

    // Condition vector c = t_emb + g + P(v_c) (+ P(v_e)).
    nn::Mat<S> t_freq(B, d);
    for (int b = 0; b < B; ++b) {
      t_freq.row(b) = nn::timestep_frequency_embedding<S>(ts[static_cast<size_t>(b)], d).transpose();
    }
    nn::Mat<S> t_h = t_fc1_.forward(t_freq, cache);
    if (cache) t_h_pre_ = t_h;
    t_h = t_h.unaryExpr([](S v) { return nn::silu(v); });
    const nn::Mat<S> t_emb = t_fc2_.forward(t_h, cache);

    nn::Mat<S> g_h = ge_fc1_.forward(delta, cache);
    if (cache) g_h_pre_ = g_h;
    g_h = g_h.unaryExpr([](S v) { return nn::silu(v); });
    const nn::Mat<S> g_emb = ge_fc2_.forward(g_h, cache);

    nn::Mat<S> v_stack(2 * B, cfg_.semantic_len);
    v_stack.topRows(B) = v_c;
    v_stack.bottomRows(B) = v_e;
    const nn::Mat<S> sem_code = sem_expand_.forward(v_stack, cache);
    const nn::Mat<S> sem_d = sem_proj_.forward(sem_code, cache);

    nn::Mat<S> c = t_emb + g_emb + sem_d.topRows(B);
    if (cfg_.use_ego_semantic) c += sem_d.bottomRows(B);
    if (cache) c_pre_ = c;
    nn::Mat<S> c_silu = c.unaryExpr([](S v) { return nn::silu(v); });
    if (cache) c_silu_ = c_silu;

    for (auto& block : blocks_) x = block.forward(x, c_silu, B, T, cache);

    const nn::Mat<S> mod_f = final_adaln_.forward(c_silu, cache);
    if (cache) final_mod_ = mod_f;
    nn::Mat<S> hf = final_ln_.forward(x, cache);
    if (cache) final_xhat_ = hf;
    for (int b = 0; b < B; ++b) {
      const auto shift = mod_f.row(b).segment(0, d);
      const auto scale = mod_f.row(b).segment(d, d);
      for (int t = 0; t < T; ++t) {
        auto row = hf.row(static_cast<Eigen::Index>(b) * T + t);
        row.array() = row.array() * (scale.array() + S(1)) + shift.array();
      }
    }
    const nn::Mat<S> out_tok = final_linear_.forward(hf, cache);
    const nn::Mat<S> out2c = unpatchify_pixels(out_tok, grid_.h, grid_.w, 2 * grid_.c,
                                               cfg_.patch_h, cfg_.patch_w, B);

    Out out;
    out.eps_hat.resize(B, grid_.elems());
    out.var_pre.resize(B, grid_.elems());
    for (int b = 0; b < B; ++b) {
      const S* src = out2c.row(b).data();
      S* de = out.eps_hat.row(b).data();
      S* dv = out.var_pre.row(b).data();
      for (int cell = 0; cell < grid_.cells(); ++cell) {
        for (int k = 0; k < grid_.c; ++k) {
          de[cell * grid_.c + k] = src[cell * 2 * grid_.c + k];
          dv[cell * grid_.c + k] = src[cell * 2 * grid_.c + grid_.c + k];
        }
      }
    }
    out.var_interp = out.var_pre.unaryExpr([](S v) { return nn::sigmoid(v); });
    return out;
  }

  struct InputGrads {
    nn::Mat<S> d_v_c;  // (B, L)
    nn::Mat<S> d_v_e;
  };

  /// Backward from gradients at eps_hat and at the variance pre-activation.
  InputGrads backward(const nn::Mat<S>& d_eps_hat, const nn::Mat<S>& d_var_pre) {
    const int B = batch_;
    const int d = cfg_.hidden_dim;
    const int T = tokens();

    nn::Mat<S> d_out2c(B, static_cast<Eigen::Index>(grid_.cells()) * 2 * grid_.c);
    for (int b = 0; b < B; ++b) {
      S* dst = d_out2c.row(b).data();
      const S* de = d_eps_hat.row(b).data();
      const S* dv = d_var_pre.row(b).data();
      for (int cell = 0; cell < grid_.cells(); ++cell) {
        for (int k = 0; k < grid_.c; ++k) {
          dst[cell * 2 * grid_.c + k] = de[cell * grid_.c + k];
          dst[cell * 2 * grid_.c + grid_.c + k] = dv[cell * grid_.c + k];
        }
      }
    }
    nn::Mat<S> d_tok = patchify_pixels(d_out2c, grid_.h, grid_.w, 2 * grid_.c, cfg_.patch_h,
                                       cfg_.patch_w);
    nn::Mat<S> d_hf = final_linear_.backward(d_tok);

    nn::Mat<S> d_mod_f = nn::Mat<S>::Zero(B, 2 * d);
    for (int b = 0; b < B; ++b) {
      auto d_shift = d_mod_f.row(b).segment(0, d);
      auto d_scale = d_mod_f.row(b).segment(d, d);
      const auto scale = final_mod_.row(b).segment(d, d);
      for (int t = 0; t < T; ++t) {
        const Eigen::Index r = static_cast<Eigen::Index>(b) * T + t;
        d_shift += d_hf.row(r);
        d_scale += d_hf.row(r).cwiseProduct(final_xhat_.row(r));
        d_hf.row(r).array() *= scale.array() + S(1);
      }
    }
    nn::Mat<S> d_c_silu = final_adaln_.backward(d_mod_f);
    nn::Mat<S> dx = final_ln_.backward(d_hf);

    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
      dx = it->backward(dx, d_c_silu);
    }

    // Token path ends at the patch embedding; input gradients are not needed.
    patch_embed_.backward(dx);

    // Condition path.
    nn::Mat<S> d_c =
        d_c_silu.array() * c_pre_.unaryExpr([](S v) { return nn::dsilu(v); }).array();

    nn::Mat<S> d_t_h = t_fc2_.backward(d_c);
    d_t_h.array() *= t_h_pre_.unaryExpr([](S v) { return nn::dsilu(v); }).array();
    t_fc1_.backward(d_t_h);

    nn::Mat<S> d_g_h = ge_fc2_.backward(d_c);
    d_g_h.array() *= g_h_pre_.unaryExpr([](S v) { return nn::dsilu(v); }).array();
    ge_fc1_.backward(d_g_h);

    nn::Mat<S> d_sem_d = nn::Mat<S>::Zero(2 * B, d);
    d_sem_d.topRows(B) = d_c;
    if (cfg_.use_ego_semantic) d_sem_d.bottomRows(B) = d_c;
    const nn::Mat<S> d_sem_code = sem_proj_.backward(d_sem_d);
    const nn::Mat<S> d_v_stack = sem_expand_.backward(d_sem_code);

    InputGrads grads;
    grads.d_v_c = d_v_stack.topRows(B);
    grads.d_v_e = d_v_stack.bottomRows(B);
    return grads;
  }

  /// Single-sample condition embedding, for introspection and tests.
  ConditionSet<S> embed_conditions(int t, const std::array<float, 3>& delta,
                                   const nn::Vec<S>& v_c, const nn::Vec<S>& v_e) {
    const int d = cfg_.hidden_dim;
    nn::Mat<S> t_freq(1, d);
    t_freq.row(0) = nn::timestep_frequency_embedding<S>(t, d).transpose();
    nn::Mat<S> t_h = t_fc1_.forward(t_freq, false);
    t_h = t_h.unaryExpr([](S v) { return nn::silu(v); });

    nn::Mat<S> dmat(1, 3);
    dmat << static_cast<S>(delta[0]), static_cast<S>(delta[1]), static_cast<S>(delta[2]);
    nn::Mat<S> g_h = ge_fc1_.forward(dmat, false);
    g_h = g_h.unaryExpr([](S v) { return nn::silu(v); });

    ConditionSet<S> cs;
    cs.t_emb = t_fc2_.forward(t_h, false).row(0).transpose();
    cs.g = ge_fc2_.forward(g_h, false).row(0).transpose();
    cs.v_c = v_c;
    cs.v_e = v_e;
    return cs;
  }

  /// Geometry embedder alone: delta -> g (length d).
  nn::Vec<S> embed_geometry(const std::array<float, 3>& delta) {
    for (float v : delta) {
      if (!std::isfinite(v)) throw std::invalid_argument("embed_geometry: non-finite delta");
    }
    nn::Mat<S> dmat(1, 3);
    dmat << static_cast<S>(delta[0]), static_cast<S>(delta[1]), static_cast<S>(delta[2]);
    nn::Mat<S> h = ge_fc1_.forward(dmat, false);
    h = h.unaryExpr([](S v) { return nn::silu(v); });
    return ge_fc2_.forward(h, false).row(0).transpose();
  }

 private:
  GridShape grid_;
  DenoiserConfig cfg_;
  int th_ = 0, tw_ = 0;
  int batch_ = 0;

  nn::Linear<S> patch_embed_;
  nn::Mat<S> pos_embed_;
  nn::Linear<S> t_fc1_, t_fc2_;
  nn::Linear<S> ge_fc1_, ge_fc2_;
  nn::Linear<S> sem_expand_, sem_proj_;
  std::vector<detail::DitBlock<S>> blocks_;
  nn::LayerNorm<S> final_ln_;
  nn::Linear<S> final_adaln_, final_linear_;

  nn::Mat<S> t_h_pre_, g_h_pre_, c_pre_, c_silu_, final_mod_, final_xhat_;
};

/// The full trainable bundle: denoiser plus shared semantic extractor, all
/// parameters in one named store.
template <typename S>
class Model {
 public:
  Model(const DenoiserConfig& cfg, GridShape grid, uint64_t init_seed)
      : cfg_(cfg), grid_(grid) {
    Rng rng(init_seed);
    net.init(params, "dit", grid, cfg, rng);
    se.init(params, "se", grid, cfg, rng);
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const DenoiserConfig& config() const { return cfg_; }
  const GridShape& grid() const { return grid_; }

  /// Independent copy with identical parameters. Concurrent inference should
  /// use one instance per thread; forward passes keep per-instance scratch.
  std::unique_ptr<Model> clone() const {
    auto copy = std::make_unique<Model>(cfg_, grid_, 0);
    for (size_t i = 0; i < params.size(); ++i) {
      copy->params.entries()[i].value = params.entries()[i].value;
    }
    return copy;
  }

  /// Semantic vector of a single feature tensor.
  nn::Vec<S> extract_semantic(const Tensor<S>& f) {
    if (f.rank() != 3 || f.shape[0] != grid_.h || f.shape[1] != grid_.w ||
        f.shape[2] != grid_.c) {
      throw std::invalid_argument("extract_semantic: feature shape mismatch");
    }
    nn::Mat<S> row(1, grid_.elems());
    for (int64_t i = 0; i < f.numel(); ++i) row(0, i) = f[i];
    return se.forward(row, false).row(0).transpose();
  }

  /// Single-sample denoiser evaluation.
  DenoiserOutput<S> denoise(const Tensor<S>& ft_c, const Tensor<S>& f_e, int t,
                            const std::array<float, 3>& delta, const nn::Vec<S>& v_c,
                            const nn::Vec<S>& v_e) {
    require_same_shape(ft_c, f_e, "denoise");
    nn::Mat<S> fe_row(1, grid_.elems()), ft_row(1, grid_.elems());
    for (int64_t i = 0; i < f_e.numel(); ++i) {
      fe_row(0, i) = f_e[i];
      ft_row(0, i) = ft_c[i];
    }
    nn::Mat<S> dmat(1, 3);
    dmat << static_cast<S>(delta[0]), static_cast<S>(delta[1]), static_cast<S>(delta[2]);
    nn::Mat<S> vc(1, v_c.size()), ve(1, v_e.size());
    vc.row(0) = v_c.transpose();
    ve.row(0) = v_e.transpose();
    auto out = net.forward(fe_row, ft_row, {t}, dmat, vc, ve, false);

    DenoiserOutput<S> res;
    res.eps_hat = Tensor<S>({grid_.h, grid_.w, grid_.c});
    res.var_interp = Tensor<S>({grid_.h, grid_.w, grid_.c});
    for (int64_t i = 0; i < res.eps_hat.numel(); ++i) {
      res.eps_hat[i] = out.eps_hat(0, i);
      res.var_interp[i] = out.var_interp(0, i);
    }
    return res;
  }

  /// Denoiser bound to fixed conditioning, for the samplers. Copies the
  /// conditioning so the returned callable owns everything it needs.
  DenoiseFn<S> bind(Tensor<S> f_e, std::array<float, 3> delta, nn::Vec<S> v_c, nn::Vec<S> v_e) {
    return [this, f_e = std::move(f_e), delta, v_c = std::move(v_c),
            v_e = std::move(v_e)](const Tensor<S>& ft, int t) {
      return denoise(ft, f_e, t, delta, v_c, v_e);
    };
  }

  DenoiserConfig cfg_;
  GridShape grid_;
  nn::ParamStore<S> params;
  DiffusionTransformer<S> net;
  SemanticExtractor<S> se;
};

/// Initializes a model for a smaller semantic length from a trained source:
/// every parameter is copied except the two latent adapters (the extractor's
/// bottleneck and the condition-side expansion), which are freshly seeded for
/// the new length. new_len == source length degenerates to an exact copy.
template <typename S>
std::unique_ptr<Model<S>> distill_init(const Model<S>& source, int new_semantic_len,
                                       uint64_t seed) {
  if (new_semantic_len <= 0) throw std::invalid_argument("semantic length must be positive");
  if (new_semantic_len > source.config().semantic_len) {
    throw std::invalid_argument("distill_init: new semantic length exceeds the source length");
  }
  DenoiserConfig cfg = source.config();
  cfg.semantic_len = new_semantic_len;
  auto target = std::make_unique<Model<S>>(cfg, source.grid(), seed);
  const bool copy_adapters = new_semantic_len == source.config().semantic_len;
  for (auto& e : target->params.entries()) {
    const bool is_adapter = e.name.rfind("se.bottleneck.", 0) == 0 ||
                            e.name.rfind("dit.sem_expand.", 0) == 0;
    if (is_adapter && !copy_adapters) continue;
    const int src = source.params.find(e.name);
    if (src < 0) throw std::invalid_argument("distill_init: missing source parameter " + e.name);
    e.value = source.params.at(src).value;
  }
  return target;
}

}  // namespace bevrecon
