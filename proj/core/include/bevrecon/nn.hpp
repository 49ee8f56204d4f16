#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "bevrecon/rng.hpp"

namespace bevrecon::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------------------
// Parameter registry. Every learnable tensor lives here under a dot-separated
// name; layers keep integer handles. Grads are accumulated in place.
// ---------------------------------------------------------------------------

template <typename S>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    std::vector<int> dims;  // logical shape for serialization
    Mat<S> value;
    Mat<S> grad;
  };

  int add(const std::string& name, int rows, int cols, std::vector<int> dims = {}) {
    if (by_name_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    Entry e;
    e.name = name;
    e.dims = dims.empty() ? std::vector<int>{rows, cols} : std::move(dims);
    e.value = Mat<S>::Zero(rows, cols);
    e.grad = Mat<S>::Zero(rows, cols);
    by_name_[name] = static_cast<int>(entries_.size());
    entries_.push_back(std::move(e));
    return static_cast<int>(entries_.size()) - 1;
  }

  Entry& at(int handle) { return entries_[static_cast<size_t>(handle)]; }
  const Entry& at(int handle) const { return entries_[static_cast<size_t>(handle)]; }

  int find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? -1 : it->second;
  }

  size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  void zero_grad() {
    for (auto& e : entries_) e.grad.setZero();
  }

  int64_t scalar_count() const {
    int64_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, int> by_name_;
};

// ---------------------------------------------------------------------------
// Activations.
// ---------------------------------------------------------------------------

template <typename S>
inline S sigmoid(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

template <typename S>
inline S silu(S x) {
  return x * sigmoid(x);
}

template <typename S>
inline S dsilu(S x) {
  const S s = sigmoid(x);
  return s * (S(1) + x * (S(1) - s));
}

template <typename S>
inline S gelu_tanh(S x) {
  const S k = S(0.7978845608028654);  // sqrt(2/pi)
  const S inner = k * (x + S(0.044715) * x * x * x);
  return S(0.5) * x * (S(1) + std::tanh(inner));
}

template <typename S>
inline S dgelu_tanh(S x) {
  const S k = S(0.7978845608028654);
  const S x2 = x * x;
  const S inner = k * (x + S(0.044715) * x * x2);
  const S th = std::tanh(inner);
  const S sech2 = S(1) - th * th;
  return S(0.5) * (S(1) + th) + S(0.5) * x * sech2 * k * (S(1) + S(3) * S(0.044715) * x2);
}

// ---------------------------------------------------------------------------
// Initializers.
// ---------------------------------------------------------------------------

enum class Init { kXavierUniform, kNormal002, kZero };

template <typename S>
void init_matrix(Mat<S>& m, Init kind, int fan_in, int fan_out, Rng& rng) {
  switch (kind) {
    case Init::kXavierUniform: {
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
          m(i, j) = static_cast<S>(rng.uniform(-limit, limit));
        }
      }
      break;
    }
    case Init::kNormal002:
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
          m(i, j) = static_cast<S>(rng.normal() * 0.02);
        }
      }
      break;
    case Init::kZero:
      m.setZero();
      break;
  }
}

// ---------------------------------------------------------------------------
// Linear: y = x W^T + b, weight (out, in).
// ---------------------------------------------------------------------------

template <typename S>
class Linear {
 public:
  void init(ParamStore<S>& ps, const std::string& name, int in, int out, Rng& rng,
            Init kind = Init::kXavierUniform) {
    ps_ = &ps;
    in_ = in;
    out_ = out;
    w_ = ps.add(name + ".weight", out, in);
    b_ = ps.add(name + ".bias", 1, out, {out});
    init_matrix(ps.at(w_).value, kind, in, out, rng);
  }

  const Mat<S>& weight() const { return ps_->at(w_).value; }
  Mat<S>& weight() { return ps_->at(w_).value; }
  Mat<S>& bias() { return ps_->at(b_).value; }

  Mat<S> forward(const Mat<S>& x, bool cache = true) {
    if (cache) x_ = x;
    Mat<S> y(x.rows(), out_);
    y.noalias() = x * ps_->at(w_).value.transpose();
    y.rowwise() += ps_->at(b_).value.row(0);
    return y;
  }

  Mat<S> backward(const Mat<S>& dy) {
    ps_->at(w_).grad.noalias() += dy.transpose() * x_;
    ps_->at(b_).grad.row(0) += dy.colwise().sum();
    Mat<S> dx(dy.rows(), in_);
    dx.noalias() = dy * ps_->at(w_).value;
    return dx;
  }

  int in_features() const { return in_; }
  int out_features() const { return out_; }

 private:
  ParamStore<S>* ps_ = nullptr;
  int w_ = -1, b_ = -1;
  int in_ = 0, out_ = 0;
  Mat<S> x_;
};

// ---------------------------------------------------------------------------
// LayerNorm without affine parameters; modulation supplies scale and shift.
// ---------------------------------------------------------------------------

template <typename S>
class LayerNorm {
 public:
  explicit LayerNorm(double eps = 1e-6) : eps_(static_cast<S>(eps)) {}

  Mat<S> forward(const Mat<S>& x, bool cache = true) {
    const Eigen::Index n = x.cols();
    Mat<S> xhat(x.rows(), n);
    Vec<S> inv_std(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const S mean = x.row(r).mean();
      const S var = (x.row(r).array() - mean).square().sum() / static_cast<S>(n);
      const S is = S(1) / std::sqrt(var + eps_);
      xhat.row(r) = (x.row(r).array() - mean) * is;
      inv_std(r) = is;
    }
    if (cache) {
      xhat_ = xhat;
      inv_std_ = inv_std;
    }
    return xhat;
  }

  Mat<S> backward(const Mat<S>& dy) {
    const Eigen::Index n = dy.cols();
    Mat<S> dx(dy.rows(), n);
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
      const S mean_dy = dy.row(r).mean();
      const S mean_dy_xhat = (dy.row(r).array() * xhat_.row(r).array()).sum() / static_cast<S>(n);
      dx.row(r) =
          (dy.row(r).array() - mean_dy - xhat_.row(r).array() * mean_dy_xhat) * inv_std_(r);
    }
    return dx;
  }

  const Mat<S>& cached_xhat() const { return xhat_; }

 private:
  S eps_;
  Mat<S> xhat_;
  Vec<S> inv_std_;
};

// ---------------------------------------------------------------------------
// Two-layer MLP with tanh-approximated GELU.
// ---------------------------------------------------------------------------

template <typename S>
class Mlp {
 public:
  void init(ParamStore<S>& ps, const std::string& name, int in, int hidden, int out, Rng& rng) {
    fc1_.init(ps, name + ".fc1", in, hidden, rng);
    fc2_.init(ps, name + ".fc2", hidden, out, rng);
  }

  Mat<S> forward(const Mat<S>& x, bool cache = true) {
    Mat<S> h = fc1_.forward(x, cache);
    if (cache) h_pre_ = h;
    h = h.unaryExpr([](S v) { return gelu_tanh(v); });
    return fc2_.forward(h, cache);
  }

  Mat<S> backward(const Mat<S>& dy) {
    Mat<S> dh = fc2_.backward(dy);
    dh.array() *= h_pre_.unaryExpr([](S v) { return dgelu_tanh(v); }).array();
    return fc1_.backward(dh);
  }

 private:
  Linear<S> fc1_, fc2_;
  Mat<S> h_pre_;
};

// ---------------------------------------------------------------------------
// Multi-head self-attention over (B*T, d) token rows.
// ---------------------------------------------------------------------------

template <typename S>
class SelfAttention {
 public:
  void init(ParamStore<S>& ps, const std::string& name, int dim, int heads, Rng& rng) {
    dim_ = dim;
    heads_ = heads;
    head_dim_ = dim / heads;
    qkv_.init(ps, name + ".qkv", dim, 3 * dim, rng);
    out_.init(ps, name + ".out", dim, dim, rng);
  }

  Mat<S> forward(const Mat<S>& x, int batch, int tokens, bool cache = true) {
    batch_ = batch;
    tokens_ = tokens;
    const Mat<S> qkv = qkv_.forward(x, cache);
    if (cache) qkv_cache_ = qkv;
    const S scale = S(1) / std::sqrt(static_cast<S>(head_dim_));

    Mat<S> attn_out(x.rows(), dim_);
    if (cache) probs_.resize(static_cast<size_t>(batch) * heads_);
    Mat<S> scores(tokens, tokens);
    for (int b = 0; b < batch; ++b) {
      for (int h = 0; h < heads_; ++h) {
        const auto q = qkv.block(b * tokens, h * head_dim_, tokens, head_dim_);
        const auto k = qkv.block(b * tokens, dim_ + h * head_dim_, tokens, head_dim_);
        const auto v = qkv.block(b * tokens, 2 * dim_ + h * head_dim_, tokens, head_dim_);
        scores.noalias() = q * k.transpose();
        scores *= scale;
        for (int r = 0; r < tokens; ++r) {
          const S mx = scores.row(r).maxCoeff();
          scores.row(r) = (scores.row(r).array() - mx).exp();
          scores.row(r) /= scores.row(r).sum();
        }
        attn_out.block(b * tokens, h * head_dim_, tokens, head_dim_).noalias() = scores * v;
        if (cache) probs_[static_cast<size_t>(b) * heads_ + h] = scores;
      }
    }
    return out_.forward(attn_out, cache);
  }

  Mat<S> backward(const Mat<S>& dy) {
    const Mat<S> d_attn = out_.backward(dy);
    const S scale = S(1) / std::sqrt(static_cast<S>(head_dim_));
    Mat<S> d_qkv = Mat<S>::Zero(dy.rows(), 3 * dim_);
    Mat<S> dp(tokens_, tokens_), ds(tokens_, tokens_);
    for (int b = 0; b < batch_; ++b) {
      for (int h = 0; h < heads_; ++h) {
        const Mat<S>& p = probs_[static_cast<size_t>(b) * heads_ + h];
        const auto q = qkv_cache_.block(b * tokens_, h * head_dim_, tokens_, head_dim_);
        const auto k = qkv_cache_.block(b * tokens_, dim_ + h * head_dim_, tokens_, head_dim_);
        const auto v = qkv_cache_.block(b * tokens_, 2 * dim_ + h * head_dim_, tokens_, head_dim_);
        const auto dO = d_attn.block(b * tokens_, h * head_dim_, tokens_, head_dim_);

        dp.noalias() = dO * v.transpose();
        for (int r = 0; r < tokens_; ++r) {
          const S dot = p.row(r).dot(dp.row(r));
          ds.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
        }
        ds *= scale;

        d_qkv.block(b * tokens_, h * head_dim_, tokens_, head_dim_).noalias() = ds * k;
        d_qkv.block(b * tokens_, dim_ + h * head_dim_, tokens_, head_dim_).noalias() =
            ds.transpose() * q;
        d_qkv.block(b * tokens_, 2 * dim_ + h * head_dim_, tokens_, head_dim_).noalias() =
            p.transpose() * dO;
      }
    }
    return qkv_.backward(d_qkv);
  }

 private:
  Linear<S> qkv_, out_;
  int dim_ = 0, heads_ = 0, head_dim_ = 0;
  int batch_ = 0, tokens_ = 0;
  Mat<S> qkv_cache_;
  std::vector<Mat<S>> probs_;
};

// ---------------------------------------------------------------------------
// Conv2d on channel-last (HWC) rows via im2col. Weight logical shape is
// (out_c, k, k, in_c), flattened to (out_c, k*k*in_c).
// ---------------------------------------------------------------------------

template <typename S>
class Conv2d {
 public:
  void init(ParamStore<S>& ps, const std::string& name, int in_h, int in_w, int in_c, int out_c,
            int kernel, int stride, int pad, Rng& rng) {
    ps_ = &ps;
    in_h_ = in_h;
    in_w_ = in_w;
    in_c_ = in_c;
    out_c_ = out_c;
    k_ = kernel;
    stride_ = stride;
    pad_ = pad;
    out_h_ = (in_h + 2 * pad - kernel) / stride + 1;
    out_w_ = (in_w + 2 * pad - kernel) / stride + 1;
    const int cols = kernel * kernel * in_c;
    w_ = ps.add(name + ".weight", out_c, cols, {out_c, kernel, kernel, in_c});
    b_ = ps.add(name + ".bias", 1, out_c, {out_c});
    init_matrix(ps.at(w_).value, Init::kXavierUniform, cols, out_c, rng);
  }

  int out_h() const { return out_h_; }
  int out_w() const { return out_w_; }
  int out_c() const { return out_c_; }

  /// x: (B, in_h*in_w*in_c) HWC rows -> (B, out_h*out_w*out_c).
  Mat<S> forward(const Mat<S>& x, bool cache = true) {
    const int batch = static_cast<int>(x.rows());
    const int patch = k_ * k_ * in_c_;
    const int pix = out_h_ * out_w_;
    Mat<S> cols = Mat<S>::Zero(static_cast<Eigen::Index>(batch) * pix, patch);
    for (int b = 0; b < batch; ++b) {
      const S* src = x.row(b).data();
      for (int oh = 0; oh < out_h_; ++oh) {
        for (int ow = 0; ow < out_w_; ++ow) {
          S* dst = cols.row(static_cast<Eigen::Index>(b) * pix + oh * out_w_ + ow).data();
          for (int ky = 0; ky < k_; ++ky) {
            const int ih = oh * stride_ - pad_ + ky;
            for (int kx = 0; kx < k_; ++kx) {
              const int iw = ow * stride_ - pad_ + kx;
              S* cell = dst + (ky * k_ + kx) * in_c_;
              if (ih >= 0 && ih < in_h_ && iw >= 0 && iw < in_w_) {
                const S* from = src + (static_cast<int64_t>(ih) * in_w_ + iw) * in_c_;
                for (int ci = 0; ci < in_c_; ++ci) cell[ci] = from[ci];
              }
            }
          }
        }
      }
    }
    Mat<S> ypix(cols.rows(), out_c_);
    ypix.noalias() = cols * ps_->at(w_).value.transpose();
    ypix.rowwise() += ps_->at(b_).value.row(0);
    if (cache) {
      cols_ = std::move(cols);
      batch_ = batch;
    }
    Mat<S> y(batch, pix * out_c_);
    for (int b = 0; b < batch; ++b) {
      for (int p = 0; p < pix; ++p) {
        y.row(b).segment(p * out_c_, out_c_) = ypix.row(static_cast<Eigen::Index>(b) * pix + p);
      }
    }
    return y;
  }

  Mat<S> backward(const Mat<S>& dy) {
    const int pix = out_h_ * out_w_;
    Mat<S> dypix(static_cast<Eigen::Index>(batch_) * pix, out_c_);
    for (int b = 0; b < batch_; ++b) {
      for (int p = 0; p < pix; ++p) {
        dypix.row(static_cast<Eigen::Index>(b) * pix + p) = dy.row(b).segment(p * out_c_, out_c_);
      }
    }
    ps_->at(w_).grad.noalias() += dypix.transpose() * cols_;
    ps_->at(b_).grad.row(0) += dypix.colwise().sum();

    Mat<S> dcols(dypix.rows(), k_ * k_ * in_c_);
    dcols.noalias() = dypix * ps_->at(w_).value;

    Mat<S> dx = Mat<S>::Zero(batch_, in_h_ * in_w_ * in_c_);
    for (int b = 0; b < batch_; ++b) {
      S* dst = dx.row(b).data();
      for (int oh = 0; oh < out_h_; ++oh) {
        for (int ow = 0; ow < out_w_; ++ow) {
          const S* src = dcols.row(static_cast<Eigen::Index>(b) * pix + oh * out_w_ + ow).data();
          for (int ky = 0; ky < k_; ++ky) {
            const int ih = oh * stride_ - pad_ + ky;
            if (ih < 0 || ih >= in_h_) continue;
            for (int kx = 0; kx < k_; ++kx) {
              const int iw = ow * stride_ - pad_ + kx;
              if (iw < 0 || iw >= in_w_) continue;
              const S* cell = src + (ky * k_ + kx) * in_c_;
              S* to = dst + (static_cast<int64_t>(ih) * in_w_ + iw) * in_c_;
              for (int ci = 0; ci < in_c_; ++ci) to[ci] += cell[ci];
            }
          }
        }
      }
    }
    return dx;
  }

 private:
  ParamStore<S>* ps_ = nullptr;
  int w_ = -1, b_ = -1;
  int in_h_ = 0, in_w_ = 0, in_c_ = 0, out_c_ = 0;
  int k_ = 0, stride_ = 0, pad_ = 0;
  int out_h_ = 0, out_w_ = 0;
  int batch_ = 0;
  Mat<S> cols_;
};

// ---------------------------------------------------------------------------
// Fixed sin/cos embeddings.
// ---------------------------------------------------------------------------

/// 1-D sin/cos table: out[i] = sin(pos * w_i), out[half + i] = cos(pos * w_i).
template <typename S>
void sincos_1d(double pos, int dim, S* out) {
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / half);
    out[i] = static_cast<S>(std::sin(pos * omega));
    out[half + i] = static_cast<S>(std::cos(pos * omega));
  }
}

/// 2-D grid positional embedding: first half encodes the row index, second
/// half the column index. dim must be divisible by 4.
template <typename S>
Mat<S> sincos_2d_positions(int dim, int grid_h, int grid_w) {
  if (dim % 4 != 0) throw std::invalid_argument("positional embedding dim must be divisible by 4");
  Mat<S> pe(grid_h * grid_w, dim);
  const int half = dim / 2;
  for (int r = 0; r < grid_h; ++r) {
    for (int c = 0; c < grid_w; ++c) {
      S* row = pe.row(static_cast<Eigen::Index>(r) * grid_w + c).data();
      sincos_1d(static_cast<double>(r), half, row);
      sincos_1d(static_cast<double>(c), half, row + half);
    }
  }
  return pe;
}

/// Frequency embedding of a (possibly fractional) timestep: cos block then
/// sin block, matching the usual transformer convention.
template <typename S>
Vec<S> timestep_frequency_embedding(double t, int dim) {
  if (dim % 2 != 0) throw std::invalid_argument("timestep embedding dim must be even");
  const int half = dim / 2;
  Vec<S> out(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
    out(i) = static_cast<S>(std::cos(t * freq));
    out(half + i) = static_cast<S>(std::sin(t * freq));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizers.
// ---------------------------------------------------------------------------

template <typename S>
class AdamW {
 public:
  AdamW(double lr, double weight_decay = 0.0, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore<S>& ps) {
    if (m_.empty()) {
      m_.reserve(ps.size());
      v_.reserve(ps.size());
      for (const auto& e : ps.entries()) {
        m_.push_back(Mat<S>::Zero(e.value.rows(), e.value.cols()));
        v_.push_back(Mat<S>::Zero(e.value.rows(), e.value.cols()));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < ps.size(); ++i) {
      auto& e = ps.entries()[i];
      m_[i] = static_cast<S>(beta1_) * m_[i] + static_cast<S>(1.0 - beta1_) * e.grad;
      v_[i] = (static_cast<S>(beta2_) * v_[i].array() +
               static_cast<S>(1.0 - beta2_) * e.grad.array().square())
                  .matrix();
      auto mhat = m_[i].array() / static_cast<S>(bc1);
      auto vhat = v_[i].array() / static_cast<S>(bc2);
      e.value.array() -= static_cast<S>(lr_) *
                         (mhat / (vhat.sqrt() + static_cast<S>(eps_)) +
                          static_cast<S>(wd_) * e.value.array());
    }
  }

  double lr() const { return lr_; }

 private:
  double lr_, wd_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
  std::vector<Mat<S>> m_, v_;
};

template <typename S>
class Sgd {
 public:
  explicit Sgd(double lr) : lr_(lr) {}
  void step(ParamStore<S>& ps) {
    for (auto& e : ps.entries()) e.value -= static_cast<S>(lr_) * e.grad;
  }

 private:
  double lr_;
};

}  // namespace bevrecon::nn
