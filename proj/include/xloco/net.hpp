#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/QR>

#include "xloco/common.hpp"
#include "xloco/rng.hpp"

namespace xloco {

// Batched layout convention: a batch of B vectors is a Mat with B columns.

enum class Act { linear, elu, tanh_ };

inline Act act_from_name(const std::string& s) {
  if (s == "linear") return Act::linear;
  if (s == "elu") return Act::elu;
  if (s == "tanh") return Act::tanh_;
  throw ConfigError("unknown activation: " + s);
}

inline const char* act_name(Act a) {
  switch (a) {
    case Act::linear: return "linear";
    case Act::elu: return "elu";
    case Act::tanh_: return "tanh";
  }
  return "?";
}

inline double act_eval(Act a, double z) {
  switch (a) {
    case Act::linear: return z;
    case Act::elu: return z > 0.0 ? z : std::expm1(z);
    case Act::tanh_: return std::tanh(z);
  }
  return z;
}

inline double act_deriv(Act a, double z) {
  switch (a) {
    case Act::linear: return 1.0;
    case Act::elu: return z > 0.0 ? 1.0 : std::exp(z);
    case Act::tanh_: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

// Second derivative, needed by the discriminator gradient-penalty backward.
inline double act_second_deriv(Act a, double z) {
  switch (a) {
    case Act::linear: return 0.0;
    case Act::elu: return z > 0.0 ? 0.0 : std::exp(z);
    case Act::tanh_: {
      const double t = std::tanh(z);
      return -2.0 * t * (1.0 - t * t);
    }
  }
  return 0.0;
}

inline Mat act_eval(Act a, const Mat& z) { return z.unaryExpr([a](double v) { return act_eval(a, v); }); }
inline Mat act_deriv_mat(Act a, const Mat& z) { return z.unaryExpr([a](double v) { return act_deriv(a, v); }); }

/// Column-wise softmax.
inline Mat softmax_cols(const Mat& logits) {
  Mat p = logits;
  for (int c = 0; c < p.cols(); ++c) {
    Vec col = p.col(c);
    col.array() -= col.maxCoeff();
    col = col.array().exp();
    p.col(c) = col / col.sum();
  }
  return p;
}

/// Named view of one parameter tensor and its gradient buffer.
struct TensorRef {
  std::string name;
  double* value = nullptr;
  double* grad = nullptr;
  int rows = 0, cols = 0;
  int size() const { return rows * cols; }
};

/// Orthogonal init: QR of a standard-normal matrix, sign-fixed by diag(R).
inline Mat orthogonal_init(int rows, int cols, double gain, RandomStream& rng) {
  const int big = std::max(rows, cols), small = std::min(rows, cols);
  Mat a(big, small);
  for (int i = 0; i < big; ++i)
    for (int j = 0; j < small; ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Mat> qr(a);
  Mat q = qr.householderQ() * Mat::Identity(big, small);
  Mat r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (int j = 0; j < small; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  Mat w = rows >= cols ? q : Mat(q.transpose());
  return gain * w;
}

struct DenseLayer {
  Mat W;
  Vec b;
  Act act = Act::elu;
  Mat dW;
  Vec db;

  static DenseLayer make(int in, int out, Act act, double gain, RandomStream& rng) {
    DenseLayer l;
    l.W = orthogonal_init(out, in, gain, rng);
    l.b = Vec::Zero(out);
    l.act = act;
    l.dW = Mat::Zero(out, in);
    l.db = Vec::Zero(out);
    return l;
  }
};

/// Plain fully connected stack with cached activations and exact
/// reverse-mode gradients. Gradients accumulate (sum over batch columns)
/// until zero_grad().
class Mlp {
 public:
  std::vector<DenseLayer> layers;

  static Mlp make(int in, const std::vector<int>& hidden, int out, RandomStream& rng, Act hidden_act = Act::elu,
                  Act out_act = Act::linear, double out_gain = 0.01) {
    Mlp m;
    int prev = in;
    for (int h : hidden) {
      m.layers.push_back(DenseLayer::make(prev, h, hidden_act, std::sqrt(2.0), rng));
      prev = h;
    }
    m.layers.push_back(DenseLayer::make(prev, out, out_act, out_gain, rng));
    return m;
  }

  int input_dim() const { return static_cast<int>(layers.front().W.cols()); }
  int output_dim() const { return static_cast<int>(layers.back().W.rows()); }

  Mat forward(const Mat& x) {
    require(x.rows() == input_dim(), "mlp_forward: input dim mismatch");
    require(x.allFinite(), "mlp_forward: non-finite input");
    xs_.assign(1, x);
    zs_.clear();
    Mat h = x;
    for (auto& l : layers) {
      Mat z = (l.W * h).colwise() + l.b;
      zs_.push_back(z);
      h = act_eval(l.act, z);
      xs_.push_back(h);
    }
    return h;
  }

  /// dL/dy in, dL/dx out; accumulates parameter gradients.
  Mat backward(const Mat& dy) {
    require(!zs_.empty(), "mlp_backward: no forward cache");
    require(dy.rows() == output_dim() && dy.cols() == xs_.front().cols(), "mlp_backward: dy shape mismatch");
    Mat d = dy;
    for (int li = static_cast<int>(layers.size()) - 1; li >= 0; --li) {
      auto& l = layers[static_cast<size_t>(li)];
      Mat dz = d.cwiseProduct(act_deriv_mat(l.act, zs_[static_cast<size_t>(li)]));
      l.dW.noalias() += dz * xs_[static_cast<size_t>(li)].transpose();
      l.db.noalias() += dz.rowwise().sum();
      d.noalias() = l.W.transpose() * dz;
    }
    return d;
  }

  void zero_grad() {
    for (auto& l : layers) {
      l.dW.setZero();
      l.db.setZero();
    }
  }

  void collect(std::vector<TensorRef>& out, const std::string& prefix) {
    for (size_t i = 0; i < layers.size(); ++i) {
      auto& l = layers[i];
      out.push_back({prefix + ".l" + std::to_string(i) + ".W", l.W.data(), l.dW.data(),
                     static_cast<int>(l.W.rows()), static_cast<int>(l.W.cols())});
      out.push_back({prefix + ".l" + std::to_string(i) + ".b", l.b.data(), l.db.data(),
                     static_cast<int>(l.b.size()), 1});
    }
  }

  // Forward caches, exposed for heads that need custom backward passes.
  const std::vector<Mat>& cached_inputs() const { return xs_; }
  const std::vector<Mat>& cached_preacts() const { return zs_; }

 private:
  std::vector<Mat> xs_;  // xs_[l] = input to layer l; xs_.back() = output
  std::vector<Mat> zs_;  // pre-activations
};

// ---------------------------------------------------------------------------
// Convolutional depth encoder

struct ConvSpec {
  int k = 3, s = 1, c_out = 8;
};

struct ConvLayer {
  int c_in = 1, h_in = 0, w_in = 0;
  int k = 3, s = 1, c_out = 8;
  int h_out = 0, w_out = 0;
  Mat W;  // c_out x (c_in*k*k)
  Vec b;
  Mat dW;
  Vec db;
};

/// Depth image encoder: strided valid-padding conv stack with ELU, then a
/// linear flatten layer to the latent. Feature maps are (C, H*W) row-major.
class CnnEncoder {
 public:
  std::vector<ConvLayer> convs;
  DenseLayer out;  // flatten -> latent, linear

  static CnnEncoder make(int h, int w, const std::vector<ConvSpec>& specs, int latent_dim, RandomStream& rng) {
    CnnEncoder e;
    e.h_in_ = h;
    e.w_in_ = w;
    int c = 1, ch = h, cw = w;
    for (const auto& s : specs) {
      ConvLayer l;
      l.c_in = c;
      l.h_in = ch;
      l.w_in = cw;
      l.k = s.k;
      l.s = s.s;
      l.c_out = s.c_out;
      require(s.k >= 1 && s.s >= 1 && s.c_out >= 1, "conv spec entries must be positive");
      require(ch >= s.k && cw >= s.k, "conv kernel larger than feature map");
      l.h_out = (ch - s.k) / s.s + 1;
      l.w_out = (cw - s.k) / s.s + 1;
      const int fan_in = l.c_in * l.k * l.k;
      l.W = orthogonal_init(l.c_out, fan_in, std::sqrt(2.0), rng);
      l.b = Vec::Zero(l.c_out);
      l.dW = Mat::Zero(l.c_out, fan_in);
      l.db = Vec::Zero(l.c_out);
      c = l.c_out;
      ch = l.h_out;
      cw = l.w_out;
      e.convs.push_back(std::move(l));
    }
    e.flat_dim_ = c * ch * cw;
    e.out = DenseLayer::make(e.flat_dim_, latent_dim, Act::linear, 1.0, rng);
    return e;
  }

  int input_h() const { return h_in_; }
  int input_w() const { return w_in_; }
  int latent_dim() const { return static_cast<int>(out.W.rows()); }

  /// images: one (H, W) matrix per sample. Returns latent (D x B).
  Mat forward(const std::vector<Mat>& images) {
    const int B = static_cast<int>(images.size());
    require(B > 0, "cnn_forward: empty batch");
    cols_.assign(static_cast<size_t>(B), {});
    zs_.assign(static_cast<size_t>(B), {});
    Mat flat(flat_dim_, B);
    for (int n = 0; n < B; ++n) {
      const Mat& img = images[static_cast<size_t>(n)];
      require(img.rows() == h_in_ && img.cols() == w_in_, "cnn_forward: wrong image resolution");
      require(img.allFinite(), "cnn_forward: non-finite image");
      // (1, H*W) row-major feature map
      Mat fmap(1, h_in_ * w_in_);
      for (int r = 0; r < h_in_; ++r)
        for (int c = 0; c < w_in_; ++c) fmap(0, r * w_in_ + c) = img(r, c);
      for (size_t li = 0; li < convs.size(); ++li) {
        const auto& l = convs[li];
        Mat col = im2col(l, fmap);
        Mat z = (l.W * col).colwise() + l.b;
        cols_[static_cast<size_t>(n)].push_back(std::move(col));
        zs_[static_cast<size_t>(n)].push_back(z);
        fmap = act_eval(Act::elu, z);
      }
      int idx = 0;
      for (int ch = 0; ch < fmap.rows(); ++ch)
        for (int i = 0; i < fmap.cols(); ++i) flat(idx++, n) = fmap(ch, i);
    }
    flat_cache_ = flat;
    z_out_ = (out.W * flat).colwise() + out.b;
    return act_eval(out.act, z_out_);
  }

  /// dL/dlatent in; accumulates parameter gradients; returns per-sample
  /// dL/dimage (useful only for tests).
  std::vector<Mat> backward(const Mat& dlatent) {
    const int B = static_cast<int>(dlatent.cols());
    require(!cols_.empty() && static_cast<int>(cols_.size()) == B, "cnn_backward: no forward cache");
    Mat dz_out = dlatent.cwiseProduct(act_deriv_mat(out.act, z_out_));
    out.dW.noalias() += dz_out * flat_cache_.transpose();
    out.db.noalias() += dz_out.rowwise().sum();
    Mat dflat = out.W.transpose() * dz_out;

    std::vector<Mat> dimages(static_cast<size_t>(B));
    for (int n = 0; n < B; ++n) {
      const auto& last = convs.back();
      Mat dfmap(last.c_out, last.h_out * last.w_out);
      int idx = 0;
      for (int ch = 0; ch < dfmap.rows(); ++ch)
        for (int i = 0; i < dfmap.cols(); ++i) dfmap(ch, i) = dflat(idx++, n);
      for (int li = static_cast<int>(convs.size()) - 1; li >= 0; --li) {
        auto& l = convs[static_cast<size_t>(li)];
        const Mat& z = zs_[static_cast<size_t>(n)][static_cast<size_t>(li)];
        Mat dz = dfmap.cwiseProduct(act_deriv_mat(Act::elu, z));
        l.dW.noalias() += dz * cols_[static_cast<size_t>(n)][static_cast<size_t>(li)].transpose();
        l.db.noalias() += dz.rowwise().sum();
        Mat dcol = l.W.transpose() * dz;
        dfmap = col2im(l, dcol);
      }
      Mat dimg(h_in_, w_in_);
      for (int r = 0; r < h_in_; ++r)
        for (int c = 0; c < w_in_; ++c) dimg(r, c) = dfmap(0, r * w_in_ + c);
      dimages[static_cast<size_t>(n)] = std::move(dimg);
    }
    return dimages;
  }

  void zero_grad() {
    for (auto& l : convs) {
      l.dW.setZero();
      l.db.setZero();
    }
    out.dW.setZero();
    out.db.setZero();
  }

  void collect(std::vector<TensorRef>& refs, const std::string& prefix) {
    for (size_t i = 0; i < convs.size(); ++i) {
      auto& l = convs[i];
      refs.push_back({prefix + ".conv" + std::to_string(i) + ".W", l.W.data(), l.dW.data(),
                      static_cast<int>(l.W.rows()), static_cast<int>(l.W.cols())});
      refs.push_back({prefix + ".conv" + std::to_string(i) + ".b", l.b.data(), l.db.data(),
                      static_cast<int>(l.b.size()), 1});
    }
    refs.push_back({prefix + ".out.W", out.W.data(), out.dW.data(), static_cast<int>(out.W.rows()),
                    static_cast<int>(out.W.cols())});
    refs.push_back({prefix + ".out.b", out.b.data(), out.db.data(), static_cast<int>(out.b.size()), 1});
  }

 private:
  static Mat im2col(const ConvLayer& l, const Mat& fmap) {
    Mat col(l.c_in * l.k * l.k, l.h_out * l.w_out);
    for (int oy = 0; oy < l.h_out; ++oy)
      for (int ox = 0; ox < l.w_out; ++ox) {
        const int oc = oy * l.w_out + ox;
        int rr = 0;
        for (int c = 0; c < l.c_in; ++c)
          for (int ky = 0; ky < l.k; ++ky)
            for (int kx = 0; kx < l.k; ++kx, ++rr)
              col(rr, oc) = fmap(c, (oy * l.s + ky) * l.w_in + (ox * l.s + kx));
      }
    return col;
  }

  static Mat col2im(const ConvLayer& l, const Mat& dcol) {
    Mat dfmap = Mat::Zero(l.c_in, l.h_in * l.w_in);
    for (int oy = 0; oy < l.h_out; ++oy)
      for (int ox = 0; ox < l.w_out; ++ox) {
        const int oc = oy * l.w_out + ox;
        int rr = 0;
        for (int c = 0; c < l.c_in; ++c)
          for (int ky = 0; ky < l.k; ++ky)
            for (int kx = 0; kx < l.k; ++kx, ++rr)
              dfmap(c, (oy * l.s + ky) * l.w_in + (ox * l.s + kx)) += dcol(rr, oc);
      }
    return dfmap;
  }

  int h_in_ = 0, w_in_ = 0, flat_dim_ = 0;
  std::vector<std::vector<Mat>> cols_;  // [sample][layer]
  std::vector<std::vector<Mat>> zs_;
  Mat flat_cache_, z_out_;
};

// ---------------------------------------------------------------------------
// Mixture-of-Experts head

/// Dense softmax mixing over N experts sharing one feature input:
/// y = sum_i softmax(gate(x))_i * expert_i(x).
class MoeHead {
 public:
  Mlp gate;
  std::vector<Mlp> experts;

  static MoeHead make(int in, const std::vector<int>& gate_hidden, const std::vector<int>& expert_hidden, int out,
                      int n_experts, RandomStream& rng) {
    require(n_experts >= 1, "MoE needs at least one expert");
    MoeHead h;
    h.gate = Mlp::make(in, gate_hidden, n_experts, rng, Act::elu, Act::linear, 0.01);
    for (int i = 0; i < n_experts; ++i)
      h.experts.push_back(Mlp::make(in, expert_hidden, out, rng, Act::elu, Act::linear, 0.01));
    return h;
  }

  int n_experts() const { return static_cast<int>(experts.size()); }
  int input_dim() const { return experts.front().input_dim(); }
  int output_dim() const { return experts.front().output_dim(); }

  Mat forward(const Mat& x) {
    probs_ = softmax_cols(gate.forward(x));
    expert_out_.clear();
    Mat y = Mat::Zero(output_dim(), x.cols());
    for (int i = 0; i < n_experts(); ++i) {
      Mat e = experts[static_cast<size_t>(i)].forward(x);
      y += e * probs_.row(i).asDiagonal();
      expert_out_.push_back(std::move(e));
    }
    return y;
  }

  const Mat& gate_probs() const { return probs_; }

  /// Exact backward through the mixture and the softmax gate.
  Mat backward(const Mat& dy) {
    require(probs_.size() > 0, "moe backward: no forward cache");
    const int B = static_cast<int>(dy.cols());
    const int N = n_experts();
    // s_i = e_i . dy per column; gate logit grad = p_i (s_i - sum_j p_j s_j)
    Mat s(N, B);
    for (int i = 0; i < N; ++i)
      s.row(i) = (expert_out_[static_cast<size_t>(i)].cwiseProduct(dy)).colwise().sum();
    Mat dlogits(N, B);
    for (int c = 0; c < B; ++c) {
      const double mix = probs_.col(c).dot(s.col(c));
      dlogits.col(c) = probs_.col(c).cwiseProduct((s.col(c).array() - mix).matrix());
    }
    Mat dx = gate.backward(dlogits);
    for (int i = 0; i < N; ++i)
      dx += experts[static_cast<size_t>(i)].backward(dy * probs_.row(i).asDiagonal());
    return dx;
  }

  void zero_grad() {
    gate.zero_grad();
    for (auto& e : experts) e.zero_grad();
  }

  void collect(std::vector<TensorRef>& refs, const std::string& prefix) {
    gate.collect(refs, prefix + ".gate");
    for (size_t i = 0; i < experts.size(); ++i) experts[i].collect(refs, prefix + ".expert" + std::to_string(i));
  }

 private:
  Mat probs_;
  std::vector<Mat> expert_out_;
};

// ---------------------------------------------------------------------------
// Gaussian policy head (diagonal, state-independent learnable log-std)

struct GaussianHead {
  Vec log_std;
  Vec g_log_std;

  static GaussianHead make(int dim, double init_std = 1.0) {
    GaussianHead h;
    h.log_std = Vec::Constant(dim, std::log(init_std));
    h.g_log_std = Vec::Zero(dim);
    return h;
  }

  int dim() const { return static_cast<int>(log_std.size()); }

  Mat sample(const Mat& mean, RandomStream& rng) const {
    Mat a = mean;
    for (int c = 0; c < a.cols(); ++c)
      for (int r = 0; r < a.rows(); ++r) a(r, c) += std::exp(log_std[r]) * rng.normal();
    return a;
  }

  /// log N(a | mean, diag(exp(log_std)^2)) per column.
  Vec log_prob(const Mat& mean, const Mat& a) const {
    const int B = static_cast<int>(mean.cols());
    Vec out(B);
    const double c0 = 0.5 * dim() * std::log(2.0 * M_PI) + log_std.sum();
    for (int c = 0; c < B; ++c) {
      const Vec z = (a.col(c) - mean.col(c)).cwiseQuotient(log_std.array().exp().matrix());
      out[c] = -0.5 * z.squaredNorm() - c0;
    }
    return out;
  }

  double entropy() const { return log_std.sum() + 0.5 * dim() * (1.0 + std::log(2.0 * M_PI)); }

  /// Mean analytic KL(old || new) for diagonal Gaussians over a batch.
  static double mean_kl(const Mat& mean_old, const Vec& log_std_old, const Mat& mean_new, const Vec& log_std_new) {
    const int B = static_cast<int>(mean_old.cols());
    const Vec var_old = (2.0 * log_std_old).array().exp();
    const Vec var_new = (2.0 * log_std_new).array().exp();
    double acc = 0.0;
    for (int c = 0; c < B; ++c) {
      const Vec dm = mean_new.col(c) - mean_old.col(c);
      acc += (log_std_new - log_std_old).sum() +
             0.5 * ((var_old + dm.cwiseProduct(dm)).cwiseQuotient(var_new)).sum() - 0.5 * mean_old.rows();
    }
    return acc / B;
  }

  void zero_grad() { g_log_std.setZero(); }

  void collect(std::vector<TensorRef>& refs, const std::string& prefix) {
    refs.push_back({prefix + ".log_std", log_std.data(), g_log_std.data(), dim(), 1});
  }
};

// ---------------------------------------------------------------------------
// Optimizer

/// Adam over a fixed tensor registry; per-tensor moment buffers are keyed by
/// registry order, so the registry must be rebuilt identically across calls.
class Adam {
 public:
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  Adam() = default;
  explicit Adam(double lr_in) : lr(lr_in) {}

  void step(const std::vector<TensorRef>& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.push_back(Vec::Zero(p.size()));
        v_.push_back(Vec::Zero(p.size()));
      }
    }
    require(m_.size() == params.size(), "Adam: registry size changed");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, t_);
    const double bc2 = 1.0 - std::pow(beta2, t_);
    for (size_t i = 0; i < params.size(); ++i) {
      const auto& p = params[i];
      Eigen::Map<Vec> val(p.value, p.size());
      Eigen::Map<const Vec> g(p.grad, p.size());
      m_[i] = beta1 * m_[i] + (1.0 - beta1) * g;
      v_[i] = beta2 * v_[i] + (1.0 - beta2) * g.cwiseProduct(g);
      const Vec mhat = m_[i] / bc1;
      const Vec vhat = v_[i] / bc2;
      val -= lr * mhat.cwiseQuotient((vhat.array().sqrt() + eps).matrix());
    }
  }

  int64_t steps() const { return t_; }

 private:
  std::vector<Vec> m_, v_;
  int64_t t_ = 0;
};

/// Global-norm gradient clip; returns the pre-clip norm.
inline double clip_grad_norm(const std::vector<TensorRef>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) sq += Eigen::Map<const Vec>(p.grad, p.size()).squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (const auto& p : params) Eigen::Map<Vec>(p.grad, p.size()) *= scale;
  }
  return norm;
}

inline void zero_grads(const std::vector<TensorRef>& params) {
  for (const auto& p : params) Eigen::Map<Vec>(p.grad, p.size()).setZero();
}

inline int64_t param_count(const std::vector<TensorRef>& params) {
  int64_t n = 0;
  for (const auto& p : params) n += p.size();
  return n;
}

}  // namespace xloco
