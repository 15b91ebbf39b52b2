#pragma once

#include <cstdint>
#include <deque>
#include <fstream>
#include <string>
#include <vector>

#include "xloco/common.hpp"
#include "xloco/core.hpp"
#include "xloco/net.hpp"
#include "xloco/rng.hpp"

namespace xloco {

// ---------------------------------------------------------------------------
// Scalar pieces

/// LSGAN discriminator loss with gradient penalty (batch means in practice):
/// (d_ref - 1)^2 + (d_pol + 1)^2 + (alpha_d / 2) * ||grad D||^2.
inline double discriminator_loss(double d_ref, double d_pol, double grad_penalty_sq, double alpha_d) {
  require(std::isfinite(d_ref) && std::isfinite(d_pol) && std::isfinite(grad_penalty_sq),
          "discriminator_loss: non-finite inputs");
  require(alpha_d >= 0.0, "discriminator_loss: alpha_d must be non-negative");
  return sqr(d_ref - 1.0) + sqr(d_pol + 1.0) + 0.5 * alpha_d * grad_penalty_sq;
}

/// Bounded style reward: w * max(0, 1 - (d-1)^2/4). Lives in [0, w].
inline double style_reward(double d, double w_style) {
  require(std::isfinite(d), "style_reward: non-finite discriminator output");
  return w_style * std::max(0.0, 1.0 - 0.25 * sqr(d - 1.0));
}

// ---------------------------------------------------------------------------
// Discriminator with input-gradient penalty

/// Mean over the batch of ||d D/d x||^2, with exact parameter gradients of
/// that quantity accumulated into the net (scaled by `scale`). This is a
/// second reverse pass over the computation graph of the input gradient.
inline double penalty_backward(Mlp& net, const Mat& x, double scale) {
  require(net.output_dim() == 1, "penalty_backward: scalar-output net required");
  const int B = static_cast<int>(x.cols());
  const int L = static_cast<int>(net.layers.size());

  // local forward (keeps the net's own cache untouched for the caller)
  std::vector<Mat> xs(static_cast<size_t>(L + 1)), zs(static_cast<size_t>(L));
  xs[0] = x;
  for (int l = 0; l < L; ++l) {
    const auto& ly = net.layers[static_cast<size_t>(l)];
    zs[static_cast<size_t>(l)] = (ly.W * xs[static_cast<size_t>(l)]).colwise() + ly.b;
    xs[static_cast<size_t>(l + 1)] = act_eval(ly.act, zs[static_cast<size_t>(l)]);
  }

  // first reverse pass: u_{l-1} = W_l^T (u_l . sigma'(z_l)), u_L = 1
  std::vector<Mat> u(static_cast<size_t>(L + 1)), t(static_cast<size_t>(L));
  u[static_cast<size_t>(L)] = Mat::Ones(1, B);
  for (int l = L - 1; l >= 0; --l) {
    const auto& ly = net.layers[static_cast<size_t>(l)];
    t[static_cast<size_t>(l)] =
        u[static_cast<size_t>(l + 1)].cwiseProduct(act_deriv_mat(ly.act, zs[static_cast<size_t>(l)]));
    u[static_cast<size_t>(l)] = ly.W.transpose() * t[static_cast<size_t>(l)];
  }
  const double penalty = u[0].colwise().squaredNorm().mean();

  // adjoint pass over the first reverse pass; P = mean_b ||u_0^b||^2
  const double cb = scale / B;
  std::vector<Mat> zbar(static_cast<size_t>(L));
  Mat ubar = 2.0 * cb * u[0];  // dP/du_0
  for (int l = 0; l < L; ++l) {
    auto& ly = net.layers[static_cast<size_t>(l)];
    // u_{l-1} = W_l^T t_l
    Mat tbar = ly.W * ubar;
    ly.dW.noalias() += t[static_cast<size_t>(l)] * ubar.transpose();
    // t_l = u_{l+1} . sigma'(z_l)
    const Mat sd = act_deriv_mat(ly.act, zs[static_cast<size_t>(l)]);
    const Mat sdd = zs[static_cast<size_t>(l)].unaryExpr(
        [a = ly.act](double v) { return act_second_deriv(a, v); });
    zbar[static_cast<size_t>(l)] = tbar.cwiseProduct(u[static_cast<size_t>(l + 1)]).cwiseProduct(sdd);
    ubar = tbar.cwiseProduct(sd);  // dP/du_{l+1}
  }
  // downward sweep: z_l = W_l x_{l-1} + b_l and x_l = sigma(z_l)
  Mat xbar = Mat::Zero(1, B);  // output x_L does not enter P directly
  for (int l = L - 1; l >= 0; --l) {
    auto& ly = net.layers[static_cast<size_t>(l)];
    Mat zb = zbar[static_cast<size_t>(l)];
    if (l < L - 1) zb += xbar.cwiseProduct(act_deriv_mat(ly.act, zs[static_cast<size_t>(l)]));
    ly.dW.noalias() += zb * xs[static_cast<size_t>(l)].transpose();
    ly.db.noalias() += zb.rowwise().sum();
    xbar = ly.W.transpose() * zb;
  }
  return penalty;
}

/// Per-sample input gradients dD/dx (columns), for tests and diagnostics.
inline Mat discriminator_input_grad(Mlp& net, const Mat& x) {
  net.forward(x);
  return net.backward(Mat::Ones(1, x.cols()));
}

struct AmpStats {
  double loss = 0.0;
  double mean_d_ref = 0.0, mean_d_pol = 0.0;
  double penalty = 0.0;
};

/// One LSGAN step on Eq.-style least squares targets +1 (reference) and -1
/// (policy), with the input-gradient penalty on reference samples only.
inline AmpStats discriminator_update(Mlp& disc, const Mat& ref_batch, const Mat& pol_batch, double alpha_d,
                                     Adam& opt) {
  require(ref_batch.cols() > 0 && pol_batch.cols() > 0, "discriminator_update: empty batch");
  if (!all_finite(ref_batch) || !all_finite(pol_batch))
    throw NumericFault("discriminator_update: non-finite batch");
  std::vector<TensorRef> refs;
  disc.collect(refs, "disc");
  zero_grads(refs);

  const int Br = static_cast<int>(ref_batch.cols());
  const int Bp = static_cast<int>(pol_batch.cols());

  AmpStats st;
  const Mat d_ref = disc.forward(ref_batch);
  st.mean_d_ref = d_ref.mean();
  disc.backward(2.0 * (d_ref.array() - 1.0).matrix() / Br);
  const double ref_term = (d_ref.array() - 1.0).square().mean();

  const Mat d_pol = disc.forward(pol_batch);
  st.mean_d_pol = d_pol.mean();
  disc.backward(2.0 * (d_pol.array() + 1.0).matrix() / Bp);
  const double pol_term = (d_pol.array() + 1.0).square().mean();

  st.penalty = penalty_backward(disc, ref_batch, 0.5 * alpha_d);
  st.loss = ref_term + pol_term + 0.5 * alpha_d * st.penalty;
  if (!std::isfinite(st.loss)) throw NumericFault("discriminator_update: non-finite loss");

  opt.step(refs);
  return st;
}

// ---------------------------------------------------------------------------
// Reference motions

enum class Skill { walk, recover, roll, climb };

inline const char* skill_name(Skill s) {
  switch (s) {
    case Skill::walk: return "walk";
    case Skill::recover: return "recover";
    case Skill::roll: return "roll";
    case Skill::climb: return "climb";
  }
  return "?";
}

inline Skill skill_from_name(const std::string& s) {
  for (Skill k : {Skill::walk, Skill::recover, Skill::roll, Skill::climb})
    if (s == skill_name(k)) return k;
  throw ConfigError("unknown skill: " + s);
}

/// One 50 Hz reference trajectory: joint frames plus a base-pose curve
/// [x, y, z, roll, pitch, yaw] used by the body-tracking rewards.
struct ReferenceTrajectory {
  Skill skill = Skill::walk;
  Mat joints;  // J x T
  Mat base;    // 6 x T

  int frames() const { return static_cast<int>(joints.cols()); }
};

struct ReferenceMotionStore {
  std::vector<ReferenceTrajectory> trajectories;

  int window = 5;  // AMP window length in frames

  bool empty() const { return trajectories.empty(); }

  /// Random flattened window of `window` consecutive joint frames.
  Vec sample_window(RandomStream& rng) const {
    require(!trajectories.empty(), "motion store: empty");
    const auto& tr = trajectories[rng.uniform_index(static_cast<int>(trajectories.size()))];
    require(tr.frames() >= window, "motion store: trajectory shorter than the window");
    const int start = rng.uniform_index(tr.frames() - window + 1);
    const int J = static_cast<int>(tr.joints.rows());
    Vec w(J * window);
    for (int k = 0; k < window; ++k) w.segment(k * J, J) = tr.joints.col(start + k);
    return w;
  }

  Mat sample_windows(int count, RandomStream& rng) const {
    require(count > 0, "motion store: need a positive batch");
    const int J = static_cast<int>(trajectories.front().joints.rows());
    Mat out(J * window, count);
    for (int i = 0; i < count; ++i) out.col(i) = sample_window(rng);
    return out;
  }
};

/// Flatten the last `window` joint-position frames (oldest first).
inline Vec amp_window(const std::deque<Vec>& history, int window = 5) {
  require(static_cast<int>(history.size()) >= window, "amp_window: not enough frames");
  const int J = static_cast<int>(history.back().size());
  Vec w(J * window);
  const size_t off = history.size() - static_cast<size_t>(window);
  for (int k = 0; k < window; ++k) w.segment(k * J, J) = history[off + static_cast<size_t>(k)];
  return w;
}

inline void save_motion_store(const ReferenceMotionStore& store, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "save_motion_store: cannot open " + path);
  f.write("XLMO", 4);
  auto put_u32 = [&](uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto put_f32 = [&](double v) {
    const float x = static_cast<float>(v);
    f.write(reinterpret_cast<const char*>(&x), 4);
  };
  put_u32(static_cast<uint32_t>(store.trajectories.size()));
  put_u32(static_cast<uint32_t>(store.window));
  for (const auto& tr : store.trajectories) {
    put_u32(static_cast<uint32_t>(tr.skill));
    put_u32(static_cast<uint32_t>(tr.joints.rows()));
    put_u32(static_cast<uint32_t>(tr.frames()));
    for (int r = 0; r < tr.joints.rows(); ++r)
      for (int c = 0; c < tr.joints.cols(); ++c) put_f32(tr.joints(r, c));
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < tr.base.cols(); ++c) put_f32(tr.base(r, c));
  }
  require(f.good(), "save_motion_store: write failed");
}

inline ReferenceMotionStore load_motion_store(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "load_motion_store: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  require(f.good() && std::string(magic, 4) == "XLMO", "load_motion_store: bad magic");
  auto get_u32 = [&]() {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  auto get_f32 = [&]() {
    float v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return static_cast<double>(v);
  };
  ReferenceMotionStore store;
  const uint32_t n = get_u32();
  store.window = static_cast<int>(get_u32());
  for (uint32_t i = 0; i < n; ++i) {
    ReferenceTrajectory tr;
    tr.skill = static_cast<Skill>(get_u32());
    const int J = static_cast<int>(get_u32());
    const int T = static_cast<int>(get_u32());
    require(J > 0 && T > 0, "load_motion_store: bad shape");
    tr.joints.resize(J, T);
    for (int r = 0; r < J; ++r)
      for (int c = 0; c < T; ++c) tr.joints(r, c) = get_f32();
    tr.base.resize(6, T);
    for (int r = 0; r < 6; ++r)
      for (int c = 0; c < T; ++c) tr.base(r, c) = get_f32();
    store.trajectories.push_back(std::move(tr));
  }
  require(f.good(), "load_motion_store: truncated file");
  return store;
}

namespace detail {

struct JointWave {
  double amp = 0.0, freq = 0.0, phase = 0.0;  // Hz
};

}  // namespace detail

/// Procedural reference generator: per-joint band-limited sinusoid mixtures
/// with skill-specific amplitude/frequency templates, amplitude-budgeted so
/// frames stay inside joint limits and consecutive 50 Hz deltas stay below
/// 0.2 rad.
inline std::vector<ReferenceTrajectory> generate_reference_motions(Skill skill, int count, RandomStream& rng,
                                                                   const JointLayout& layout, int frames = 150) {
  constexpr double kRate = 50.0;
  constexpr double kDeltaBudget = 0.18;  // headroom under the 0.2 rad bound
  std::vector<ReferenceTrajectory> out;
  const int J = layout.dof();

  auto group_amp = [&](const std::string& name) {
    const bool leg = name.find("hip") != std::string::npos || name.find("knee") != std::string::npos;
    const bool ankle = name.find("ankle") != std::string::npos;
    const bool waist = name.find("waist") != std::string::npos;
    const bool arm = name.find("shoulder") != std::string::npos || name.find("elbow") != std::string::npos;
    switch (skill) {
      case Skill::walk: return leg ? 0.30 : ankle ? 0.15 : arm ? 0.10 : 0.05;
      case Skill::recover: return waist ? 0.60 : leg ? 0.50 : 0.25;
      case Skill::roll: return waist ? 0.80 : leg ? 0.60 : 0.30;
      case Skill::climb: return leg ? 0.50 : arm ? 0.40 : 0.20;
    }
    return 0.1;
  };
  auto freq_range = [&]() -> std::pair<double, double> {
    switch (skill) {
      case Skill::walk: return {0.8, 1.5};
      case Skill::recover: return {0.2, 0.6};
      case Skill::roll: return {0.3, 0.7};
      case Skill::climb: return {0.4, 0.9};
    }
    return {0.5, 1.0};
  };

  for (int n = 0; n < count; ++n) {
    ReferenceTrajectory tr;
    tr.skill = skill;
    tr.joints.resize(J, frames);
    tr.base = Mat::Zero(6, frames);

    std::vector<std::vector<detail::JointWave>> waves(static_cast<size_t>(J));
    const auto [flo, fhi] = freq_range();
    for (int j = 0; j < J; ++j) {
      const auto& info = layout.joint(j);
      const double left_phase = info.name.find("left") != std::string::npos ? M_PI : 0.0;
      double base_amp = group_amp(info.name);
      // stay inside joint limits with 5% headroom
      const double room = 0.95 * std::min(info.q_max - info.q_default, info.q_default - info.q_min);
      base_amp = std::min(base_amp, std::max(0.0, room));
      std::vector<detail::JointWave> ws;
      double delta_rate = 0.0;
      for (int k = 0; k < 3; ++k) {
        detail::JointWave w;
        w.amp = base_amp * (k == 0 ? 0.7 : 0.15);
        w.freq = rng.uniform(flo, fhi) * (k + 1);
        w.phase = left_phase + rng.uniform(-0.3, 0.3);
        delta_rate += w.amp * 2.0 * M_PI * w.freq / kRate;
        ws.push_back(w);
      }
      if (delta_rate > kDeltaBudget)
        for (auto& w : ws) w.amp *= kDeltaBudget / delta_rate;
      waves[static_cast<size_t>(j)] = ws;
    }

    for (int tfi = 0; tfi < frames; ++tfi) {
      const double t = tfi / kRate;
      for (int j = 0; j < J; ++j) {
        double q = layout.joint(j).q_default;
        for (const auto& w : waves[static_cast<size_t>(j)]) q += w.amp * std::sin(2.0 * M_PI * w.freq * t + w.phase);
        tr.joints(j, tfi) = clampd(q, layout.joint(j).q_min, layout.joint(j).q_max);
      }
      // skill-specific base curves consumed by the body-tracking rewards
      const double s01 = static_cast<double>(tfi) / std::max(1, frames - 1);
      switch (skill) {
        case Skill::walk:
          tr.base(0, tfi) = 0.9 * t;  // steady forward progress
          tr.base(2, tfi) = 0.78;
          break;
        case Skill::recover:
          tr.base(2, tfi) = 0.25 + 0.53 * s01;  // ground to standing height
          tr.base(4, tfi) = (1.0 - s01) * 1.4;  // pitch flattens out
          break;
        case Skill::roll:
          tr.base(0, tfi) = 1.2 * s01;
          tr.base(2, tfi) = 0.3;
          tr.base(4, tfi) = 2.0 * M_PI * s01;  // full forward roll
          break;
        case Skill::climb:
          tr.base(0, tfi) = 0.8 * s01;
          tr.base(2, tfi) = 0.78 + 0.55 * (s01 > 0.5 ? (s01 - 0.5) * 2.0 : 0.0);
          break;
      }
    }
    out.push_back(std::move(tr));
  }
  return out;
}

}  // namespace xloco
