#pragma once

#include <deque>
#include <string>
#include <vector>

#include "xloco/common.hpp"
#include "xloco/core.hpp"
#include "xloco/net.hpp"
#include "xloco/rewards.hpp"
#include "xloco/rng.hpp"

namespace xloco {

// ---------------------------------------------------------------------------
// Specialist policy: privileged-observation actor (+ optional elevation
// encoder) with a Gaussian head and one critic per reward group.

struct SpecialistNetConfig {
  std::vector<int> actor_hidden{256, 128};
  std::vector<int> critic_hidden{256, 128};
  std::vector<int> elevation_hidden{64};
  int elevation_latent = 32;
  double init_std = 1.0;
};

/// Actor over [pre | heights | post] observations; the heights block is
/// compressed by a small encoder before the trunk sees it.
class SpecialistActor {
 public:
  bool use_elevation = false;
  int height_off = 0, height_dim = 0;
  Mlp elevation;
  Mlp trunk;

  static SpecialistActor make(int obs_dim, int height_off, int height_dim, int act_dim,
                              const SpecialistNetConfig& cfg, bool use_elevation, RandomStream& rng) {
    SpecialistActor a;
    a.use_elevation = use_elevation && height_dim > 0;
    a.height_off = height_off;
    a.height_dim = height_dim;
    int trunk_in = obs_dim;
    if (a.use_elevation) {
      require(height_off >= 0 && height_off + height_dim <= obs_dim, "specialist actor: heights outside obs");
      a.elevation = Mlp::make(height_dim, cfg.elevation_hidden, cfg.elevation_latent, rng, Act::elu, Act::elu, 1.0);
      trunk_in = obs_dim - height_dim + cfg.elevation_latent;
    }
    a.trunk = Mlp::make(trunk_in, cfg.actor_hidden, act_dim, rng);
    return a;
  }

  int input_dim() const {
    return use_elevation ? trunk.input_dim() - latent_dim() + height_dim : trunk.input_dim();
  }
  int output_dim() const { return trunk.output_dim(); }
  int latent_dim() const { return use_elevation ? elevation.output_dim() : 0; }

  Mat forward(const Mat& obs) {
    if (!use_elevation) return trunk.forward(obs);
    require(obs.rows() == input_dim(), "specialist actor: obs dim mismatch");
    const int tail = static_cast<int>(obs.rows()) - height_off - height_dim;
    const Mat lat = elevation.forward(obs.middleRows(height_off, height_dim));
    Mat tin(trunk.input_dim(), obs.cols());
    tin.topRows(height_off) = obs.topRows(height_off);
    tin.middleRows(height_off, latent_dim()) = lat;
    tin.bottomRows(tail) = obs.bottomRows(tail);
    return trunk.forward(tin);
  }

  Mat backward(const Mat& dmean) {
    Mat dtin = trunk.backward(dmean);
    if (use_elevation) elevation.backward(dtin.middleRows(height_off, latent_dim()));
    return dtin;  // input gradients of the compressed view; unused upstream
  }

  void zero_grad() {
    trunk.zero_grad();
    if (use_elevation) elevation.zero_grad();
  }

  void collect(std::vector<TensorRef>& refs, const std::string& prefix) {
    if (use_elevation) elevation.collect(refs, prefix + ".elev");
    trunk.collect(refs, prefix + ".trunk");
  }
};

struct SpecialistPolicy {
  Specialist kind = Specialist::loco;
  SpecialistActor actor;
  GaussianHead head;
  std::vector<Mlp> critics;
  int obs_dim = 0, act_dim = 0;

  /// Observation layout: [proprio | lin_vel(3) head(1) ee_pos(6) ee_vel(6) |
  /// heights | motion_cmd]. Recovery skips the elevation encoder and trains
  /// four critics (task, style, regularization, post-task); the others one.
  static SpecialistPolicy make(Specialist kind, int prop_dim, int scan_dim, int m_dim, int act_dim,
                               const SpecialistNetConfig& cfg, RandomStream& rng) {
    SpecialistPolicy p;
    p.kind = kind;
    p.obs_dim = prop_dim + 16 + scan_dim + m_dim;
    p.act_dim = act_dim;
    const bool elev = kind != Specialist::recovery;
    p.actor = SpecialistActor::make(p.obs_dim, prop_dim + 16, scan_dim, act_dim, cfg, elev, rng);
    p.head = GaussianHead::make(act_dim, cfg.init_std);
    const int n_critics = kind == Specialist::recovery ? kRewardGroups : 1;
    for (int g = 0; g < n_critics; ++g) p.critics.push_back(Mlp::make(p.obs_dim, cfg.critic_hidden, 1, rng));
    return p;
  }

  int n_critics() const { return static_cast<int>(critics.size()); }

  /// Deterministic action (policy mean) for a single observation.
  Vec act_mean(const Vec& obs) {
    require(obs.size() == obs_dim, "specialist act_mean: obs dim mismatch");
    return actor.forward(obs).col(0);
  }

  Vec value(const Vec& obs) {
    Vec v(n_critics());
    for (int g = 0; g < n_critics(); ++g) v(g) = critics[static_cast<size_t>(g)].forward(obs)(0, 0);
    return v;
  }

  void collect(std::vector<TensorRef>& refs) {
    actor.collect(refs, "actor");
    head.collect(refs, "head");
    for (size_t g = 0; g < critics.size(); ++g) critics[g].collect(refs, "critic" + std::to_string(g));
  }
};

// ---------------------------------------------------------------------------
// Student policy: depth CNN + proprio-history encoder + MoE action head.

struct StudentNetConfig {
  std::vector<ConvSpec> conv{{8, 4, 8}, {3, 2, 16}, {3, 2, 16}};
  int depth_h = 64, depth_w = 64;
  int depth_latent = 64;
  std::vector<int> hist_hidden{128};
  int hist_latent = 64;
  std::vector<int> gate_hidden{64};
  std::vector<int> expert_hidden{256, 128};
  int n_experts = 2;
  int history_steps = 10;
  double depth_max_range = 6.0;  // normalization divisor
};

class StudentPolicy {
 public:
  CnnEncoder cnn;
  Mlp hist_enc;
  MoeHead moe;
  int prop_dim = 0, act_dim = 0, history_steps = 10, cmd_dim = 3;
  double depth_scale = 1.0 / 6.0;

  static StudentPolicy make(int prop_dim, int act_dim, const StudentNetConfig& cfg, RandomStream& rng) {
    StudentPolicy s;
    s.prop_dim = prop_dim;
    s.act_dim = act_dim;
    s.history_steps = cfg.history_steps;
    s.depth_scale = 1.0 / cfg.depth_max_range;
    s.cnn = CnnEncoder::make(cfg.depth_h, cfg.depth_w, cfg.conv, cfg.depth_latent, rng);
    s.hist_enc = Mlp::make(prop_dim * cfg.history_steps, cfg.hist_hidden, cfg.hist_latent, rng, Act::elu, Act::elu, 1.0);
    s.moe = MoeHead::make(cfg.depth_latent + cfg.hist_latent + s.cmd_dim, cfg.gate_hidden, cfg.expert_hidden, act_dim,
                          cfg.n_experts, rng);
    return s;
  }

  int hist_dim() const { return prop_dim * history_steps; }

  /// depth in meters (normalized internally), hist (hist_dim x B), cmd (3 x B).
  Mat forward(const std::vector<Mat>& depth, const Mat& hist, const Mat& cmd) {
    const int B = static_cast<int>(depth.size());
    require(hist.cols() == B && cmd.cols() == B, "student forward: batch size mismatch");
    require(hist.rows() == hist_dim() && cmd.rows() == cmd_dim, "student forward: input dims mismatch");
    std::vector<Mat> scaled(depth.size());
    for (size_t i = 0; i < depth.size(); ++i) scaled[i] = depth[i] * depth_scale;
    const Mat dl = cnn.forward(scaled);
    const Mat hl = hist_enc.forward(hist);
    Mat z(dl.rows() + hl.rows() + cmd.rows(), B);
    z.topRows(dl.rows()) = dl;
    z.middleRows(dl.rows(), hl.rows()) = hl;
    z.bottomRows(cmd.rows()) = cmd;
    return moe.forward(z);
  }

  void backward(const Mat& dy) {
    const Mat dz = moe.backward(dy);
    const int dlat = cnn.latent_dim();
    const int hlat = hist_enc.output_dim();
    cnn.backward(dz.topRows(dlat));
    hist_enc.backward(dz.middleRows(dlat, hlat));
  }

  /// Single-sample deterministic action.
  Vec act(const Mat& depth, const Vec& hist, const Vec& cmd) {
    return forward({depth}, hist, cmd).col(0);
  }

  void zero_grad() {
    cnn.zero_grad();
    hist_enc.zero_grad();
    moe.zero_grad();
  }

  void collect(std::vector<TensorRef>& refs) {
    cnn.collect(refs, "cnn");
    hist_enc.collect(refs, "hist");
    moe.collect(refs, "moe");
  }
};

/// Fixed-length proprio history, newest last, padded by replicating the
/// oldest sample after a reset.
class HistoryBuffer {
 public:
  explicit HistoryBuffer(int steps = 10) : steps_(steps) {}

  void reset(const Vec& first) {
    buf_.assign(static_cast<size_t>(steps_), first);
  }

  void push(const Vec& v) {
    require(!buf_.empty(), "history buffer: push before reset");
    buf_.pop_front();
    buf_.push_back(v);
  }

  Vec flatten() const {
    require(!buf_.empty(), "history buffer: flatten before reset");
    const int d = static_cast<int>(buf_.front().size());
    Vec out(d * steps_);
    for (int i = 0; i < steps_; ++i) out.segment(i * d, d) = buf_[static_cast<size_t>(i)];
    return out;
  }

  int steps() const { return steps_; }

 private:
  int steps_;
  std::deque<Vec> buf_;
};

}  // namespace xloco
