#pragma once

#include <array>
#include <deque>
#include <string>
#include <vector>

#include "xloco/common.hpp"
#include "xloco/depthcam.hpp"
#include "xloco/env.hpp"
#include "xloco/net.hpp"
#include "xloco/policies.hpp"
#include "xloco/rl.hpp"
#include "xloco/rng.hpp"

namespace xloco {

// ---------------------------------------------------------------------------
// Case-adaptive specialist selection

enum class CaseId { c_rec = 0, c_loco = 1, c_coor_1 = 2, c_coor_2 = 3 };
constexpr int kCaseCount = 4;

inline const char* case_name(CaseId c) {
  switch (c) {
    case CaseId::c_rec: return "c_rec";
    case CaseId::c_loco: return "c_loco";
    case CaseId::c_coor_1: return "c_coor_1";
    case CaseId::c_coor_2: return "c_coor_2";
  }
  return "?";
}

/// Head height below the threshold always means recovery; otherwise the
/// terrain context picks a coordination case, and plain locomotion is the
/// fallback.
inline CaseId select_case(double head_height, int context, double head_threshold = 1.1) {
  require(head_height >= 0.0, "select_case: head height must be non-negative");
  require(context >= 0 && context <= 2, "select_case: context out of range");
  if (head_height < head_threshold) return CaseId::c_rec;
  if (context == 1) return CaseId::c_coor_1;
  if (context == 2) return CaseId::c_coor_2;
  return CaseId::c_loco;
}

// ---------------------------------------------------------------------------
// Hysteresis rho scheduler

struct SchedulerState {
  double rho = 1.0;
  bool suspended = false;
  double delta_rho = 1e-4;
  double tau_low = 0.005;
  double tau_high = 0.010;
};

/// Anneal the expert fraction only while the student tracks well: decay by
/// delta_rho when loss < tau_low, suspend when loss > tau_high, resume (and
/// decay immediately) once loss drops back under tau_low. Values within 1e-9
/// of zero snap to zero so a fixed decay count lands exactly.
inline SchedulerState update_rho(SchedulerState s, double loss) {
  if (!std::isfinite(loss)) throw NumericFault("update_rho: loss must be finite");
  require(s.tau_low < s.tau_high, "update_rho: thresholds out of order");
  if (s.suspended) {
    if (loss < s.tau_low) s.suspended = false;
  } else if (loss > s.tau_high) {
    s.suspended = true;
  }
  if (!s.suspended && loss < s.tau_low) {
    s.rho = std::max(0.0, s.rho - s.delta_rho);
    if (std::abs(s.rho) < 1e-9) s.rho = 0.0;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Stuck-recovery termination

/// Ring buffer of recent head heights; termination looks at the population
/// variance over the full window only.
class SfiMonitor {
 public:
  explicit SfiMonitor(int k = 100, double delta = 1e-4) : k_(k), delta_(delta) {
    require(k >= 2, "SfiMonitor: window must hold at least 2 samples");
    require(delta > 0.0, "SfiMonitor: variance threshold must be positive");
  }

  void push(double head_height) {
    buf_.push_back(head_height);
    if (static_cast<int>(buf_.size()) > k_) buf_.pop_front();
  }

  void clear() { buf_.clear(); }
  bool full() const { return static_cast<int>(buf_.size()) == k_; }
  int window() const { return k_; }
  double threshold() const { return delta_; }

  double variance() const {
    require(!buf_.empty(), "SfiMonitor: variance of an empty buffer");
    double mean = 0.0;
    for (double v : buf_) mean += v;
    mean /= static_cast<double>(buf_.size());
    double acc = 0.0;
    for (double v : buf_) acc += sqr(v - mean);
    return acc / static_cast<double>(buf_.size());
  }

 private:
  int k_;
  double delta_;
  std::deque<double> buf_;
};

/// Stuck while recovering: the head has stopped moving (variance under the
/// threshold across a full window) and the active case is recovery.
inline bool sfi_terminate(const SfiMonitor& m, CaseId c) {
  if (c != CaseId::c_rec || !m.full()) return false;
  return m.variance() < m.threshold();
}

// ---------------------------------------------------------------------------
// Supervised loss and action mixing

/// Mean over batch and action dimensions of squared differences.
inline double distill_loss(const Mat& student_actions, const Mat& target_actions) {
  require(student_actions.rows() == target_actions.rows() && student_actions.cols() == target_actions.cols(),
          "distill_loss: shape mismatch");
  require(student_actions.size() > 0, "distill_loss: empty batch");
  return (student_actions - target_actions).squaredNorm() / static_cast<double>(student_actions.size());
}

struct MixResult {
  Vec executed;
  bool used_expert = false;
};

/// Bernoulli(rho) pick of the executed action. The stored training target is
/// always the expert's action regardless of which branch executed.
inline MixResult mix_action(const Vec& a_star, const Vec& a_student, double rho, RandomStream& rng) {
  require(rho >= 0.0 && rho <= 1.0, "mix_action: rho outside [0,1]");
  require(a_star.size() == a_student.size(), "mix_action: action dims differ");
  MixResult r;
  r.used_expert = rng.bernoulli(rho);
  r.executed = r.used_expert ? a_star : a_student;
  return r;
}

// ---------------------------------------------------------------------------
// Distillation outer loop

struct DistillConfig {
  double lr = 1e-3;
  int epochs = 8;
  int minibatches = 12;
  int steps_per_iter = 12;

  double rho_init = 1.0;
  double delta_rho = 1e-4;
  double tau_low = 0.005;
  double tau_high = 0.010;

  double head_threshold = 1.1;  // case boundary, m
  int history_steps = 10;

  // student observation noise (uniform, additive)
  double noise_angle = 0.05;  // rad: gravity components, joint positions
  double noise_vel = 0.2;     // rad/s: gyro, joint velocities

  bool sfi_enabled = true;
  double sfi_fall_prob = 0.01;  // per step per env while upright
  int sfi_window = 100;
  double sfi_variance_delta = 1e-4;

  double fallen_reset_fraction = 0.25;  // episodes starting from the ground

  void validate() const {
    require(lr > 0.0, "distill: lr must be positive");
    require(epochs >= 1 && minibatches >= 1 && steps_per_iter >= 1, "distill: loop sizes must be positive");
    require(rho_init >= 0.0 && rho_init <= 1.0, "distill: rho_init outside [0,1]");
    require(tau_low < tau_high, "distill: thresholds out of order");
    require(history_steps >= 1, "distill: history must hold at least one step");
    require(fallen_reset_fraction >= 0.0 && fallen_reset_fraction <= 1.0, "distill: bad reset fraction");
  }
};

/// The three frozen teachers plus the reference motions the coordination
/// cases hand to the whole-body specialist.
struct SpecialistSet {
  SpecialistPolicy* loco = nullptr;
  SpecialistPolicy* recovery = nullptr;
  SpecialistPolicy* wbc = nullptr;
  const ReferenceTrajectory* coor1_reference = nullptr;  // climb template
  const ReferenceTrajectory* coor2_reference = nullptr;  // crawl template

  SpecialistPolicy& by_case(CaseId c) const {
    SpecialistPolicy* p = nullptr;
    switch (c) {
      case CaseId::c_rec: p = recovery; break;
      case CaseId::c_loco: p = loco; break;
      case CaseId::c_coor_1:
      case CaseId::c_coor_2: p = wbc; break;
    }
    require(p != nullptr, std::string("distill: no specialist loaded for ") + case_name(c));
    return *p;
  }

  void validate_dims() const {
    require(loco != nullptr && recovery != nullptr && wbc != nullptr, "distill: all three specialists required");
    require(loco->act_dim == recovery->act_dim && loco->act_dim == wbc->act_dim,
            "distill: specialist action dims differ");
  }
};

/// One stored supervision pair: what the student saw, what the expert said.
struct DistillPair {
  Mat depth;
  Vec hist;
  Vec cmd;
  Vec target;
  CaseId case_id = CaseId::c_loco;
  bool used_expert = false;
};

struct DistillStats {
  double loss = 0.0;
  double rho_before = 0.0, rho_after = 0.0;
  bool suspended = false;
  double expert_fraction = 0.0;
  int steps = 0;
  std::array<int, kCaseCount> case_counts{};
  int sfi_injections = 0;
  int sfi_terminations = 0;
  int falls = 0;
  int episode_resets = 0;
};

struct DistillContext {
  std::vector<Env>* envs = nullptr;
  SpecialistSet teachers;
  StudentPolicy* student = nullptr;
  Adam* opt = nullptr;
  DistillConfig cfg;
  SchedulerState sched;
  RandomStream rng{1234};

  // depth pipeline; render_enabled=false feeds a constant max-range image
  bool render_enabled = true;
  CameraModel camera;
  CameraDrConfig camera_dr;
  AugmentConfig augment;

  // per-env persistent state (sized lazily on first iteration)
  std::vector<HistoryBuffer> history;
  std::vector<SfiMonitor> monitors;
  std::vector<TriangleMesh> static_meshes;
  std::vector<CameraModel> episode_cameras;
  std::vector<Vec> prev_executed;

  // last iteration's pairs, kept for inspection and tests
  std::vector<DistillPair> pairs;

  bool initialized = false;
};

namespace detail {

inline Vec noised_proprio(const ProprioState& p, const DistillConfig& cfg, RandomStream& rng) {
  Vec v = p.flatten();
  const int J = static_cast<int>(p.q.size());
  for (int i = 0; i < 3; ++i) v(i) += cfg.noise_vel * rng.uniform(-1.0, 1.0);        // gyro
  for (int i = 3; i < 6; ++i) v(i) += cfg.noise_angle * rng.uniform(-1.0, 1.0);     // gravity
  for (int i = 0; i < J; ++i) v(6 + i) += cfg.noise_angle * rng.uniform(-1.0, 1.0); // joints
  for (int i = 0; i < J; ++i) v(6 + J + i) += cfg.noise_vel * rng.uniform(-1.0, 1.0);
  return v;  // previous action stays clean: it is the agent's own memory
}

inline Vec specialist_obs(const ProprioState& p, const PrivState& pv) {
  const Vec a = p.flatten(), b = pv.flatten();
  Vec obs(a.size() + b.size());
  obs << a, b;
  return obs;
}

inline Mat render_student_depth(DistillContext& ctx, int e, const Env& env) {
  const CameraModel& cam = ctx.episode_cameras[static_cast<size_t>(e)];
  if (!ctx.render_enabled) return Mat::Constant(cam.height, cam.width, cam.max_range);
  const RobotState& s = env.state();
  const TriangleMesh own = make_agent_mesh(s, env.config().phys);
  const Mat3 R = s.base_quat().toRotationMatrix();
  const Vec3 head_pos = s.base_pos + R * Vec3(0, 0, env.config().phys.head_offset);
  const CameraPose pose = camera_world_pose(cam, head_pos, s.base_rpy);
  const Mat raw = render_depth(ctx.static_meshes[static_cast<size_t>(e)], &own, cam, pose);
  return augment_depth(raw, ctx.augment, ctx.rng, cam.near_clip, cam.max_range);
}

inline void begin_episode(DistillContext& ctx, int e, Env& env) {
  ResetMode mode = ResetMode::default_;
  if (ctx.rng.bernoulli(ctx.cfg.fallen_reset_fraction))
    mode = ctx.rng.bernoulli(0.5) ? ResetMode::fallen_supine : ResetMode::fallen_prone;
  else if (env.config().terrain == TerrainType::box || env.config().terrain == TerrainType::hanging_bar)
    mode = ResetMode::randomized_offset;
  env.reset(mode);
  env.set_reference(nullptr);
  env.set_case_coordination(false);
  // terrain geometry is deterministic per env config, so the mesh is reusable
  if (ctx.render_enabled && !ctx.static_meshes[static_cast<size_t>(e)].built())
    ctx.static_meshes[static_cast<size_t>(e)] = build_static_mesh(env.field());
  ctx.episode_cameras[static_cast<size_t>(e)] = randomize_camera(ctx.camera, ctx.camera_dr, ctx.rng);
  ctx.monitors[static_cast<size_t>(e)].clear();
  const Vec first = noised_proprio(env.proprio(Vec::Zero(env.layout().dof())), ctx.cfg, ctx.rng);
  ctx.history[static_cast<size_t>(e)].reset(first);
  ctx.prev_executed[static_cast<size_t>(e)] = Vec::Zero(env.layout().dof());
}

inline void init_context(DistillContext& ctx) {
  require(ctx.envs != nullptr && !ctx.envs->empty(), "distill: no environments");
  require(ctx.student != nullptr && ctx.opt != nullptr, "distill: student and optimizer required");
  ctx.cfg.validate();
  ctx.teachers.validate_dims();
  const int N = static_cast<int>(ctx.envs->size());
  ctx.history.assign(static_cast<size_t>(N), HistoryBuffer(ctx.cfg.history_steps));
  ctx.monitors.assign(static_cast<size_t>(N), SfiMonitor(ctx.cfg.sfi_window, ctx.cfg.sfi_variance_delta));
  ctx.static_meshes.assign(static_cast<size_t>(N), TriangleMesh{});
  ctx.episode_cameras.assign(static_cast<size_t>(N), ctx.camera);
  ctx.prev_executed.assign(static_cast<size_t>(N), Vec());
  ctx.sched.rho = ctx.cfg.rho_init;
  ctx.sched.delta_rho = ctx.cfg.delta_rho;
  ctx.sched.tau_low = ctx.cfg.tau_low;
  ctx.sched.tau_high = ctx.cfg.tau_high;
  ctx.sched.suspended = false;
  for (int e = 0; e < N; ++e) begin_episode(ctx, e, (*ctx.envs)[static_cast<size_t>(e)]);
  ctx.initialized = true;
}

}  // namespace detail

/// One outer-loop iteration: roll the mixed policy for steps_per_iter steps
/// across all envs while storing (student observation, expert action) pairs,
/// then run the supervised epochs and advance the rho scheduler.
inline DistillStats distillation_iteration(DistillContext& ctx) {
  if (!ctx.initialized) detail::init_context(ctx);
  std::vector<Env>& envs = *ctx.envs;
  const int N = static_cast<int>(envs.size());
  StudentPolicy& student = *ctx.student;

  DistillStats st;
  st.rho_before = ctx.sched.rho;
  ctx.pairs.clear();
  ctx.pairs.reserve(static_cast<size_t>(ctx.cfg.steps_per_iter * N));

  int expert_steps = 0;
  for (int t = 0; t < ctx.cfg.steps_per_iter; ++t) {
    for (int e = 0; e < N; ++e) {
      Env& env = envs[static_cast<size_t>(e)];

      // stochastic fall injection while nominally upright
      if (ctx.cfg.sfi_enabled && env.state().posture == Posture::upright &&
          ctx.rng.bernoulli(ctx.cfg.sfi_fall_prob)) {
        if (env.force_push()) {
          ++st.sfi_injections;
          ctx.monitors[static_cast<size_t>(e)].clear();
        }
      }

      const CaseId c = select_case(std::max(0.0, env.state().head_height), env.context_id(), ctx.cfg.head_threshold);
      ++st.case_counts[static_cast<int>(c)];
      env.set_case_coordination(c == CaseId::c_coor_1 || c == CaseId::c_coor_2);
      if (c == CaseId::c_coor_1 && ctx.teachers.coor1_reference != nullptr)
        env.set_reference(ctx.teachers.coor1_reference);
      else if (c == CaseId::c_coor_2 && ctx.teachers.coor2_reference != nullptr)
        env.set_reference(ctx.teachers.coor2_reference);

      // teacher sees clean privileged state; student sees noise + vision
      const ProprioState prop = env.proprio(ctx.prev_executed[static_cast<size_t>(e)]);
      const Vec teacher_obs = detail::specialist_obs(prop, env.privileged());
      const Vec a_star = ctx.teachers.by_case(c).act_mean(teacher_obs);

      const Mat depth = detail::render_student_depth(ctx, e, env);
      const Vec hist = ctx.history[static_cast<size_t>(e)].flatten();
      const VelocityCommand& cmd = env.command();
      Vec cmd_v(3);
      cmd_v << cmd.vx, cmd.vy, cmd.wz;
      const Vec a_student = student.act(depth, hist, cmd_v);

      const MixResult mix = mix_action(a_star, a_student, ctx.sched.rho, ctx.rng);
      if (mix.used_expert) ++expert_steps;

      // termination follows the selected specialist: falls are terminal
      // except while recovery supervises
      env.set_fall_latch(c != CaseId::c_rec);

      DistillPair pair;
      pair.depth = depth;
      pair.hist = hist;
      pair.cmd = cmd_v;
      pair.target = a_star;
      pair.case_id = c;
      pair.used_expert = mix.used_expert;
      ctx.pairs.push_back(std::move(pair));

      const EnvStep step = env.step(mix.executed);
      ctx.prev_executed[static_cast<size_t>(e)] = mix.executed;
      ctx.monitors[static_cast<size_t>(e)].push(env.state().head_height);
      ctx.history[static_cast<size_t>(e)].push(detail::noised_proprio(step.prop, ctx.cfg, ctx.rng));

      const bool stuck = ctx.cfg.sfi_enabled && sfi_terminate(ctx.monitors[static_cast<size_t>(e)], c);
      if (stuck) ++st.sfi_terminations;
      if (step.events.fell) ++st.falls;
      if (step.done || stuck) {
        ++st.episode_resets;
        detail::begin_episode(ctx, e, env);
      }
      ++st.steps;
    }
  }
  st.expert_fraction = st.steps > 0 ? static_cast<double>(expert_steps) / st.steps : 0.0;

  // supervised epochs over the stored pairs
  std::vector<TensorRef> refs;
  student.collect(refs);
  ctx.opt->lr = ctx.cfg.lr;
  const int B = static_cast<int>(ctx.pairs.size());
  const int chunk = B / ctx.cfg.minibatches;
  require(chunk >= 1, "distill: more minibatches than stored pairs");

  double loss_acc = 0.0;
  int updates = 0;
  for (int epoch = 0; epoch < ctx.cfg.epochs; ++epoch) {
    const std::vector<int> order = shuffled_indices(B, ctx.rng);
    for (int m = 0; m < ctx.cfg.minibatches; ++m) {
      const int lo = m * chunk;
      const int sz = (m == ctx.cfg.minibatches - 1) ? B - lo : chunk;
      std::vector<Mat> depth(static_cast<size_t>(sz));
      Mat hist(student.hist_dim(), sz), cmd(student.cmd_dim, sz), target(student.act_dim, sz);
      for (int i = 0; i < sz; ++i) {
        const DistillPair& p = ctx.pairs[static_cast<size_t>(order[static_cast<size_t>(lo + i)])];
        depth[static_cast<size_t>(i)] = p.depth;
        hist.col(i) = p.hist;
        cmd.col(i) = p.cmd;
        target.col(i) = p.target;
      }
      zero_grads(refs);
      const Mat out = student.forward(depth, hist, cmd);
      const double loss = distill_loss(out, target);
      if (!std::isfinite(loss)) throw NumericFault("distill: non-finite loss");
      const Mat dout = 2.0 * (out - target) / static_cast<double>(out.size());
      student.backward(dout);
      ctx.opt->step(refs);
      loss_acc += loss;
      ++updates;
    }
  }
  st.loss = loss_acc / updates;
  ctx.sched = update_rho(ctx.sched, st.loss);
  st.rho_after = ctx.sched.rho;
  st.suspended = ctx.sched.suspended;
  return st;
}

}  // namespace xloco
