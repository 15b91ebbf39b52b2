#pragma once

// Evaluation harness: runs a controller through scripted benchmark episodes
// and reports success rate and traversed distance, mean +/- std over seeds.
//
// Success rules:
//  - traversal tasks (slope, pit, stairs, bar, box): reach the far edge of the
//    8 m patch without a terminal fall, within the episode budget;
//  - recovery: starting from a fallen pose on flat ground, regain an upright
//    posture and hold it continuously for balance_seconds.
// D_trav is the final base x clamped to the patch, so a run that falls at
// x = 3 m scores 3.0 and a full traversal scores the patch length.

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "xloco/config.hpp"
#include "xloco/depthcam.hpp"
#include "xloco/env.hpp"
#include "xloco/policies.hpp"

namespace xloco {

// ---------------------------------------------------------------------------
// task table

struct EvalTaskSpec {
  std::string task;
  TerrainType terrain = TerrainType::flat;
  Range param{0.0, 0.0};  // slope in degrees, heights/clearances in meters
  Specialist specialist = Specialist::loco;  // the specialist that owns this task
  bool traversal = true;                     // false: recovery (stand up and balance)
};

/// Benchmark obstacle ranges per task; evaluation deliberately uses its own
/// ranges rather than the training curriculum's.
inline EvalTaskSpec eval_task_spec(const std::string& task) {
  EvalTaskSpec s;
  s.task = task;
  if (task == "slope") {
    s.terrain = TerrainType::slope;
    s.param = Range{15.0, 20.0};
    s.specialist = Specialist::loco;
  } else if (task == "pit") {
    s.terrain = TerrainType::pit;
    s.param = Range{0.30, 0.40};
    s.specialist = Specialist::loco;
  } else if (task == "stairs") {
    s.terrain = TerrainType::stairs;
    s.param = Range{0.10, 0.15};
    s.specialist = Specialist::loco;
  } else if (task == "bar") {
    s.terrain = TerrainType::hanging_bar;
    s.param = Range{0.87, 0.95};
    s.specialist = Specialist::wbc;
  } else if (task == "box") {
    s.terrain = TerrainType::box;
    s.param = Range{0.50, 0.65};
    s.specialist = Specialist::wbc;
  } else if (task == "recovery") {
    s.terrain = TerrainType::flat;
    s.param = Range{0.0, 0.0};
    s.specialist = Specialist::recovery;
    s.traversal = false;
  } else {
    throw ConfigError("eval: unknown task '" + task + "'");
  }
  return s;
}

// ---------------------------------------------------------------------------
// controllers

/// A policy under evaluation. begin() runs right after the episode reset;
/// act() produces the action for the current state; observe() sees the step
/// result (for history-keeping controllers).
struct EvalController {
  virtual ~EvalController() = default;
  virtual void begin(Env& env) { (void)env; }
  virtual Vec act(Env& env) = 0;
  virtual void observe(Env& env, const EnvStep& step) {
    (void)env;
    (void)step;
  }
};

/// Deterministic specialist rollout (action = policy mean). Whole-body
/// policies get their reference trajectory and coordination flag, mirroring
/// their training setup.
class SpecialistController : public EvalController {
 public:
  SpecialistController(SpecialistPolicy* policy, const ReferenceTrajectory* reference = nullptr)
      : policy_(policy), reference_(reference) {
    require(policy_ != nullptr, "eval: specialist controller needs a policy");
  }

  void begin(Env& env) override {
    last_action_ = Vec::Zero(env.layout().dof());
    env.set_reference(reference_);
    env.set_case_coordination(reference_ != nullptr);
  }

  Vec act(Env& env) override {
    const ProprioState prop = env.proprio(last_action_);
    const PrivState priv = env.privileged();
    const Vec a = prop.flatten(), b = priv.flatten();
    Vec obs(a.size() + b.size());
    obs << a, b;
    last_action_ = policy_->act_mean(obs);
    return last_action_;
  }

 private:
  SpecialistPolicy* policy_;
  const ReferenceTrajectory* reference_;
  Vec last_action_;
};

/// Distilled student rollout: depth image + proprio history + command, all
/// noise-free (evaluation is deterministic). When rendering is disabled the
/// depth input is the constant max-range image the student trained with.
class StudentController : public EvalController {
 public:
  StudentController(StudentPolicy* student, const CameraModel& camera, bool render_enabled)
      : student_(student), camera_(camera), render_(render_enabled) {
    require(student_ != nullptr, "eval: student controller needs a policy");
  }

  void begin(Env& env) override {
    env.set_reference(nullptr);
    env.set_case_coordination(false);
    last_action_ = Vec::Zero(env.layout().dof());
    history_ = HistoryBuffer(student_->history_steps);
    history_.reset(env.proprio(last_action_).flatten());
    // the obstacle parameter changes every episode, so the mesh cannot be
    // cached across episodes
    if (render_) static_mesh_ = build_static_mesh(env.field());
  }

  Vec act(Env& env) override {
    Mat depth;
    if (render_) {
      const RobotState& s = env.state();
      const TriangleMesh own = make_agent_mesh(s, env.config().phys);
      const Mat3 R = s.base_quat().toRotationMatrix();
      const Vec3 head_pos = s.base_pos + R * Vec3(0, 0, env.config().phys.head_offset);
      depth = render_depth(static_mesh_, &own, camera_, camera_world_pose(camera_, head_pos, s.base_rpy));
    } else {
      depth = Mat::Constant(camera_.height, camera_.width, camera_.max_range);
    }
    const VelocityCommand& c = env.command();
    Vec cmd(3);
    cmd << c.vx, c.vy, c.wz;
    last_action_ = student_->act(depth, history_.flatten(), cmd);
    return last_action_;
  }

  void observe(Env& env, const EnvStep& step) override {
    (void)env;
    history_.push(step.prop.flatten());
  }

 private:
  StudentPolicy* student_;
  CameraModel camera_;
  bool render_;
  TriangleMesh static_mesh_;
  HistoryBuffer history_{1};
  Vec last_action_;
};

// --- scripted harness fixtures ---------------------------------------------

/// Keels the robot over immediately; every episode ends in a terminal fall.
class AlwaysFallController : public EvalController {
 public:
  Vec act(Env& env) override {
    RobotState& s = env.mutable_state();
    s.base_rpy.y() = 1.45;
    s.base_lin_vel.setZero();
    s.base_ang_vel.setZero();
    return Vec::Zero(env.layout().dof());
  }
};

/// Teleports past the finish line in an upright pose; every episode succeeds
/// with the full patch traversed.
class TeleportOracleController : public EvalController {
 public:
  Vec act(Env& env) override {
    RobotState& s = env.mutable_state();
    s.base_pos.x() = env.field().patch_size + 0.5;
    const double ground = env.field().height_at(s.base_pos.x(), s.base_pos.y());
    s.base_pos.z() = ground + env.config().phys.l1 + env.config().phys.l2 - 0.05;
    s.base_rpy.setZero();
    s.base_lin_vel.setZero();
    s.base_ang_vel.setZero();
    return Vec::Zero(env.layout().dof());
  }
};

/// Walks the base to a fixed x, then keels over there: expected D_trav equals
/// the fall location.
class FallAtController : public EvalController {
 public:
  explicit FallAtController(double fall_x) : fall_x_(fall_x) {}

  void begin(Env& env) override {
    (void)env;
    placed_ = false;
  }

  Vec act(Env& env) override {
    RobotState& s = env.mutable_state();
    s.base_pos.x() = fall_x_;  // pinned so drift cannot move the fall point
    s.base_lin_vel.setZero();
    s.base_ang_vel.setZero();
    if (placed_) s.base_rpy.y() = 1.45;
    placed_ = true;
    return Vec::Zero(env.layout().dof());
  }

 private:
  double fall_x_;
  bool placed_ = false;
};

// ---------------------------------------------------------------------------
// episode runner

struct EvalEpisode {
  bool success = false;
  double d_trav = 0.0;
  int steps = 0;
};

/// One benchmark episode on an already-configured env. The caller picks the
/// reset mode (fallen poses for recovery) and sets the obstacle parameter
/// beforehand; the command is pinned here so every controller faces the same
/// objective.
inline EvalEpisode run_episode(Env& env, EvalController& ctrl, const EvalTaskSpec& spec, ResetMode mode,
                               double cmd_vx, double balance_seconds) {
  env.reset(mode);
  env.set_fall_latch(true);
  env.set_command(spec.traversal ? VelocityCommand{cmd_vx, 0.0, 0.0} : VelocityCommand{0.0, 0.0, 0.0});
  ctrl.begin(env);

  const double finish_x = env.field().patch_size;
  const int balance_steps_needed = std::max(1, static_cast<int>(balance_seconds / env.control_dt() + 0.5));
  const double stand_head = 1.1;  // same head-height threshold that separates fallen from upright cases

  EvalEpisode ep;
  int balance_steps = 0;
  for (int t = 0; t < env.max_steps(); ++t) {
    const Vec action = ctrl.act(env);
    const EnvStep step = env.step(action);
    ctrl.observe(env, step);
    ++ep.steps;

    const RobotState& s = env.state();
    ep.d_trav = clampd(s.base_pos.x(), 0.0, finish_x);

    if (spec.traversal) {
      if (step.events.fell) break;  // terminal fall: failure at the fall point
      if (s.base_pos.x() >= finish_x) {
        ep.success = true;
        break;
      }
      if (step.done) break;  // timeout without reaching the far edge
    } else {
      const bool standing = s.posture == Posture::upright && s.head_height >= stand_head;
      balance_steps = standing ? balance_steps + 1 : 0;
      if (balance_steps >= balance_steps_needed) {
        ep.success = true;
        break;
      }
      if (step.done) break;
    }
  }
  return ep;
}

// ---------------------------------------------------------------------------
// aggregation over episodes and seeds

struct EvalReport {
  std::string task;
  double r_succ_mean = 0.0, r_succ_std = 0.0;
  double d_trav_mean = 0.0, d_trav_std = 0.0;
  int seeds = 0, episodes_per_seed = 0;
  std::string config_hash;
  std::vector<double> per_seed_r_succ, per_seed_d_trav;
};

namespace eval_detail {

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double population_std(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace eval_detail

/// Full benchmark: `seeds` independent env streams, `episodes` episodes each.
/// Per-seed success rates and mean distances are averaged, and the reported
/// spread is the population std across seeds.
inline EvalReport evaluate(const RunConfig& cfg, const EvalTaskSpec& spec, EvalController& ctrl) {
  require(cfg.eval.episodes >= 1 && cfg.eval.seeds >= 1, "eval: episodes and seeds must be >= 1");

  EvalReport rep;
  rep.task = spec.task;
  rep.seeds = cfg.eval.seeds;
  rep.episodes_per_seed = cfg.eval.episodes;
  rep.config_hash = config_hash(cfg);

  for (int s = 0; s < cfg.eval.seeds; ++s) {
    EnvConfig ec = cfg.env;
    // the env flavor picks the reward registry (unused here) and whether
    // hitting the ground is terminal; fallen starts need it non-terminal
    ec.specialist = spec.traversal ? Specialist::loco : Specialist::recovery;
    ec.terrain = spec.terrain;
    ec.seed = cfg.env.seed + static_cast<uint64_t>(s);
    ec.env_index = 0;
    ec.pushes_enabled = false;  // the benchmark measures the policy, not push luck
    Env env(ec);

    // obstacle parameters are drawn from a stream independent of the env's own
    RandomStream param_rng = RandomStream::for_stream(ec.seed, 777001);

    double succ = 0.0, dist = 0.0;
    for (int e = 0; e < cfg.eval.episodes; ++e) {
      env.set_difficulty_param(spec.param.sample(param_rng));
      const ResetMode mode =
          spec.traversal ? ResetMode::default_
                         : (e % 2 == 0 ? ResetMode::fallen_supine : ResetMode::fallen_prone);
      const EvalEpisode ep = run_episode(env, ctrl, spec, mode, cfg.eval.cmd_vx, cfg.eval.balance_seconds);
      succ += ep.success ? 1.0 : 0.0;
      dist += ep.d_trav;
    }
    rep.per_seed_r_succ.push_back(succ / cfg.eval.episodes);
    rep.per_seed_d_trav.push_back(dist / cfg.eval.episodes);
  }

  rep.r_succ_mean = eval_detail::mean_of(rep.per_seed_r_succ);
  rep.r_succ_std = eval_detail::population_std(rep.per_seed_r_succ);
  rep.d_trav_mean = eval_detail::mean_of(rep.per_seed_d_trav);
  rep.d_trav_std = eval_detail::population_std(rep.per_seed_d_trav);
  require(rep.r_succ_mean >= 0.0 && rep.r_succ_mean <= 1.0, "eval: success rate out of [0,1]");
  require(rep.d_trav_mean >= 0.0 && rep.d_trav_mean <= 8.0, "eval: traversal distance out of [0,8]");
  return rep;
}

}  // namespace xloco
