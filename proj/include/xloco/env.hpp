#pragma once

#include <array>
#include <deque>
#include <string>
#include <vector>

#include "xloco/amp.hpp"
#include "xloco/common.hpp"
#include "xloco/core.hpp"
#include "xloco/heightfield.hpp"
#include "xloco/rewards.hpp"
#include "xloco/rng.hpp"

namespace xloco {

// ---------------------------------------------------------------------------
// Domain randomization

struct Range {
  double lo = 0.0, hi = 0.0;
  double sample(RandomStream& rng) const {
    require(lo <= hi, "Range: lo > hi");
    return lo == hi ? lo : rng.uniform(lo, hi);
  }
};

struct DrConfig {
  Range static_friction{0.6, 1.0};
  Range dynamic_friction{0.4, 0.8};
  Range payload{-1.0, 5.0};  // kg
  Range init_joint_scale{0.8, 1.2};
  Range push_interval{5.0, 8.0};  // s
  Range push_vx{-0.5, 0.5}, push_vy{-0.5, 0.5}, push_vz{-0.2, 0.2};
  Range push_roll{-0.52, 0.52}, push_pitch{-0.52, 0.52}, push_yaw{-0.78, 0.78};
  Range kp_scale{0.8, 1.2}, kd_scale{0.8, 1.2};
  double base_trigger = 1.0;          // chance an elapsed push actually fires
  double vulnerability_factor = 2.0;  // multiplier near vulnerable scenarios
};

struct EpisodePhysics {
  double static_friction = 0.8;
  double dynamic_friction = 0.6;
  double payload = 0.0;
  double kp_scale = 1.0, kd_scale = 1.0;
  double push_interval = 6.5;
  Vec init_joint_scale;  // per-joint multiplier on the nominal angles
};

inline EpisodePhysics sample_domain_randomization(const DrConfig& cfg, RandomStream& rng, int dof) {
  EpisodePhysics p;
  p.static_friction = cfg.static_friction.sample(rng);
  p.dynamic_friction = cfg.dynamic_friction.sample(rng);
  p.payload = cfg.payload.sample(rng);
  p.kp_scale = cfg.kp_scale.sample(rng);
  p.kd_scale = cfg.kd_scale.sample(rng);
  p.push_interval = cfg.push_interval.sample(rng);
  p.init_joint_scale.resize(dof);
  for (int j = 0; j < dof; ++j) p.init_joint_scale(j) = cfg.init_joint_scale.sample(rng);
  return p;
}

// ---------------------------------------------------------------------------
// Robot state

enum class Posture { upright, prone, supine, transitional };

inline const char* posture_name(Posture p) {
  switch (p) {
    case Posture::upright: return "upright";
    case Posture::prone: return "prone";
    case Posture::supine: return "supine";
    case Posture::transitional: return "transitional";
  }
  return "?";
}

struct RobotState {
  Vec3 base_pos = Vec3::Zero();
  Vec3 base_rpy = Vec3::Zero();  // roll, pitch, yaw
  Vec3 base_lin_vel = Vec3::Zero();
  Vec3 base_ang_vel = Vec3::Zero();
  Vec q, qdot;
  double head_height = 0.0;
  std::array<bool, 2> contacts{false, false};
  Posture posture = Posture::upright;

  Eigen::Quaterniond base_quat() const {
    return Eigen::Quaterniond(Eigen::AngleAxisd(base_rpy.z(), Vec3::UnitZ()) *
                              Eigen::AngleAxisd(base_rpy.y(), Vec3::UnitY()) *
                              Eigen::AngleAxisd(base_rpy.x(), Vec3::UnitX()));
  }
  double tilt() const {  // angle between the body z-axis and world up
    return std::acos(clampd(std::cos(base_rpy.x()) * std::cos(base_rpy.y()), -1.0, 1.0));
  }
  /// Gravity direction projected into the torso frame.
  Vec3 gravity_dir() const { return base_quat().conjugate() * Vec3(0, 0, -1); }

  void validate() const {
    if (!base_pos.allFinite() || !base_rpy.allFinite() || !base_lin_vel.allFinite() || !base_ang_vel.allFinite() ||
        !q.allFinite() || !qdot.allFinite())
      throw NumericFault("RobotState: non-finite");
  }
};

// ---------------------------------------------------------------------------
// Surrogate dynamics

struct SurrogateParams {
  double joint_inertia = 0.05;
  double joint_damping = 0.05;
  double l1 = 0.4, l2 = 0.4;   // thigh and shank lengths
  double min_ext = 0.15;       // leg extension floor
  double head_offset = 0.55;   // head above the base along the body axis
  double z_spring = 400.0, z_damp = 40.0;
  double prop_gain = 12.0;     // stance propulsion tracking rate
  double lateral_drag = 4.0;
  double yaw_gain = 10.0;
  double track_width = 0.3;    // differential-drive yaw base
  double att_spring = 60.0, att_damp = 12.0;
  double topple_rate = 6.0;
  double right_gain = 1.2;     // fallen-pitch authority per unit joint speed
  double crawl_scale = 0.3;    // crawling propulsion fraction when fallen
  double fall_tilt = 0.6;      // stability margin threshold (rad)
  double fall_time = 0.2;      // s of violated margin before the fall latches
  double fall_head = 0.4;      // m; below this while commanded upright = fall
  double fallen_tilt = 1.2;    // tilt treated as lying
  double gravity = 9.81;
  double lying_height = 0.25;
  double max_step_up = 0.35;   // climbable rise at full leg extension
  double climb_crouch_gain = 0.8;
  double mass = 35.0;
  double contact_eps = 0.02;
};

struct LegIndices {
  int l_hip = -1, l_knee = -1, r_hip = -1, r_knee = -1, waist_pitch = -1;

  static LegIndices resolve(const JointLayout& lay) {
    LegIndices li;
    li.l_hip = lay.index_of("left_hip_pitch");
    li.l_knee = lay.index_of("left_knee");
    li.r_hip = lay.index_of("right_hip_pitch");
    li.r_knee = lay.index_of("right_knee");
    for (int j = 0; j < lay.dof(); ++j)
      if (lay.joint(j).name == "waist_pitch") li.waist_pitch = j;
    require(li.l_hip >= 0 && li.l_knee >= 0 && li.r_hip >= 0 && li.r_knee >= 0,
            "surrogate: layout must provide hip_pitch and knee joints on both legs");
    return li;
  }
};

/// Per-leg extension: l1 cos(hip) + l2 cos(hip + knee), floored at min_ext.
inline double leg_extension(double hip, double knee, const SurrogateParams& p) {
  return std::max(p.min_ext, p.l1 * std::cos(hip) + p.l2 * std::cos(hip + knee));
}

/// Horizontal foot offset ahead of the base for the same leg pose.
inline double leg_offset(double hip, double knee, const SurrogateParams& p) {
  return p.l1 * std::sin(hip) + p.l2 * std::sin(hip + knee);
}

struct StepEvents {
  bool fell = false;
  bool collision = false;
  bool pushed = false;
  std::array<bool, 2> first_contact{false, false};
};

/// One 200 Hz substep of the surrogate model (joints + support kinematics).
/// `prev_offsets` carries each leg's horizontal foot offset from the previous
/// substep so stance propulsion can difference it.
inline StepEvents surrogate_substep(RobotState& s, const Vec& tau, const EpisodePhysics& phys,
                                    const SurrogateParams& p, const JointLayout& lay, const LegIndices& li,
                                    const Heightfield& hf, Vec2& prev_offsets, double& margin_timer, double dt,
                                    bool command_upright = true) {
  require(tau.size() == s.q.size(), "surrogate_substep: torque length mismatch");
  StepEvents ev;

  // joints: damped double integrators, hard position limits
  const Vec qdd = (tau - p.joint_damping * s.qdot) / p.joint_inertia;
  s.qdot += dt * qdd;
  for (int j = 0; j < lay.dof(); ++j) {
    const double vcap = 3.0 * lay.joint(j).vel_limit;
    s.qdot(j) = clampd(s.qdot(j), -vcap, vcap);
  }
  s.q += dt * s.qdot;
  for (int j = 0; j < lay.dof(); ++j) {
    const auto& info = lay.joint(j);
    if (s.q(j) < info.q_min) {
      s.q(j) = info.q_min;
      s.qdot(j) = std::max(0.0, s.qdot(j));
    } else if (s.q(j) > info.q_max) {
      s.q(j) = info.q_max;
      s.qdot(j) = std::min(0.0, s.qdot(j));
    }
  }

  const double tilt = s.tilt();
  const bool fallen = tilt >= p.fallen_tilt;

  // leg geometry
  const double ext_l = leg_extension(s.q(li.l_hip), s.q(li.l_knee), p);
  const double ext_r = leg_extension(s.q(li.r_hip), s.q(li.r_knee), p);
  const double ext = std::max(ext_l, ext_r);
  const Vec2 offsets(leg_offset(s.q(li.l_hip), s.q(li.l_knee), p), leg_offset(s.q(li.r_hip), s.q(li.r_knee), p));

  const double ground = hf.height_at(s.base_pos.x(), s.base_pos.y());
  const double support_z = fallen ? ground + p.lying_height : ground + ext * std::cos(std::min(tilt, 1.0));

  // foot contacts from per-leg extension against local terrain
  std::array<bool, 2> was_contact = s.contacts;
  const double foot_z_l = s.base_pos.z() - ext_l * std::cos(std::min(tilt, 1.0));
  const double foot_z_r = s.base_pos.z() - ext_r * std::cos(std::min(tilt, 1.0));
  const bool airborne = s.base_pos.z() > support_z + 0.5 * p.min_ext;
  s.contacts[0] = !airborne && (foot_z_l - ground <= p.contact_eps || fallen);
  s.contacts[1] = !airborne && (foot_z_r - ground <= p.contact_eps || fallen);
  for (int i = 0; i < 2; ++i) ev.first_contact[static_cast<size_t>(i)] = s.contacts[i] && !was_contact[i];

  // vertical: spring-damper toward the support height when grounded,
  // ballistic when airborne
  if (airborne) {
    s.base_lin_vel.z() -= dt * p.gravity;
  } else {
    const double acc = p.z_spring * (support_z - s.base_pos.z()) - p.z_damp * s.base_lin_vel.z();
    s.base_lin_vel.z() += dt * acc;
  }

  // planar propulsion: stance feet holding the ground turn -d(offset)/dt into
  // base motion; weaker when crawling, scaled down by poor dynamic friction
  double prop = 0.0;
  int stance = 0;
  Vec2 doff = (offsets - prev_offsets) / dt;
  for (int i = 0; i < 2; ++i)
    if (s.contacts[static_cast<size_t>(i)]) {
      prop += -doff(i);
      ++stance;
    }
  const double friction_gain = clampd(phys.dynamic_friction / 0.8, 0.0, 1.0);
  if (stance > 0) {
    prop = prop / stance * friction_gain * (fallen ? p.crawl_scale : 1.0);
    const double yaw_target =
        (s.contacts[0] && s.contacts[1]) ? (-doff(0) + doff(1)) / p.track_width * friction_gain : 0.0;
    const double cy = std::cos(s.base_rpy.z()), sy = std::sin(s.base_rpy.z());
    const double vx_body = cy * s.base_lin_vel.x() + sy * s.base_lin_vel.y();
    const double vy_body = -sy * s.base_lin_vel.x() + cy * s.base_lin_vel.y();
    const double vx_new = vx_body + dt * p.prop_gain * (prop - vx_body);
    const double vy_new = vy_body - dt * p.lateral_drag * vy_body;
    s.base_lin_vel.x() = cy * vx_new - sy * vy_new;
    s.base_lin_vel.y() = sy * vx_new + cy * vy_new;
    if (!fallen) s.base_ang_vel.z() += dt * p.yaw_gain * (yaw_target - s.base_ang_vel.z());
  }
  prev_offsets = offsets;

  // attitude: upright righting spring inside the stability margin, topple
  // beyond it, joint-driven righting when lying
  const double margin = p.fall_tilt - tilt;
  if (fallen) {
    double drive = -0.5 * (s.qdot(li.l_hip) + s.qdot(li.r_hip));
    if (li.waist_pitch >= 0) drive = 0.5 * drive - 0.5 * s.qdot(li.waist_pitch);
    const double toward = s.base_rpy.y() > 0 ? -1.0 : 1.0;  // sign that rights the body
    s.base_ang_vel.y() += dt * (p.right_gain * drive * toward - 2.0 * s.base_ang_vel.y());
    s.base_ang_vel.x() += dt * (-p.att_spring * 0.1 * s.base_rpy.x() - 2.0 * s.base_ang_vel.x());
  } else if (margin >= 0.0 && stance > 0) {
    s.base_ang_vel.x() += dt * (-p.att_spring * s.base_rpy.x() - p.att_damp * s.base_ang_vel.x());
    s.base_ang_vel.y() += dt * (-p.att_spring * s.base_rpy.y() - p.att_damp * s.base_ang_vel.y());
  } else if (margin < 0.0) {
    s.base_ang_vel.x() += dt * p.topple_rate * (s.base_rpy.x() > 0 ? 1.0 : -1.0) * std::abs(std::sin(s.base_rpy.x()));
    s.base_ang_vel.y() += dt * p.topple_rate * (s.base_rpy.y() > 0 ? 1.0 : -1.0) * std::abs(std::sin(s.base_rpy.y())) +
                          dt * p.topple_rate * 0.2;
  }

  // integrate pose
  s.base_pos += dt * s.base_lin_vel;
  s.base_rpy += dt * s.base_ang_vel;
  s.base_rpy.x() = clampd(s.base_rpy.x(), -M_PI, M_PI);
  s.base_rpy.y() = clampd(s.base_rpy.y(), -M_PI, M_PI);

  // obstacle gates: walls too tall to step onto block forward progress;
  // overhead bars too low for the current head height do the same
  {
    const PatchMeta& patch = hf.patch_at(s.base_pos.x(), s.base_pos.y());
    double pcol = std::floor((s.base_pos.x() - hf.origin.x()) / hf.patch_size);
    pcol = clampd(pcol, 0.0, static_cast<double>(hf.patch_cols - 1));
    const double local_x = s.base_pos.x() - hf.origin.x() - pcol * hf.patch_size;
    const double look = 0.15;
    const double ahead = hf.height_at(s.base_pos.x() + look, s.base_pos.y());
    const double rise = ahead - ground;
    const double crouch = std::max(0.0, p.l1 + p.l2 - 0.016 - ext);
    const double clearance_bonus = 0.5 * std::max(0.0, std::max(foot_z_l, foot_z_r) - ground);
    const double climbable = p.max_step_up + p.climb_crouch_gain * crouch + clearance_bonus;
    bool blocked = false;
    if (rise > climbable && !fallen) blocked = true;
    if (patch.type == TerrainType::hanging_bar && std::abs(local_x - patch.bar_x) < 0.3 &&
        s.head_height > patch.bar_clearance)
      blocked = true;
    if (blocked) {
      const double cy = std::cos(s.base_rpy.z()), sy = std::sin(s.base_rpy.z());
      const double vx_body = cy * s.base_lin_vel.x() + sy * s.base_lin_vel.y();
      if (vx_body > 0.0) {  // the wall absorbs the forward component
        ev.collision = true;
        const double vy_body = -sy * s.base_lin_vel.x() + cy * s.base_lin_vel.y();
        s.base_lin_vel.x() = -sy * vy_body;
        s.base_lin_vel.y() = cy * vy_body;
      }
    }
  }

  s.head_height = s.base_pos.z() + p.head_offset * std::cos(tilt);

  // posture bookkeeping and fall latch
  if (margin < 0.0)
    margin_timer += dt;
  else
    margin_timer = 0.0;
  if (fallen)
    s.posture = s.base_rpy.y() < 0 ? Posture::supine : Posture::prone;
  else if (tilt > p.fall_tilt)
    s.posture = Posture::transitional;
  else
    s.posture = Posture::upright;
  if (command_upright && (margin_timer >= p.fall_time || s.head_height < p.fall_head)) ev.fell = true;

  s.validate();
  return ev;
}

// ---------------------------------------------------------------------------
// Push injection

struct PushContext {
  bool coordination_case = false;  // agent currently in a c_coor situation
  double wz_cmd = 0.0;
};

/// Fires with probability base_trigger (times the vulnerability factor when
/// |wz_cmd| > 0.5 or the agent is in a coordination case) and adds the Table
/// II velocity deltas to the base.
inline bool inject_push(RobotState& s, const DrConfig& cfg, const PushContext& ctx, RandomStream& rng) {
  const bool vulnerable = std::abs(ctx.wz_cmd) > 0.5 || ctx.coordination_case;
  const double trigger = clampd(cfg.base_trigger * (vulnerable ? cfg.vulnerability_factor : 1.0), 0.0, 1.0);
  if (!rng.bernoulli(trigger)) return false;
  s.base_lin_vel += Vec3(cfg.push_vx.sample(rng), cfg.push_vy.sample(rng), cfg.push_vz.sample(rng));
  s.base_ang_vel += Vec3(cfg.push_roll.sample(rng), cfg.push_pitch.sample(rng), cfg.push_yaw.sample(rng));
  return true;
}

// ---------------------------------------------------------------------------
// Motion command assembly

/// Flattened reference target fed to the whole-body specialist:
/// [phase(1), base pose(6), reference joints(J)] at desk scale, padded or
/// truncated to m_dim; the 52-wide layout adds derived body targets.
inline Vec motion_command(const ReferenceTrajectory& tr, int frame, const JointLayout& lay, int m_dim) {
  require(frame >= 0 && frame < tr.frames(), "motion_command: frame out of range");
  const int J = lay.dof();
  const double phase = tr.frames() > 1 ? static_cast<double>(frame) / (tr.frames() - 1) : 0.0;
  if (m_dim == 52 && J == 23) {
    Vec m(52);
    int k = 0;
    m(k++) = phase;
    const Vec3 base = tr.base.col(frame).head<3>();
    const Mat3 R = rot_from_euler(tr.base.col(frame).tail<3>());
    const std::array<Vec3, 6> offsets = {Vec3(0, 0, 0),        Vec3(0, 0, 0.55),   Vec3(0.0, 0.1, -0.7),
                                         Vec3(0.0, -0.1, -0.7), Vec3(0.0, 0.25, 0.2), Vec3(0.0, -0.25, 0.2)};
    for (const auto& off : offsets) {
      const Vec3 pb = base + R * off;
      m.segment<3>(k) = pb;
      k += 3;
    }
    for (int b = 0; b < 3; ++b) {  // 6D rotation (first two columns) per body
      m.segment<3>(k) = R.col(0);
      m.segment<3>(k + 3) = R.col(1);
      k += 6;
    }
    for (int j = 0; j < 15; ++j) m(k++) = tr.joints(j, frame);
    return m;
  }
  Vec m = Vec::Zero(m_dim);
  int k = 0;
  auto put = [&](double v) {
    if (k < m_dim) m(k++) = v;
  };
  put(phase);
  for (int i = 0; i < 6; ++i) put(tr.base(i, frame));
  for (int j = 0; j < J; ++j) put(tr.joints(j, frame));
  return m;
}

// ---------------------------------------------------------------------------
// Environment

enum class ResetMode { default_, fallen_supine, fallen_prone, randomized_offset };

struct EnvConfig {
  std::string joint_profile = "compact8";
  Specialist specialist = Specialist::loco;
  double dt = 1.0 / 200.0;
  int control_decimation = 4;  // 50 Hz control
  double episode_seconds = 20.0;
  TerrainType terrain = TerrainType::flat;
  double difficulty = 0.0;
  bool use_difficulty_param = false;  // interpret difficulty as a raw parameter
  double difficulty_param = 0.0;
  bool pushes_enabled = true;
  double push_trigger = 1.0;
  int scan_h = 143;  // elevation samples
  int m_dim = 15;    // motion-command width
  Range cmd_vx{-0.6, 1.0};
  Range cmd_vy{0.0, 0.0};
  Range cmd_wz{-0.78, 0.78};
  DrConfig dr;
  SurrogateParams phys;
  RewardParams rew;
  HeightScanConfig scan;
  TerrainRanges ranges;
  uint64_t seed = 1;
  int env_index = 0;
};

struct EnvStep {
  ProprioState prop;
  PrivState priv;
  RewardBreakdown reward;
  RewardState reward_state;
  bool done = false;
  bool timeout = false;
  StepEvents events;
};

class Env {
 public:
  explicit Env(const EnvConfig& cfg)
      : cfg_(cfg),
        layout_(make_layout(cfg.joint_profile)),
        gains_(PdGains::from_layout(layout_)),
        legs_(LegIndices::resolve(layout_)),
        rng_(RandomStream::for_stream(cfg.seed, static_cast<uint64_t>(cfg.env_index))),
        registry_(make_registry(cfg.specialist, layout_, cfg.rew)) {
    require(cfg.control_decimation >= 1, "EnvConfig: control_decimation >= 1");
    require(cfg.dt > 0.0, "EnvConfig: dt > 0");
    cfg_.dr.base_trigger = cfg.push_trigger;
    scan_cfg_ = cfg.scan;
    // observations must have their final shape even before the first reset
    state_.q = layout_.q_default();
    state_.qdot = Vec::Zero(layout_.dof());
    prev_action_ = Vec::Zero(layout_.dof());
    prev_prev_action_ = Vec::Zero(layout_.dof());
    prev_qdot_ = state_.qdot;
  }

  const JointLayout& layout() const { return layout_; }
  const Heightfield& field() const { return hf_; }
  const RobotState& state() const { return state_; }
  const VelocityCommand& command() const { return cmd_; }
  const EpisodePhysics& physics() const { return phys_; }
  double control_dt() const { return cfg_.dt * cfg_.control_decimation; }
  int steps_taken() const { return steps_; }
  int max_steps() const { return static_cast<int>(cfg_.episode_seconds / control_dt() + 0.5); }

  void set_reference(const ReferenceTrajectory* tr) { reference_ = tr; }
  void set_command(const VelocityCommand& c) { cmd_ = c; }
  void set_case_coordination(bool v) { coordination_case_ = v; }
  void set_amp_discriminator_value(double d) { amp_d_ = d; }
  /// Whether hitting the ground latches a terminal fall. Recovery-supervised
  /// phases disable it so the agent may get back up.
  void set_fall_latch(bool enabled) { fall_latch_ = enabled; }
  /// Curriculum hook; takes effect at the next reset.
  void set_difficulty(double d) { cfg_.difficulty = clampd(d, 0.0, 1.0); }
  /// Raw obstacle parameter (slope in degrees, heights/clearances in meters);
  /// takes effect at the next reset.
  void set_difficulty_param(double p) {
    cfg_.use_difficulty_param = true;
    cfg_.difficulty_param = p;
  }
  /// Direct state access for scripted interventions (harness fixtures).
  RobotState& mutable_state() { return state_; }
  const EnvConfig& config() const { return cfg_; }

  /// Immediate push (stochastic fall injection), bypassing the interval
  /// schedule but keeping the trigger/vulnerability rules.
  bool force_push() { return inject_push(state_, cfg_.dr, PushContext{coordination_case_, cmd_.wz}, rng_); }

  RobotState reset(ResetMode mode) {
    const PatchMeta meta = cfg_.use_difficulty_param
                               ? make_patch_meta_param(cfg_.terrain, cfg_.difficulty_param)
                               : make_patch_meta(cfg_.terrain, cfg_.difficulty, cfg_.ranges);
    hf_ = generate_field({meta}, 1, 1, TerrainGridConfig{});
    phys_ = sample_domain_randomization(cfg_.dr, rng_, layout_.dof());

    state_ = RobotState{};
    state_.q = layout_.q_default().cwiseProduct(phys_.init_joint_scale);
    state_.qdot = Vec::Zero(layout_.dof());

    double start_x = 1.0;
    const PatchMeta& m = hf_.patches.front();
    switch (mode) {
      case ResetMode::default_:
        break;
      case ResetMode::fallen_supine:
      case ResetMode::fallen_prone: {
        state_.base_rpy.y() = (mode == ResetMode::fallen_supine ? -1.0 : 1.0) * rng_.uniform(1.3, 1.57);
        for (int j = 0; j < layout_.dof(); ++j)
          state_.q(j) = clampd(state_.q(j) + rng_.uniform(-0.4, 0.4), layout_.joint(j).q_min, layout_.joint(j).q_max);
        break;
      }
      case ResetMode::randomized_offset: {
        if (m.type == TerrainType::box)
          start_x = m.box_x - rng_.uniform(0.0, 0.55) + rng_.uniform(-0.15, 0.15);
        else if (m.type == TerrainType::hanging_bar)
          start_x = m.bar_x - rng_.uniform(3.0, 3.5);
        else
          start_x = 1.0 + rng_.uniform(-0.15, 0.15);
        break;
      }
    }
    state_.base_pos.x() = start_x;
    state_.base_pos.y() = 0.5 * hf_.patch_size;
    const double ground = hf_.height_at(state_.base_pos.x(), state_.base_pos.y());
    const bool lying = mode == ResetMode::fallen_supine || mode == ResetMode::fallen_prone;
    if (lying) {
      state_.base_pos.z() = ground + cfg_.phys.lying_height;
      state_.posture = mode == ResetMode::fallen_supine ? Posture::supine : Posture::prone;
    } else {
      const double ext = std::max(leg_extension(state_.q(legs_.l_hip), state_.q(legs_.l_knee), cfg_.phys),
                                  leg_extension(state_.q(legs_.r_hip), state_.q(legs_.r_knee), cfg_.phys));
      state_.base_pos.z() = ground + ext;
      state_.posture = Posture::upright;
    }
    state_.head_height = state_.base_pos.z() + cfg_.phys.head_offset * std::cos(state_.tilt());

    cmd_ = VelocityCommand{cfg_.cmd_vx.sample(rng_), cfg_.cmd_vy.sample(rng_), cfg_.cmd_wz.sample(rng_)};
    prev_action_ = Vec::Zero(layout_.dof());
    prev_prev_action_ = Vec::Zero(layout_.dof());
    prev_qdot_ = state_.qdot;
    prev_offsets_ = Vec2(leg_offset(state_.q(legs_.l_hip), state_.q(legs_.l_knee), cfg_.phys),
                         leg_offset(state_.q(legs_.r_hip), state_.q(legs_.r_knee), cfg_.phys));
    margin_timer_ = 0.0;
    push_timer_ = 0.0;
    air_time_ = Vec2::Zero();
    steps_ = 0;
    start_x_ = start_x;
    reference_frame_ = 0;
    return state_;
  }

  /// One 50 Hz control step: PD torques from the action, decimated substeps,
  /// push schedule, rewards, observations, termination.
  EnvStep step(const Vec& action) {
    require(action.size() == layout_.dof(), "Env::step: action length mismatch");
    require(all_finite(action), "Env::step: non-finite action");
    EnvStep out;

    PdGains gains = gains_;
    gains.kp *= phys_.kp_scale;
    gains.kd *= phys_.kd_scale;
    const Vec q_target = action_to_target(action, gains_);

    Vec tau = Vec::Zero(layout_.dof());
    StepEvents events;
    for (int k = 0; k < cfg_.control_decimation; ++k) {
      tau = pd_torque(q_target, state_.q, state_.qdot, gains);
      const StepEvents ev = surrogate_substep(state_, tau, phys_, cfg_.phys, layout_, legs_, hf_, prev_offsets_,
                                              margin_timer_, cfg_.dt,
                                              fall_latch_ && cfg_.specialist != Specialist::recovery);
      events.fell |= ev.fell;
      events.collision |= ev.collision;
      events.first_contact[0] |= ev.first_contact[0];
      events.first_contact[1] |= ev.first_contact[1];
    }

    // pushes on the sampled interval
    push_timer_ += control_dt();
    if (cfg_.pushes_enabled && push_timer_ >= phys_.push_interval) {
      push_timer_ = 0.0;
      PushContext ctx{coordination_case_, cmd_.wz};
      events.pushed = inject_push(state_, cfg_.dr, ctx, rng_);
    }

    // air time per foot (50 Hz bookkeeping)
    for (int i = 0; i < 2; ++i) {
      if (state_.contacts[static_cast<size_t>(i)]) {
        if (events.first_contact[static_cast<size_t>(i)]) first_contact_latch_[static_cast<size_t>(i)] = true;
      } else {
        air_time_(i) += control_dt();
      }
    }

    fill_reward_state(action, tau, events, out.reward_state);
    out.reward = evaluate_registry(registry_, out.reward_state);

    // consume the first-contact credit and reset air time
    for (int i = 0; i < 2; ++i)
      if (first_contact_latch_[static_cast<size_t>(i)]) {
        air_time_(i) = 0.0;
        first_contact_latch_[static_cast<size_t>(i)] = false;
      }

    ++steps_;
    if (reference_ != nullptr && reference_frame_ + 1 < reference_->frames()) ++reference_frame_;

    out.events = events;
    out.timeout = steps_ >= max_steps();
    out.done = events.fell || out.timeout;
    out.prop = proprio(action);
    out.priv = privileged();
    prev_prev_action_ = prev_action_;
    prev_action_ = action;
    prev_qdot_ = state_.qdot;
    return out;
  }

  ProprioState proprio(const Vec& last_action) const {
    ProprioState p;
    p.ang_vel = state_.base_ang_vel;
    p.gravity_dir = state_.gravity_dir();
    p.q = state_.q;
    p.qdot = state_.qdot;
    p.last_action = last_action;
    return p;
  }

  PrivState privileged() const {
    PrivState pv;
    pv.lin_vel = state_.base_lin_vel;
    pv.head_height = state_.head_height;
    pv.ee_pos = foot_positions_rel();
    pv.ee_vel = Vec::Zero(6);
    pv.ee_vel.head<3>() = state_.base_lin_vel;
    pv.height_samples = height_samples(hf_, state_.base_pos, state_.base_rpy.z(), scan_cfg_);
    if (reference_ != nullptr)
      pv.motion_cmd = motion_command(*reference_, reference_frame_, layout_, cfg_.m_dim);
    else
      pv.motion_cmd = Vec::Zero(cfg_.m_dim);
    return pv;
  }

  double distance_fraction() const {
    return clampd((state_.base_pos.x() - start_x_) / (hf_.patch_size - start_x_), 0.0, 1.0);
  }
  /// Patch context, active once the obstacle is inside a 1.5 m look-ahead
  /// window (and until the agent has passed it).
  int context_id() const {
    const PatchMeta& m = hf_.patch_at(state_.base_pos.x(), state_.base_pos.y());
    if (m.context_id == 0) return 0;
    double pcol = std::floor((state_.base_pos.x() - hf_.origin.x()) / hf_.patch_size);
    pcol = clampd(pcol, 0.0, static_cast<double>(hf_.patch_cols - 1));
    const double local_x = state_.base_pos.x() - hf_.origin.x() - pcol * hf_.patch_size;
    const double obstacle_x = m.type == TerrainType::box ? m.box_x : m.bar_x;
    const double obstacle_end = m.type == TerrainType::box ? m.box_x + m.box_len : m.bar_x + 0.5;
    return (local_x > obstacle_x - 1.5 && local_x < obstacle_end) ? m.context_id : 0;
  }

 private:
  Vec foot_positions_rel() const {
    Vec e(6);
    const double ext_l = leg_extension(state_.q(legs_.l_hip), state_.q(legs_.l_knee), cfg_.phys);
    const double ext_r = leg_extension(state_.q(legs_.r_hip), state_.q(legs_.r_knee), cfg_.phys);
    const double off_l = leg_offset(state_.q(legs_.l_hip), state_.q(legs_.l_knee), cfg_.phys);
    const double off_r = leg_offset(state_.q(legs_.r_hip), state_.q(legs_.r_knee), cfg_.phys);
    e << off_l, 0.1, -ext_l, off_r, -0.1, -ext_r;
    return e;
  }

  void fill_reward_state(const Vec& action, const Vec& tau, const StepEvents& ev, RewardState& rs) const {
    rs.q = state_.q;
    rs.qdot = state_.qdot;
    rs.qddot = (state_.qdot - prev_qdot_) / control_dt();
    rs.tau = tau;
    rs.action = action;
    rs.prev_action = prev_action_;
    rs.prev_prev_action = prev_prev_action_;
    rs.base_lin_vel = state_.base_lin_vel;
    rs.base_ang_vel = state_.base_ang_vel;
    rs.gravity_dir = state_.gravity_dir();
    rs.base_height = state_.base_pos.z() - hf_.height_at(state_.base_pos.x(), state_.base_pos.y());
    rs.head_height = state_.head_height;
    rs.cmd = cmd_;
    rs.foot_y_base = Vec2(0.1, -0.1);
    const Vec feet = foot_positions_rel();
    const double cy = std::cos(state_.base_rpy.z()), sy = std::sin(state_.base_rpy.z());
    for (int i = 0; i < 2; ++i) {
      const double fx = feet(3 * i), fy = feet(3 * i + 1);
      rs.foot_pos_xy(0, i) = state_.base_pos.x() + cy * fx - sy * fy;
      rs.foot_pos_xy(1, i) = state_.base_pos.y() + sy * fx + cy * fy;
      const double foot_z = state_.base_pos.z() + feet(3 * i + 2);
      rs.foot_height(i) = foot_z - hf_.height_at(rs.foot_pos_xy(0, i), rs.foot_pos_xy(1, i));
      const bool contact = state_.contacts[static_cast<size_t>(i)];
      const double slip = contact ? state_.base_lin_vel.head<2>().norm() *
                                        std::max(0.0, 1.0 - phys_.dynamic_friction / 0.8)
                                  : 0.0;
      rs.foot_speed(i) = slip;
      rs.foot_speed_xy(i) = state_.base_lin_vel.head<2>().norm();
      rs.foot_contact[static_cast<size_t>(i)] = contact;
      rs.foot_first_contact[static_cast<size_t>(i)] = first_contact_latch_[static_cast<size_t>(i)];
      rs.foot_air_time(i) = air_time_(i);
      rs.foot_force.col(i) =
          contact ? Vec3(ev.collision ? 120.0 : 0.0, 0.0, 0.5 * (cfg_.phys.mass + phys_.payload) * cfg_.phys.gravity)
                  : Vec3::Zero();
    }
    rs.collisions = ev.collision ? 1 : 0;
    rs.self_contacts = 0;
    const double tilt = state_.tilt();
    rs.thigh_axis_z = Vec2(std::cos(tilt + state_.q(legs_.l_hip)), std::cos(tilt + state_.q(legs_.r_hip)));
    rs.amp_d = amp_d_;

    if (cfg_.specialist == Specialist::wbc && reference_ != nullptr) {
      rs.has_wbc_reference = true;
      const int f = reference_frame_;
      rs.body_pos = Mat::Zero(3, 2);
      rs.body_pos.col(0) = state_.base_pos;
      rs.body_pos.col(1) = state_.base_pos + Vec3(0, 0, cfg_.phys.head_offset * std::cos(tilt));
      rs.body_pos_des = Mat::Zero(3, 2);
      rs.body_pos_des.col(0) = reference_->base.col(f).head<3>();
      rs.body_pos_des(1, 0) = state_.base_pos.y();  // track forward/vertical, not lane
      rs.body_pos_des.col(1) = rs.body_pos_des.col(0) + Vec3(0, 0, cfg_.phys.head_offset);
      rs.body_euler = Mat::Zero(3, 1);
      rs.body_euler.col(0) = state_.base_rpy;
      rs.body_euler_des = Mat::Zero(3, 1);
      rs.body_euler_des.col(0) = reference_->base.col(f).tail<3>();
      rs.body_vel = Mat::Zero(3, 1);
      rs.body_vel.col(0) = state_.base_lin_vel;
      rs.body_vel_des = Mat::Zero(3, 1);
      if (f > 0)
        rs.body_vel_des.col(0) = (reference_->base.col(f).head<3>() - reference_->base.col(f - 1).head<3>()) * 50.0;
      rs.body_angvel = Mat::Zero(3, 1);
      rs.body_angvel.col(0) = state_.base_ang_vel;
      rs.body_angvel_des = Mat::Zero(3, 1);
      if (f > 0)
        rs.body_angvel_des.col(0) = (reference_->base.col(f).tail<3>() - reference_->base.col(f - 1).tail<3>()) * 50.0;
      rs.anchor_pos = state_.base_pos;
      rs.anchor_pos_des = rs.body_pos_des.col(0);
      rs.anchor_euler = state_.base_rpy;
      rs.anchor_euler_des = rs.body_euler_des.col(0);
    }
  }

  EnvConfig cfg_;
  JointLayout layout_;
  PdGains gains_;
  LegIndices legs_;
  RandomStream rng_;
  std::vector<RewardTerm> registry_;
  HeightScanConfig scan_cfg_;

  Heightfield hf_;
  EpisodePhysics phys_;
  RobotState state_;
  VelocityCommand cmd_{};
  const ReferenceTrajectory* reference_ = nullptr;
  int reference_frame_ = 0;

  Vec prev_action_, prev_prev_action_, prev_qdot_;
  Vec2 prev_offsets_ = Vec2::Zero();
  Vec2 air_time_ = Vec2::Zero();
  std::array<bool, 2> first_contact_latch_{false, false};
  double margin_timer_ = 0.0;
  double push_timer_ = 0.0;
  double amp_d_ = 1.0;
  bool coordination_case_ = false;
  bool fall_latch_ = true;
  int steps_ = 0;
  double start_x_ = 1.0;
};

}  // namespace xloco
