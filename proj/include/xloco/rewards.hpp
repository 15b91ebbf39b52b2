#pragma once

#include <array>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "xloco/common.hpp"
#include "xloco/core.hpp"

namespace xloco {

// ---------------------------------------------------------------------------
// Scalar reward shapes

/// Gaussian-flank tolerance: 1 inside [lo, hi]; outside decays so that the
/// value at `margin` distance from the nearest bound equals value_at_margin.
inline double f_tol(double x, double lo, double hi, double margin, double value_at_margin) {
  require(lo <= hi, "f_tol: lo > hi");
  require(margin > 0.0, "f_tol: margin must be positive");
  require(value_at_margin > 0.0 && value_at_margin < 1.0, "f_tol: value_at_margin outside (0,1)");
  if (x >= lo && x <= hi) return 1.0;
  const double dist = x < lo ? lo - x : x - hi;
  const double d = dist / margin;
  const double c = std::sqrt(-2.0 * std::log(value_at_margin));
  return std::exp(-0.5 * sqr(c * d));
}

/// Planar velocity tracking, exp(-||cmd_xy - v_xy||^2 / 0.5).
inline double track_lin_vel(const VelocityCommand& cmd, const Vec3& v) {
  const double dx = cmd.vx - v.x(), dy = cmd.vy - v.y();
  return std::exp(-(dx * dx + dy * dy) / 0.5);
}

/// Yaw-rate tracking, exp(-(cmd_wz - wz)^2 / 0.5).
inline double track_ang_vel(const VelocityCommand& cmd, const Vec3& omega) {
  return std::exp(-sqr(cmd.wz - omega.z()) / 0.5);
}

// ---------------------------------------------------------------------------
// Body tracking (whole-body rows)

enum class BodyTrack { pos, ori, lin_vel, ang_vel, anchor_pos, anchor_ori };

inline double body_tracking_sigma(BodyTrack kind) {
  switch (kind) {
    case BodyTrack::pos: return 0.3;
    case BodyTrack::ori: return 0.4;
    case BodyTrack::lin_vel: return 1.0;
    case BodyTrack::ang_vel: return 3.14;
    case BodyTrack::anchor_pos: return 0.3;
    case BodyTrack::anchor_ori: return 0.4;
  }
  return 1.0;
}

inline Mat3 rot_from_euler(const Vec3& rpy) {
  return (Eigen::AngleAxisd(rpy.z(), Vec3::UnitZ()) * Eigen::AngleAxisd(rpy.y(), Vec3::UnitY()) *
          Eigen::AngleAxisd(rpy.x(), Vec3::UnitX()))
      .toRotationMatrix();
}

/// Geodesic angle between two rotations, |log(Ra Rb^T)|.
inline double geodesic_angle(const Mat3& ra, const Mat3& rb) {
  const double tr = (ra * rb.transpose()).trace();
  return std::acos(clampd(0.5 * (tr - 1.0), -1.0, 1.0));
}

/// exp(-mean_body_error / sigma^2). Columns are bodies; orientation kinds take
/// Euler [roll, pitch, yaw] columns and use the geodesic log-error.
inline double body_tracking_reward(BodyTrack kind, const Mat& actual, const Mat& desired) {
  require(actual.rows() == 3 && desired.rows() == 3 && actual.cols() == desired.cols(),
          "body_tracking_reward: shape mismatch");
  require(actual.cols() > 0, "body_tracking_reward: no bodies");
  double err = 0.0;
  const bool ori = kind == BodyTrack::ori || kind == BodyTrack::anchor_ori;
  for (int c = 0; c < actual.cols(); ++c) {
    if (ori)
      err += sqr(geodesic_angle(rot_from_euler(desired.col(c)), rot_from_euler(actual.col(c))));
    else
      err += (desired.col(c) - actual.col(c)).squaredNorm();
  }
  err /= actual.cols();
  return std::exp(-err / sqr(body_tracking_sigma(kind)));
}

// ---------------------------------------------------------------------------
// Reward state and registries

enum class RewardGroup { task = 0, style = 1, regularization = 2, post_task = 3 };
constexpr int kRewardGroups = 4;

enum class Specialist { loco, recovery, wbc };

inline const char* specialist_name(Specialist s) {
  switch (s) {
    case Specialist::loco: return "loco";
    case Specialist::recovery: return "recovery";
    case Specialist::wbc: return "wbc";
  }
  return "?";
}

struct RewardParams {
  double h_stage1 = 0.45;          // angular-velocity style gate height
  double h_stage3 = 0.68;          // post-task gate height
  double air_time_target = 0.5;    // seconds
  double feet_lateral_target = 0.2;
  double clearance_height = 0.10;  // swing apex target for the clearance row
  double post_target_height = 0.75;
  double w_dev_arm = 1.0, w_dev_waist = 1.0, w_dev_hip = 1.0;
};

/// Everything the reward tables read, filled by the environment each step.
struct RewardState {
  Vec q, qdot, qddot, tau;
  Vec action, prev_action, prev_prev_action;
  Vec3 base_lin_vel = Vec3::Zero();
  Vec3 base_ang_vel = Vec3::Zero();
  Vec3 gravity_dir = -Vec3::UnitZ();  // projected gravity in the torso frame
  double base_height = 0.78;
  double head_height = 1.3;
  VelocityCommand cmd;

  // feet, ordered left then right
  Vec2 foot_y_base = Vec2(0.1, -0.1);  // lateral sole position in base frame
  Mat foot_pos_xy = Mat::Zero(2, 2);   // world xy, columns per foot
  Vec2 foot_height = Vec2::Zero();     // sole height above local terrain
  Vec2 foot_speed = Vec2::Zero();      // full velocity norms
  Vec2 foot_speed_xy = Vec2::Zero();
  Vec2 foot_air_time = Vec2::Zero();
  std::array<bool, 2> foot_contact{false, false};
  std::array<bool, 2> foot_first_contact{false, false};
  Mat foot_force = Mat::Zero(3, 2);  // contact force, columns per foot

  int collisions = 0;
  int self_contacts = 0;
  Vec2 thigh_axis_z = Vec2::Ones();  // z-component of each thigh axis
  double amp_d = 1.0;                // discriminator output on the live window

  // whole-body reference block (columns are target bodies)
  bool has_wbc_reference = false;
  Mat body_pos, body_pos_des;
  Mat body_euler, body_euler_des;
  Mat body_vel, body_vel_des;
  Mat body_angvel, body_angvel_des;
  Vec3 anchor_pos = Vec3::Zero(), anchor_pos_des = Vec3::Zero();
  Vec3 anchor_euler = Vec3::Zero(), anchor_euler_des = Vec3::Zero();
};

struct RewardTerm {
  std::string name;
  double weight = 0.0;
  RewardGroup group = RewardGroup::task;
  std::function<double(const RewardState&)> eval;
};

struct RewardBreakdown {
  double total = 0.0;
  std::vector<std::pair<std::string, double>> per_term;  // weighted values
  std::array<double, kRewardGroups> per_group{};
};

inline RewardBreakdown evaluate_registry(const std::vector<RewardTerm>& registry, const RewardState& s) {
  RewardBreakdown out;
  out.per_term.reserve(registry.size());
  for (const auto& term : registry) {
    const double raw = term.eval(s);
    if (!std::isfinite(raw)) throw NumericFault("reward term non-finite: " + term.name);
    const double w = term.weight * raw;
    out.per_term.emplace_back(term.name, w);
    out.per_group[static_cast<int>(term.group)] += w;
    out.total += w;
  }
  return out;
}

namespace detail {

inline std::vector<int> joints_matching(const JointLayout& lay, std::initializer_list<const char*> yes,
                                        std::initializer_list<const char*> no = {}) {
  std::vector<int> idx;
  for (int j = 0; j < lay.dof(); ++j) {
    const auto& n = lay.joint(j).name;
    bool hit = false;
    for (const char* p : yes)
      if (n.find(p) != std::string::npos) hit = true;
    for (const char* p : no)
      if (n.find(p) != std::string::npos) hit = false;
    if (hit) idx.push_back(j);
  }
  return idx;
}

inline double amp_style_raw(const RewardState& s) { return std::max(0.0, 1.0 - 0.25 * sqr(s.amp_d - 1.0)); }

}  // namespace detail

/// Locomotion reward table.
inline std::vector<RewardTerm> make_loco_registry(const JointLayout& lay, const RewardParams& p = {}) {
  std::vector<RewardTerm> r;
  const auto arm = detail::joints_matching(lay, {"shoulder", "elbow"});
  const auto waist = detail::joints_matching(lay, {"waist"});
  const auto hip = detail::joints_matching(lay, {"hip"});
  const Vec qdef = lay.q_default();
  const Vec vmax = lay.vel_limit();
  const Vec tmax = lay.torque_limit();
  Vec qabs(lay.dof());
  for (int j = 0; j < lay.dof(); ++j) qabs(j) = std::max(std::abs(lay.joint(j).q_min), std::abs(lay.joint(j).q_max));

  auto add = [&](const char* name, double w, RewardGroup g, std::function<double(const RewardState&)> f) {
    r.push_back({name, w, g, std::move(f)});
  };

  add("track_lin_vel", 5.0, RewardGroup::task,
      [](const RewardState& s) { return track_lin_vel(s.cmd, s.base_lin_vel); });
  add("track_ang_vel", 5.0, RewardGroup::task,
      [](const RewardState& s) { return track_ang_vel(s.cmd, s.base_ang_vel); });
  add("joint_acc", -5e-7, RewardGroup::regularization,
      [](const RewardState& s) { return s.qddot.squaredNorm(); });
  add("joint_vel", -1e-3, RewardGroup::regularization,
      [](const RewardState& s) { return s.qdot.squaredNorm(); });
  add("action_rate", -0.03, RewardGroup::regularization,
      [](const RewardState& s) { return (s.action - s.prev_action).squaredNorm(); });
  add("action_smoothness", -0.05, RewardGroup::regularization,
      [](const RewardState& s) { return (s.action - 2.0 * s.prev_action + s.prev_prev_action).squaredNorm(); });
  add("ang_vel_xy", -0.05, RewardGroup::regularization,
      [](const RewardState& s) { return s.base_ang_vel.head<2>().squaredNorm(); });
  add("orientation", -1.5, RewardGroup::regularization,
      [](const RewardState& s) { return s.gravity_dir.head<2>().squaredNorm(); });
  add("joint_power", -2.5e-5, RewardGroup::regularization,
      [](const RewardState& s) { return s.tau.cwiseAbs().dot(s.qdot.cwiseAbs()); });
  add("feet_stumble", -1.0, RewardGroup::regularization, [](const RewardState& s) {
    for (int i = 0; i < 2; ++i)
      if (s.foot_force.col(i).head<2>().norm() >= 3.0 * std::abs(s.foot_force(2, i))) return 1.0;
    return 0.0;
  });
  add("torques", -1e-5, RewardGroup::regularization,
      [](const RewardState& s) { return s.tau.squaredNorm(); });
  add("joint_deviation", -0.5, RewardGroup::regularization, [=](const RewardState& s) {
    double v = 0.0;
    for (int j : arm) v += p.w_dev_arm * std::abs(s.q(j) - qdef(j));
    for (int j : waist) v += p.w_dev_waist * std::abs(s.q(j) - qdef(j));
    for (int j : hip) v += p.w_dev_hip * std::abs(s.q(j) - qdef(j));
    return v;
  });
  add("joint_pos_limits", -2.0, RewardGroup::regularization, [=](const RewardState& s) {
    return (s.q.cwiseAbs() - qabs).cwiseMax(0.0).sum();
  });
  add("joint_vel_limits", -1.0, RewardGroup::regularization, [=](const RewardState& s) {
    return (s.qdot.cwiseAbs() - vmax).cwiseMax(0.0).sum();
  });
  add("torque_limits", -1.0, RewardGroup::regularization, [=](const RewardState& s) {
    return (s.tau.cwiseAbs() - tmax).cwiseMax(0.0).sum();
  });
  add("feet_lateral_distance", 0.5, RewardGroup::task, [=](const RewardState& s) {
    return std::abs((s.foot_y_base(0) - s.foot_y_base(1)) - p.feet_lateral_target);
  });
  add("feet_slippage", -0.25, RewardGroup::regularization, [](const RewardState& s) {
    double v = 0.0;
    for (int i = 0; i < 2; ++i)
      if (s.foot_contact[static_cast<size_t>(i)]) v += s.foot_speed(i);
    return v;
  });
  add("collision", -15.0, RewardGroup::regularization,
      [](const RewardState& s) { return static_cast<double>(s.collisions); });
  add("feet_air_time", 1.0, RewardGroup::task, [=](const RewardState& s) {
    double v = 0.0;
    for (int i = 0; i < 2; ++i)
      if (s.foot_first_contact[static_cast<size_t>(i)]) v += s.foot_air_time(i) - p.air_time_target;
    return v;
  });
  add("stuck", -1.0, RewardGroup::regularization, [](const RewardState& s) {
    const double v = s.base_lin_vel.head<2>().norm();
    const double c = std::hypot(s.cmd.vx, s.cmd.vy);
    return (v <= 0.1 && c >= 0.2) ? 1.0 : 0.0;
  });
  add("feet_clearance", 2.0, RewardGroup::task, [=](const RewardState& s) {
    double v = 0.0;
    for (int i = 0; i < 2; ++i) v += sqr(s.foot_height(i) - p.clearance_height) * s.foot_speed_xy(i);
    return v;
  });
  add("alive", 2.0, RewardGroup::task, [](const RewardState&) { return 1.0; });
  add("amp_style", 3.0, RewardGroup::style, detail::amp_style_raw);
  return r;
}

/// Recovery reward table, grouped for the multi-critic heads.
inline std::vector<RewardTerm> make_recovery_registry(const JointLayout& lay, const RewardParams& p = {}) {
  std::vector<RewardTerm> r;
  const auto left_hip = detail::joints_matching(lay, {"left_hip"});
  const auto right_hip = detail::joints_matching(lay, {"right_hip"});
  const auto knees = detail::joints_matching(lay, {"knee"});
  const auto sh_roll_l = detail::joints_matching(lay, {"left_shoulder_roll"});
  const auto sh_roll_r = detail::joints_matching(lay, {"right_shoulder_roll"});
  const Vec qdef = lay.q_default();
  const Vec vmax = lay.vel_limit();
  Vec qabs(lay.dof());
  for (int j = 0; j < lay.dof(); ++j) qabs(j) = std::max(std::abs(lay.joint(j).q_min), std::abs(lay.joint(j).q_max));

  auto add = [&](const char* name, double w, RewardGroup g, std::function<double(const RewardState&)> f) {
    r.push_back({name, w, g, std::move(f)});
  };

  // task
  add("orientation_upright", 1.0, RewardGroup::task,
      [](const RewardState& s) { return f_tol(-s.gravity_dir.z(), 0.99, kInf, 1.0, 0.05); });
  add("head_height", 1.0, RewardGroup::task,
      [](const RewardState& s) { return f_tol(s.head_height, 1.0, kInf, 1.0, 0.1); });

  // style
  auto hip_band = [](const RewardState& s, const std::vector<int>& idx) {
    if (idx.empty()) return 0.0;
    double mx = 0.0, mn = kInf;
    for (int j : idx) {
      mx = std::max(mx, std::abs(s.q(j)));
      mn = std::min(mn, std::abs(s.q(j)));
    }
    return (mx > 0.9 || mn < 0.8) ? 1.0 : 0.0;
  };
  add("hip_deviation", -10.0, RewardGroup::style,
      [=](const RewardState& s) { return hip_band(s, left_hip) + hip_band(s, right_hip); });
  add("knee_deviation", -0.25, RewardGroup::style, [=](const RewardState& s) {
    if (knees.empty()) return 0.0;
    double mx = 0.0, mn = kInf;
    for (int j : knees) {
      mx = std::max(mx, std::abs(s.q(j)));
      mn = std::min(mn, s.q(j));  // hyperextension check on the signed angle
    }
    return (mx > 2.85 || mn < -0.06) ? 1.0 : 0.0;
  });
  add("shoulder_roll_deviation", -2.5, RewardGroup::style, [=](const RewardState& s) {
    const bool left = !sh_roll_l.empty() && s.q(sh_roll_l.front()) < -0.02;
    const bool right = !sh_roll_r.empty() && s.q(sh_roll_r.front()) > 0.02;
    return (left || right) ? 1.0 : 0.0;
  });
  add("thigh_orientation", 10.0, RewardGroup::style,
      [](const RewardState& s) { return f_tol(0.5 * s.thigh_axis_z.sum(), 0.8, kInf, 1.0, 0.1); });
  add("feet_distance", -10.0, RewardGroup::style, [](const RewardState& s) {
    return (s.foot_pos_xy.col(0) - s.foot_pos_xy.col(1)).squaredNorm() > 0.9 ? 1.0 : 0.0;
  });
  add("ang_vel_xy_gated", 25.0, RewardGroup::style, [=](const RewardState& s) {
    if (s.base_height <= p.h_stage1) return 0.0;
    return std::exp(-2.0 * s.base_ang_vel.head<2>().squaredNorm());
  });
  // clip of a non-positive quantity to [0.3, inf): constant by construction
  add("foot_displacement", 2.5, RewardGroup::style, [](const RewardState&) { return std::exp(0.3); });
  add("amp_style", 80.0, RewardGroup::style, detail::amp_style_raw);

  // regularization
  add("joint_acc", -2.5e-7, RewardGroup::regularization,
      [](const RewardState& s) { return s.qddot.squaredNorm(); });
  add("joint_vel", -1e-3, RewardGroup::regularization,
      [](const RewardState& s) { return s.qdot.squaredNorm(); });
  add("action_rate", -0.01, RewardGroup::regularization,
      [](const RewardState& s) { return (s.action - s.prev_action).squaredNorm(); });
  add("action_smoothness", -0.05, RewardGroup::regularization,
      [](const RewardState& s) { return (s.action - 2.0 * s.prev_action + s.prev_prev_action).squaredNorm(); });
  add("torques", -1e-5, RewardGroup::regularization,
      [](const RewardState& s) { return s.tau.squaredNorm(); });
  add("joint_power", -2.5e-5, RewardGroup::regularization,
      [](const RewardState& s) { return s.tau.cwiseAbs().dot(s.qdot.cwiseAbs()); });
  add("joint_pos_limits", -2.0, RewardGroup::regularization, [=](const RewardState& s) {
    return (s.q.cwiseAbs() - qabs).cwiseMax(0.0).sum();
  });
  add("joint_vel_limits", -1.0, RewardGroup::regularization, [=](const RewardState& s) {
    return (s.qdot.cwiseAbs() - vmax).cwiseMax(0.0).sum();
  });

  // post-task, all gated on base height above h_stage3
  auto gated = [=](std::function<double(const RewardState&)> f) {
    return [=](const RewardState& s) { return s.base_height > p.h_stage3 ? f(s) : 0.0; };
  };
  add("post_tracking", 10.0, RewardGroup::post_task, gated([](const RewardState& s) {
        return std::exp(-2.0 * s.base_ang_vel.head<2>().squaredNorm()) +
               std::exp(-5.0 * s.base_lin_vel.head<2>().squaredNorm()) +
               std::exp(-5.0 * s.gravity_dir.head<2>().squaredNorm());
      }));
  add("post_base_height", 10.0, RewardGroup::post_task, gated([=](const RewardState& s) {
        return std::exp(-20.0 * std::abs(s.base_height - p.post_target_height));
      }));
  add("post_joint_deviation", 10.0, RewardGroup::post_task, gated([=](const RewardState& s) {
        return std::exp(-0.1 * (s.q - qdef).squaredNorm());
      }));
  add("post_feet_distance", -5.0, RewardGroup::post_task, gated([](const RewardState& s) {
        return f_tol(s.foot_y_base(0) - s.foot_y_base(1), 0.3, 0.4, 0.1, 0.05);
      }));
  return r;
}

/// Whole-body coordination reward table; needs a motion reference.
inline std::vector<RewardTerm> make_wbc_registry(const JointLayout& lay, const RewardParams& = {}) {
  std::vector<RewardTerm> r;
  Vec lo(lay.dof()), hi(lay.dof());
  for (int j = 0; j < lay.dof(); ++j) {
    lo(j) = lay.joint(j).q_min;
    hi(j) = lay.joint(j).q_max;
  }

  auto add = [&](const char* name, double w, RewardGroup g, std::function<double(const RewardState&)> f) {
    r.push_back({name, w, g, std::move(f)});
  };
  auto with_ref = [](std::function<double(const RewardState&)> f) {
    return [=](const RewardState& s) {
      require(s.has_wbc_reference, "wbc rewards: missing motion reference");
      return f(s);
    };
  };

  add("body_position", 1.0, RewardGroup::task, with_ref([](const RewardState& s) {
        return body_tracking_reward(BodyTrack::pos, s.body_pos, s.body_pos_des);
      }));
  add("body_orientation", 1.0, RewardGroup::task, with_ref([](const RewardState& s) {
        return body_tracking_reward(BodyTrack::ori, s.body_euler, s.body_euler_des);
      }));
  add("body_lin_vel", 1.0, RewardGroup::task, with_ref([](const RewardState& s) {
        return body_tracking_reward(BodyTrack::lin_vel, s.body_vel, s.body_vel_des);
      }));
  add("body_ang_vel", 1.0, RewardGroup::task, with_ref([](const RewardState& s) {
        return body_tracking_reward(BodyTrack::ang_vel, s.body_angvel, s.body_angvel_des);
      }));
  add("anchor_position", 0.5, RewardGroup::task, with_ref([](const RewardState& s) {
        return body_tracking_reward(BodyTrack::anchor_pos, s.anchor_pos, s.anchor_pos_des);
      }));
  add("anchor_orientation", 0.5, RewardGroup::task, with_ref([](const RewardState& s) {
        return body_tracking_reward(BodyTrack::anchor_ori, s.anchor_euler, s.anchor_euler_des);
      }));
  add("action_smoothness", -0.1, RewardGroup::regularization,
      [](const RewardState& s) { return (s.action - s.prev_action).squaredNorm(); });
  add("joint_pos_limits", -10.0, RewardGroup::regularization, [=](const RewardState& s) {
    return ((lo - s.q).cwiseMax(0.0) + (s.q - hi).cwiseMax(0.0)).sum();
  });
  add("self_contacts", -0.1, RewardGroup::regularization,
      [](const RewardState& s) { return static_cast<double>(s.self_contacts); });
  return r;
}

inline std::vector<RewardTerm> make_registry(Specialist sp, const JointLayout& lay, const RewardParams& p = {}) {
  switch (sp) {
    case Specialist::loco: return make_loco_registry(lay, p);
    case Specialist::recovery: return make_recovery_registry(lay, p);
    case Specialist::wbc: return make_wbc_registry(lay, p);
  }
  throw ConfigError("unknown specialist");
}

}  // namespace xloco
