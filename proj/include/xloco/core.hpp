#pragma once

#include <string>
#include <vector>

#include "xloco/common.hpp"

namespace xloco {

// A joint vector is a dense Vec indexed by the canonical joint order of the
// active layout. Positions rad, velocities rad/s, torques N*m.
using JointVector = Vec;

struct JointInfo {
  std::string name;
  double kp = 0.0;            // N*m/rad
  double kd = 0.0;            // N*m*s/rad
  double action_scale = 0.0;  // unitless
  double q_default = 0.0;     // rad
  double q_min = 0.0;         // rad
  double q_max = 0.0;         // rad
  double vel_limit = 0.0;     // rad/s
  double torque_limit = 0.0;  // N*m
};

/// Canonical joint ordering plus per-joint actuation parameters.
///
/// Gains and scales are declared as name-pattern groups in the config and
/// expanded here once, so hot loops index dense arrays instead of matching
/// strings.
class JointLayout {
 public:
  JointLayout() = default;
  explicit JointLayout(std::vector<JointInfo> joints) : joints_(std::move(joints)) {}

  int dof() const { return static_cast<int>(joints_.size()); }
  const JointInfo& joint(int i) const { return joints_[static_cast<size_t>(i)]; }
  const std::vector<JointInfo>& joints() const { return joints_; }

  int index_of(const std::string& name) const {
    for (size_t i = 0; i < joints_.size(); ++i)
      if (joints_[i].name == name) return static_cast<int>(i);
    return -1;
  }

  /// All joint indices whose name contains `pattern`.
  std::vector<int> match(const std::string& pattern) const {
    std::vector<int> out;
    for (size_t i = 0; i < joints_.size(); ++i)
      if (joints_[i].name.find(pattern) != std::string::npos) out.push_back(static_cast<int>(i));
    return out;
  }

  Vec kp() const { return collect(&JointInfo::kp); }
  Vec kd() const { return collect(&JointInfo::kd); }
  Vec action_scale() const { return collect(&JointInfo::action_scale); }
  Vec q_default() const { return collect(&JointInfo::q_default); }
  Vec q_min() const { return collect(&JointInfo::q_min); }
  Vec q_max() const { return collect(&JointInfo::q_max); }
  Vec vel_limit() const { return collect(&JointInfo::vel_limit); }
  Vec torque_limit() const { return collect(&JointInfo::torque_limit); }

 private:
  Vec collect(double JointInfo::*field) const {
    Vec v(dof());
    for (int i = 0; i < dof(); ++i) v[i] = joints_[static_cast<size_t>(i)].*field;
    return v;
  }
  std::vector<JointInfo> joints_;
};

struct GainGroup {
  std::vector<std::string> patterns;
  double kp, kd, action_scale;
};

/// Actuator gain groups, keyed by joint-name substring.
inline const std::vector<GainGroup>& default_gain_groups() {
  static const std::vector<GainGroup> groups = {
      {{"hip_roll", "knee"}, 99.10, 6.31, 0.35},
      {{"hip_pitch", "hip_yaw", "waist_yaw"}, 40.18, 2.56, 0.55},
      {{"ankle", "waist_roll", "waist_pitch"}, 28.50, 1.81, 0.44},
      {{"shoulder", "elbow"}, 14.25, 0.91, 0.44},
  };
  return groups;
}

namespace detail {

inline JointInfo make_joint(const std::string& name) {
  JointInfo j;
  j.name = name;
  bool matched = false;
  for (const auto& g : default_gain_groups()) {
    for (const auto& p : g.patterns) {
      if (name.find(p) != std::string::npos) {
        j.kp = g.kp;
        j.kd = g.kd;
        j.action_scale = g.action_scale;
        matched = true;
        break;
      }
    }
    if (matched) break;
  }
  require(matched, "joint name matches no gain group: " + name);

  const bool leg = name.find("hip") != std::string::npos || name.find("knee") != std::string::npos ||
                   name.find("ankle") != std::string::npos;
  j.torque_limit = leg ? 88.0 : 25.0;

  if (name.find("hip_pitch") != std::string::npos) {
    j.q_default = -0.2;
    j.q_min = -2.5;
    j.q_max = 2.5;
  } else if (name.find("knee") != std::string::npos) {
    j.q_default = 0.4;
    j.q_min = -0.06;
    j.q_max = 2.85;
  } else if (name.find("ankle_pitch") != std::string::npos) {
    j.q_default = -0.2;
    j.q_min = -0.9;
    j.q_max = 0.9;
  } else if (name.find("ankle_roll") != std::string::npos) {
    j.q_min = -0.6;
    j.q_max = 0.6;
  } else if (name.find("hip_roll") != std::string::npos || name.find("hip_yaw") != std::string::npos) {
    j.q_min = -2.5;
    j.q_max = 2.5;
  } else if (name.find("waist") != std::string::npos) {
    j.q_min = -2.0;
    j.q_max = 2.0;
  } else {  // shoulder / elbow
    j.q_min = -3.0;
    j.q_max = 3.0;
  }
  j.vel_limit = leg || name.find("waist") != std::string::npos ? 20.0 : 12.0;
  return j;
}

}  // namespace detail

/// Desk-scale 8-DoF layout: planar legs (hip pitch + knee + ankle pitch),
/// a waist pitch, and one shoulder pair acting as the arm drive.
inline JointLayout make_compact8_layout() {
  std::vector<JointInfo> js;
  for (const char* n : {"left_hip_pitch", "left_knee", "right_hip_pitch", "right_knee",
                        "left_ankle_pitch", "right_ankle_pitch", "waist_pitch", "left_shoulder_pitch"})
    js.push_back(detail::make_joint(n));
  return JointLayout(std::move(js));
}

/// Full 23-DoF humanoid layout (6 per leg, 3 waist, 4 per arm).
inline JointLayout make_g1_23_layout() {
  std::vector<JointInfo> js;
  for (const char* side : {"left", "right"})
    for (const char* n : {"hip_pitch", "hip_roll", "hip_yaw", "knee", "ankle_pitch", "ankle_roll"})
      js.push_back(detail::make_joint(std::string(side) + "_" + n));
  for (const char* n : {"waist_yaw", "waist_roll", "waist_pitch"}) js.push_back(detail::make_joint(n));
  for (const char* side : {"left", "right"})
    for (const char* n : {"shoulder_pitch", "shoulder_roll", "shoulder_yaw", "elbow"})
      js.push_back(detail::make_joint(std::string(side) + "_" + n));
  return JointLayout(std::move(js));
}

inline JointLayout make_layout(const std::string& profile) {
  if (profile == "compact8") return make_compact8_layout();
  if (profile == "g1_23") return make_g1_23_layout();
  throw ConfigError("unknown joint layout profile: " + profile);
}

/// Per-joint PD actuation parameters.
struct PdGains {
  Vec kp;            // > 0
  Vec kd;            // >= 0
  Vec action_scale;  // > 0
  Vec q_default;
  Vec torque_limit;  // |tau| clamp, > 0

  static PdGains from_layout(const JointLayout& layout) {
    PdGains g;
    g.kp = layout.kp();
    g.kd = layout.kd();
    g.action_scale = layout.action_scale();
    g.q_default = layout.q_default();
    g.torque_limit = layout.torque_limit();
    return g;
  }

  int dof() const { return static_cast<int>(kp.size()); }

  void validate() const {
    require(kp.size() == kd.size() && kp.size() == action_scale.size() && kp.size() == q_default.size() &&
                kp.size() == torque_limit.size(),
            "PdGains: field lengths disagree");
    require((kp.array() > 0).all(), "PdGains: kp must be positive");
    require((kd.array() >= 0).all(), "PdGains: kd must be non-negative");
    require((action_scale.array() > 0).all(), "PdGains: action_scale must be positive");
    require((torque_limit.array() > 0).all(), "PdGains: torque_limit must be positive");
  }
};

/// q_target = q_default + action_scale .* a
inline JointVector action_to_target(const JointVector& a, const PdGains& gains) {
  require(a.size() == gains.q_default.size(), "action_to_target: action length != joint count");
  require(all_finite(a), "action_to_target: non-finite action");
  return gains.q_default + gains.action_scale.cwiseProduct(a);
}

/// tau = kp (q_target - q) - kd qdot, clamped elementwise to the torque limit.
inline JointVector pd_torque(const JointVector& q_target, const JointVector& q, const JointVector& qdot,
                             const PdGains& gains) {
  require(q_target.size() == q.size() && q.size() == qdot.size() && q.size() == gains.kp.size(),
          "pd_torque: vector lengths disagree");
  JointVector tau = gains.kp.cwiseProduct(q_target - q) - gains.kd.cwiseProduct(qdot);
  return tau.cwiseMax(-gains.torque_limit).cwiseMin(gains.torque_limit);
}

/// Proprioceptive observation: what the deployed policy can sense.
struct ProprioState {
  Vec3 ang_vel = Vec3::Zero();      // rad/s, base frame
  Vec3 gravity_dir = -Vec3::UnitZ();  // unit vector, base frame
  JointVector q;
  JointVector qdot;
  JointVector last_action;

  int flat_size() const { return 6 + 3 * static_cast<int>(q.size()); }

  Vec flatten() const {
    const int J = static_cast<int>(q.size());
    Vec v(6 + 3 * J);
    v.segment<3>(0) = ang_vel;
    v.segment<3>(3) = gravity_dir;
    v.segment(6, J) = q;
    v.segment(6 + J, J) = qdot;
    v.segment(6 + 2 * J, J) = last_action;
    return v;
  }

  void validate() const {
    require(std::abs(gravity_dir.norm() - 1.0) <= 1e-6, "ProprioState: gravity_dir not unit norm");
    require(ang_vel.allFinite() && all_finite(q) && all_finite(qdot) && all_finite(last_action),
            "ProprioState: non-finite entries");
  }
};

/// Privileged observation: simulation-only quantities for specialist training.
struct PrivState {
  Vec3 lin_vel = Vec3::Zero();  // m/s
  double head_height = 0.0;     // m, above terrain
  Vec ee_pos = Vec::Zero(6);    // m, hands+feet surrogate-reduced
  Vec ee_vel = Vec::Zero(6);    // m/s
  Vec height_samples;           // m, length H
  Vec motion_cmd;               // length M

  Vec flatten() const {
    Vec v(4 + 12 + height_samples.size() + motion_cmd.size());
    v.segment<3>(0) = lin_vel;
    v[3] = head_height;
    v.segment(4, 6) = ee_pos;
    v.segment(10, 6) = ee_vel;
    if (height_samples.size() > 0) v.segment(16, height_samples.size()) = height_samples;
    if (motion_cmd.size() > 0) v.segment(16 + height_samples.size(), motion_cmd.size()) = motion_cmd;
    return v;
  }

  void validate(int expected_h) const {
    require(head_height >= 0.0, "PrivState: head_height must be >= 0");
    require(static_cast<int>(height_samples.size()) == expected_h,
            "PrivState: height_samples length != scanner grid size");
  }
};

/// c = [v_x, v_y, w_z]
struct VelocityCommand {
  double vx = 0.0;  // m/s
  double vy = 0.0;  // m/s
  double wz = 0.0;  // rad/s

  Vec3 as_vec() const { return Vec3(vx, vy, wz); }
};

}  // namespace xloco
