#include <catch2/catch_amalgamated.hpp>

#include <map>

#include "support/testutil.hpp"
#include "xloco/rewards.hpp"
#include "xloco/rng.hpp"

using namespace xloco;
using testutil::rel_err;

namespace {

RewardState make_rest_state(const JointLayout& lay) {
  RewardState s;
  const int J = lay.dof();
  s.q = lay.q_default();
  s.qdot = Vec::Zero(J);
  s.qddot = Vec::Zero(J);
  s.tau = Vec::Zero(J);
  s.action = Vec::Zero(J);
  s.prev_action = Vec::Zero(J);
  s.prev_prev_action = Vec::Zero(J);
  s.foot_contact = {true, true};
  s.foot_force.setZero();
  s.foot_force(2, 0) = 150.0;
  s.foot_force(2, 1) = 150.0;
  s.foot_y_base = Vec2(0.1, -0.1);
  return s;
}

RewardState random_state(const JointLayout& lay, RandomStream& rng) {
  RewardState s = make_rest_state(lay);
  const int J = lay.dof();
  for (int j = 0; j < J; ++j) {
    s.q(j) = rng.uniform(-1.5, 1.5);
    s.qdot(j) = rng.uniform(-8.0, 8.0);
    s.qddot(j) = rng.uniform(-50.0, 50.0);
    s.tau(j) = rng.uniform(-60.0, 60.0);
    s.action(j) = rng.uniform(-1.0, 1.0);
    s.prev_action(j) = rng.uniform(-1.0, 1.0);
    s.prev_prev_action(j) = rng.uniform(-1.0, 1.0);
  }
  for (int i = 0; i < 3; ++i) {
    s.base_lin_vel(i) = rng.uniform(-1.0, 1.0);
    s.base_ang_vel(i) = rng.uniform(-2.0, 2.0);
  }
  s.gravity_dir = Vec3(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), -1.0).normalized();
  s.base_height = rng.uniform(0.2, 0.9);
  s.head_height = rng.uniform(0.3, 1.5);
  s.cmd = {rng.uniform(-1.0, 1.0), rng.uniform(-0.5, 0.5), rng.uniform(-1.0, 1.0)};
  s.foot_y_base = Vec2(rng.uniform(0.0, 0.3), rng.uniform(-0.3, 0.0));
  s.foot_pos_xy << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
  s.foot_height = Vec2(rng.uniform(0.0, 0.3), rng.uniform(0.0, 0.3));
  s.foot_speed = Vec2(rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0));
  s.foot_speed_xy = Vec2(rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0));
  s.foot_air_time = Vec2(rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0));
  s.foot_contact = {rng.uniform01() < 0.7, rng.uniform01() < 0.7};
  s.foot_first_contact = {rng.uniform01() < 0.3, rng.uniform01() < 0.3};
  for (int i = 0; i < 2; ++i)
    for (int r = 0; r < 3; ++r) s.foot_force(r, i) = rng.uniform(-50.0, 200.0);
  s.collisions = rng.uniform01() < 0.2 ? 1 : 0;
  s.self_contacts = rng.uniform01() < 0.2 ? 2 : 0;
  s.thigh_axis_z = Vec2(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
  s.amp_d = rng.uniform(-2.0, 2.0);
  return s;
}

std::map<std::string, double> to_map(const RewardBreakdown& b) {
  std::map<std::string, double> m;
  for (const auto& [k, v] : b.per_term) m[k] = v;
  return m;
}

// scalar-loop re-implementation of the locomotion table, written independently
std::map<std::string, double> loco_oracle(const RewardState& s, const JointLayout& lay, const RewardParams& p) {
  std::map<std::string, double> m;
  const int J = lay.dof();
  double d2 = sqr(s.cmd.vx - s.base_lin_vel(0)) + sqr(s.cmd.vy - s.base_lin_vel(1));
  m["track_lin_vel"] = 5.0 * std::exp(-d2 / 0.5);
  m["track_ang_vel"] = 5.0 * std::exp(-sqr(s.cmd.wz - s.base_ang_vel(2)) / 0.5);
  double acc = 0, vel = 0, tq = 0, pw = 0;
  for (int j = 0; j < J; ++j) {
    acc += sqr(s.qddot(j));
    vel += sqr(s.qdot(j));
    tq += sqr(s.tau(j));
    pw += std::abs(s.tau(j)) * std::abs(s.qdot(j));
  }
  m["joint_acc"] = -5e-7 * acc;
  m["joint_vel"] = -1e-3 * vel;
  m["torques"] = -1e-5 * tq;
  m["joint_power"] = -2.5e-5 * pw;
  double ar = 0, as = 0;
  for (int j = 0; j < J; ++j) {
    ar += sqr(s.action(j) - s.prev_action(j));
    as += sqr(s.action(j) - 2 * s.prev_action(j) + s.prev_prev_action(j));
  }
  m["action_rate"] = -0.03 * ar;
  m["action_smoothness"] = -0.05 * as;
  m["ang_vel_xy"] = -0.05 * (sqr(s.base_ang_vel(0)) + sqr(s.base_ang_vel(1)));
  m["orientation"] = -1.5 * (sqr(s.gravity_dir(0)) + sqr(s.gravity_dir(1)));
  bool stumble = false;
  for (int i = 0; i < 2; ++i)
    if (std::hypot(s.foot_force(0, i), s.foot_force(1, i)) >= 3.0 * std::abs(s.foot_force(2, i))) stumble = true;
  m["feet_stumble"] = stumble ? -1.0 : 0.0;
  double dev = 0;
  for (int j = 0; j < J; ++j) {
    const auto& n = lay.joint(j).name;
    const bool arm = n.find("shoulder") != std::string::npos || n.find("elbow") != std::string::npos;
    const bool waist = n.find("waist") != std::string::npos;
    const bool hip = n.find("hip") != std::string::npos;
    if (arm) dev += p.w_dev_arm * std::abs(s.q(j) - lay.joint(j).q_default);
    if (waist) dev += p.w_dev_waist * std::abs(s.q(j) - lay.joint(j).q_default);
    if (hip) dev += p.w_dev_hip * std::abs(s.q(j) - lay.joint(j).q_default);
  }
  m["joint_deviation"] = -0.5 * dev;
  double pos_lim = 0, vel_lim = 0, tq_lim = 0;
  for (int j = 0; j < J; ++j) {
    const double qmax = std::max(std::abs(lay.joint(j).q_min), std::abs(lay.joint(j).q_max));
    pos_lim += std::max(0.0, std::abs(s.q(j)) - qmax);
    vel_lim += std::max(0.0, std::abs(s.qdot(j)) - lay.joint(j).vel_limit);
    tq_lim += std::max(0.0, std::abs(s.tau(j)) - lay.joint(j).torque_limit);
  }
  m["joint_pos_limits"] = -2.0 * pos_lim;
  m["joint_vel_limits"] = -1.0 * vel_lim;
  m["torque_limits"] = -1.0 * tq_lim;
  m["feet_lateral_distance"] = 0.5 * std::abs(s.foot_y_base(0) - s.foot_y_base(1) - p.feet_lateral_target);
  double slip = 0;
  for (int i = 0; i < 2; ++i)
    if (s.foot_contact[static_cast<size_t>(i)]) slip += s.foot_speed(i);
  m["feet_slippage"] = -0.25 * slip;
  m["collision"] = -15.0 * s.collisions;
  double air = 0;
  for (int i = 0; i < 2; ++i)
    if (s.foot_first_contact[static_cast<size_t>(i)]) air += s.foot_air_time(i) - p.air_time_target;
  m["feet_air_time"] = 1.0 * air;
  const double vxy = std::hypot(s.base_lin_vel(0), s.base_lin_vel(1));
  const double cxy = std::hypot(s.cmd.vx, s.cmd.vy);
  m["stuck"] = (vxy <= 0.1 && cxy >= 0.2) ? -1.0 : 0.0;
  double clr = 0;
  for (int i = 0; i < 2; ++i) clr += sqr(s.foot_height(i) - p.clearance_height) * s.foot_speed_xy(i);
  m["feet_clearance"] = 2.0 * clr;
  m["alive"] = 2.0;
  m["amp_style"] = 3.0 * std::max(0.0, 1.0 - 0.25 * sqr(s.amp_d - 1.0));
  return m;
}

}  // namespace

TEST_CASE("tolerance function fixtures") {
  CHECK(f_tol(1.0, 0.99, kInf, 1.0, 0.05) == 1.0);
  CHECK(f_tol(-0.01, 0.99, kInf, 1.0, 0.05) == Catch::Approx(0.05).margin(1e-12));
  CHECK(f_tol(0.49, 0.99, kInf, 1.0, 0.05) == Catch::Approx(0.4728).margin(1e-4));
  // two-sided band from the post-task feet-distance row
  CHECK(f_tol(0.35, 0.3, 0.4, 0.1, 0.05) == 1.0);
  CHECK(f_tol(0.2, 0.3, 0.4, 0.1, 0.05) == Catch::Approx(0.05).margin(1e-12));
  CHECK(f_tol(0.5, 0.3, 0.4, 0.1, 0.05) == Catch::Approx(0.05).margin(1e-12));
  CHECK_THROWS_AS(f_tol(0.0, 0.0, 1.0, 0.0, 0.5), ConfigError);
  CHECK_THROWS_AS(f_tol(0.0, 0.0, 1.0, 1.0, 1.5), ConfigError);
  CHECK_THROWS_AS(f_tol(0.0, 1.0, 0.0, 1.0, 0.5), ConfigError);
}

TEST_CASE("tolerance function is continuous and monotone") {
  CHECK(f_tol(0.99 - 1e-12, 0.99, kInf, 1.0, 0.05) == Catch::Approx(1.0).margin(1e-9));
  double prev = 1.0;
  for (double x = 0.99; x > -3.0; x -= 0.01) {
    const double v = f_tol(x, 0.99, kInf, 1.0, 0.05);
    CHECK(v <= prev + 1e-15);
    CHECK(v > 0.0);
    prev = v;
  }
}

TEST_CASE("velocity tracking fixtures") {
  VelocityCommand cmd{0.5, -0.2, 0.3};
  CHECK(track_lin_vel(cmd, Vec3(0.5, -0.2, 99.0)) == 1.0);  // z is ignored
  CHECK(track_ang_vel(cmd, Vec3(9.0, 9.0, 0.3)) == 1.0);
  VelocityCommand zero{0, 0, 0};
  CHECK(track_lin_vel(zero, Vec3(std::sqrt(0.5), 0, 0)) == Catch::Approx(std::exp(-1.0)).margin(1e-12));
  CHECK(track_lin_vel(zero, Vec3(std::sqrt(10.0), 0, 0)) < 1e-8);
  CHECK(track_ang_vel(zero, Vec3(0, 0, std::sqrt(0.5))) == Catch::Approx(std::exp(-1.0)).margin(1e-12));
}

TEST_CASE("body tracking fixtures") {
  Mat a = Mat::Random(3, 4), b = a;
  CHECK(body_tracking_reward(BodyTrack::pos, a, b) == 1.0);
  // single body offset by 0.3 in one axis: MSE = 0.09, sigma = 0.3
  Mat p = Mat::Zero(3, 1), pd = Mat::Zero(3, 1);
  pd(0, 0) = 0.3;
  CHECK(body_tracking_reward(BodyTrack::pos, p, pd) == Catch::Approx(std::exp(-1.0)).margin(1e-12));
  // rotation by pi about z with the angular sigma 3.14
  Mat e = Mat::Zero(3, 1), ed = Mat::Zero(3, 1);
  ed(2, 0) = M_PI;
  CHECK(body_tracking_reward(BodyTrack::ang_vel, Mat::Zero(3, 1), (Mat(3, 1) << 0, 0, M_PI).finished()) ==
        Catch::Approx(std::exp(-sqr(M_PI) / sqr(3.14))).margin(1e-12));
  CHECK(body_tracking_reward(BodyTrack::ori, e, ed) == Catch::Approx(std::exp(-sqr(M_PI) / sqr(0.4))).margin(1e-9));
  CHECK_THROWS_AS(body_tracking_reward(BodyTrack::pos, Mat::Zero(3, 2), Mat::Zero(3, 3)), ConfigError);
}

TEST_CASE("geodesic angle matches hand rotations") {
  const Mat3 id = Mat3::Identity();
  CHECK(geodesic_angle(id, id) == Catch::Approx(0.0).margin(1e-12));
  const Mat3 rz = rot_from_euler(Vec3(0, 0, 1.3));
  CHECK(geodesic_angle(rz, id) == Catch::Approx(1.3).margin(1e-12));
  const Mat3 rx = rot_from_euler(Vec3(M_PI, 0, 0));
  CHECK(geodesic_angle(rx, id) == Catch::Approx(M_PI).margin(1e-9));
}

TEST_CASE("locomotion registry at the rest point") {
  const JointLayout lay = make_layout("compact8");
  const auto reg = make_loco_registry(lay);
  RewardState s = make_rest_state(lay);
  const auto b = evaluate_registry(reg, s);
  const auto m = to_map(b);
  CHECK(m.at("track_lin_vel") == 5.0);
  CHECK(m.at("track_ang_vel") == 5.0);
  CHECK(m.at("alive") == 2.0);
  CHECK(m.at("amp_style") == 3.0);
  CHECK(m.at("action_rate") == 0.0);
  CHECK(m.at("action_smoothness") == 0.0);
  CHECK(m.at("joint_acc") == 0.0);
  CHECK(m.at("joint_vel") == 0.0);
  CHECK(m.at("joint_deviation") == 0.0);
  CHECK(m.at("feet_stumble") == 0.0);
  CHECK(m.at("feet_lateral_distance") == 0.0);
  CHECK(m.at("stuck") == 0.0);
  CHECK(b.total == Catch::Approx(5 + 5 + 2 + 3 + 2.0 * sqr(0.1) * 0).margin(1e-12));
}

TEST_CASE("torque penalty magnitude") {
  const JointLayout lay = make_layout("compact8");
  const auto reg = make_loco_registry(lay);
  RewardState s = make_rest_state(lay);
  // sum of squares 1e5 across 8 joints (torque limits are not part of this row)
  s.tau = Vec::Constant(8, std::sqrt(1e5 / 8.0));
  const auto m = to_map(evaluate_registry(reg, s));
  CHECK(m.at("torques") == Catch::Approx(-1.0).margin(1e-9));
}

TEST_CASE("locomotion registry matches the row-by-row oracle") {
  for (const char* profile : {"compact8", "g1_23"}) {
    const JointLayout lay = make_layout(profile);
    const RewardParams p;
    const auto reg = make_loco_registry(lay, p);
    RandomStream rng(fnv1a(profile));
    for (int trial = 0; trial < 50; ++trial) {
      const RewardState s = random_state(lay, rng);
      const auto got = to_map(evaluate_registry(reg, s));
      const auto want = loco_oracle(s, lay, p);
      REQUIRE(got.size() == want.size());
      for (const auto& [name, v] : want) {
        INFO(profile << " term " << name);
        CHECK(got.at(name) == Catch::Approx(v).margin(1e-12));
      }
    }
  }
}

TEST_CASE("registry totals reconstruct from groups") {
  const JointLayout lay = make_layout("g1_23");
  RandomStream rng(7);
  for (Specialist sp : {Specialist::loco, Specialist::recovery, Specialist::wbc}) {
    const auto reg = make_registry(sp, lay);
    RewardState s = random_state(lay, rng);
    if (sp == Specialist::wbc) {
      s.has_wbc_reference = true;
      s.body_pos = Mat::Random(3, 3);
      s.body_pos_des = Mat::Random(3, 3);
      s.body_euler = Mat::Random(3, 3);
      s.body_euler_des = Mat::Random(3, 3);
      s.body_vel = Mat::Random(3, 3);
      s.body_vel_des = Mat::Random(3, 3);
      s.body_angvel = Mat::Random(3, 3);
      s.body_angvel_des = Mat::Random(3, 3);
    }
    const auto b = evaluate_registry(reg, s);
    double group_sum = 0.0;
    for (double g : b.per_group) group_sum += g;  // group weights are all 1.0
    CHECK(b.total == Catch::Approx(group_sum).margin(1e-12));
    double term_sum = 0.0;
    for (const auto& [_, v] : b.per_term) term_sum += v;
    CHECK(b.total == Catch::Approx(term_sum).margin(1e-12));
  }
}

TEST_CASE("recovery task terms saturate when upright") {
  const JointLayout lay = make_layout("compact8");
  const auto reg = make_recovery_registry(lay);
  RewardState s = make_rest_state(lay);
  s.gravity_dir = -Vec3::UnitZ();  // upright: -g_z = 1 >= 0.99
  s.head_height = 1.3;
  const auto m = to_map(evaluate_registry(reg, s));
  CHECK(m.at("orientation_upright") == 1.0);
  CHECK(m.at("head_height") == 1.0);
  // lying flat: -g_z ~ 0, d = 0.99 from the bound
  s.gravity_dir = Vec3(1, 0, 0);
  s.head_height = 0.3;
  const auto m2 = to_map(evaluate_registry(reg, s));
  CHECK(m2.at("orientation_upright") ==
        Catch::Approx(std::exp(-0.5 * sqr(0.99 * std::sqrt(-2.0 * std::log(0.05))))).margin(1e-12));
  CHECK(m2.at("head_height") ==
        Catch::Approx(std::exp(-0.5 * sqr(0.7 * std::sqrt(-2.0 * std::log(0.1))))).margin(1e-12));
}

TEST_CASE("recovery post-task rows are gated on base height") {
  const JointLayout lay = make_layout("compact8");
  RewardParams p;
  const auto reg = make_recovery_registry(lay, p);
  RewardState s = make_rest_state(lay);

  s.base_height = p.h_stage3 - 0.01;
  auto low = to_map(evaluate_registry(reg, s));
  CHECK(low.at("post_tracking") == 0.0);
  CHECK(low.at("post_base_height") == 0.0);
  CHECK(low.at("post_joint_deviation") == 0.0);
  CHECK(low.at("post_feet_distance") == 0.0);

  s.base_height = p.h_stage3 + 0.05;
  auto high = to_map(evaluate_registry(reg, s));
  // at rest: omega = v = g_xy = 0 so all three tracking parts are 1
  CHECK(high.at("post_tracking") == Catch::Approx(30.0).margin(1e-12));
  CHECK(high.at("post_base_height") ==
        Catch::Approx(10.0 * std::exp(-20.0 * std::abs(s.base_height - 0.75))).margin(1e-12));
  CHECK(high.at("post_joint_deviation") == Catch::Approx(10.0).margin(1e-12));
  // feet at +-0.1: lateral gap 0.2, below the [0.3, 0.4] band by 0.1 = margin
  CHECK(high.at("post_feet_distance") == Catch::Approx(-5.0 * 0.05).margin(1e-12));
}

TEST_CASE("recovery style gates and constants") {
  const JointLayout lay = make_layout("compact8");
  RewardParams p;
  const auto reg = make_recovery_registry(lay, p);
  RewardState s = make_rest_state(lay);

  s.base_height = p.h_stage1 - 0.01;
  CHECK(to_map(evaluate_registry(reg, s)).at("ang_vel_xy_gated") == 0.0);
  s.base_height = p.h_stage1 + 0.01;
  s.base_ang_vel = Vec3(0.5, 0.5, 0);
  CHECK(to_map(evaluate_registry(reg, s)).at("ang_vel_xy_gated") ==
        Catch::Approx(25.0 * std::exp(-2.0 * 0.5)).margin(1e-12));
  // the clipped-exponent displacement row is constant by construction
  CHECK(to_map(evaluate_registry(reg, s)).at("foot_displacement") == Catch::Approx(2.5 * std::exp(0.3)).margin(1e-12));
}

TEST_CASE("recovery deviation indicators") {
  const JointLayout lay = make_layout("g1_23");
  const auto reg = make_recovery_registry(lay);
  RewardState s = make_rest_state(lay);

  // default pose: hips near zero magnitude, below the [0.8, 0.9] band -> both fire
  CHECK(to_map(evaluate_registry(reg, s)).at("hip_deviation") == -20.0);
  // flex every hip joint magnitude into the band
  for (int j = 0; j < lay.dof(); ++j)
    if (lay.joint(j).name.find("hip") != std::string::npos) s.q(j) = 0.85;
  CHECK(to_map(evaluate_registry(reg, s)).at("hip_deviation") == 0.0);

  // knees at default never fire; hyperextension beyond -0.06 does
  CHECK(to_map(evaluate_registry(reg, s)).at("knee_deviation") == 0.0);
  const auto knees = [&] {
    std::vector<int> k;
    for (int j = 0; j < lay.dof(); ++j)
      if (lay.joint(j).name.find("knee") != std::string::npos) k.push_back(j);
    return k;
  }();
  REQUIRE(!knees.empty());
  s.q(knees[0]) = -0.1;
  CHECK(to_map(evaluate_registry(reg, s)).at("knee_deviation") == -0.25);
  s.q(knees[0]) = 3.0;
  CHECK(to_map(evaluate_registry(reg, s)).at("knee_deviation") == -0.25);

  // shoulder roll indicators: left below -0.02 or right above 0.02
  s.q(knees[0]) = 0.4;
  CHECK(to_map(evaluate_registry(reg, s)).at("shoulder_roll_deviation") == 0.0);
  for (int j = 0; j < lay.dof(); ++j)
    if (lay.joint(j).name == "left_shoulder_roll") s.q(j) = -0.1;
  CHECK(to_map(evaluate_registry(reg, s)).at("shoulder_roll_deviation") == -2.5);

  // feet-distance indicator on squared planar separation
  s.foot_pos_xy.setZero();
  s.foot_pos_xy(0, 1) = 1.0;  // 1 m apart -> squared 1.0 > 0.9
  CHECK(to_map(evaluate_registry(reg, s)).at("feet_distance") == -10.0);
}

TEST_CASE("compact layout has no shoulder-roll joints so the row is silent") {
  const JointLayout lay = make_layout("compact8");
  const auto reg = make_recovery_registry(lay);
  RewardState s = make_rest_state(lay);
  s.q.setConstant(1.4);  // extreme pose still cannot trigger an absent joint
  CHECK(to_map(evaluate_registry(reg, s)).at("shoulder_roll_deviation") == 0.0);
}

TEST_CASE("whole-body registry tracks perfectly at the reference") {
  const JointLayout lay = make_layout("compact8");
  const auto reg = make_wbc_registry(lay);
  RewardState s = make_rest_state(lay);
  s.has_wbc_reference = true;
  s.body_pos = Mat::Random(3, 3);
  s.body_pos_des = s.body_pos;
  s.body_euler = Mat::Random(3, 3);
  s.body_euler_des = s.body_euler;
  s.body_vel = Mat::Random(3, 3);
  s.body_vel_des = s.body_vel;
  s.body_angvel = Mat::Random(3, 3);
  s.body_angvel_des = s.body_angvel;
  const auto b = evaluate_registry(reg, s);
  // 4 tracking rows at weight 1 plus two anchor rows at 0.5
  CHECK(b.per_group[static_cast<int>(RewardGroup::task)] == Catch::Approx(5.0).margin(1e-12));
  CHECK(b.total == Catch::Approx(5.0).margin(1e-12));

  // one joint pushed 0.1 beyond its upper limit
  const double hi = lay.joint(2).q_max;
  s.q(2) = hi + 0.1;
  const auto m = to_map(evaluate_registry(reg, s));
  CHECK(m.at("joint_pos_limits") == Catch::Approx(-1.0).margin(1e-9));

  s.self_contacts = 3;
  CHECK(to_map(evaluate_registry(reg, s)).at("self_contacts") == Catch::Approx(-0.3).margin(1e-12));
}

TEST_CASE("whole-body rows demand a reference") {
  const JointLayout lay = make_layout("compact8");
  const auto reg = make_wbc_registry(lay);
  RewardState s = make_rest_state(lay);
  s.has_wbc_reference = false;
  CHECK_THROWS_AS(evaluate_registry(reg, s), ConfigError);
}

TEST_CASE("exponential terms stay inside the unit interval") {
  const JointLayout lay = make_layout("compact8");
  RandomStream rng(21);
  for (int i = 0; i < 200; ++i) {
    const RewardState s = random_state(lay, rng);
    CHECK(track_lin_vel(s.cmd, s.base_lin_vel) > 0.0);
    CHECK(track_lin_vel(s.cmd, s.base_lin_vel) <= 1.0);
    CHECK(track_ang_vel(s.cmd, s.base_ang_vel) > 0.0);
    CHECK(track_ang_vel(s.cmd, s.base_ang_vel) <= 1.0);
  }
}

TEST_CASE("penalty rows never increase the total as their raw value grows") {
  const JointLayout lay = make_layout("compact8");
  const auto reg = make_loco_registry(lay);
  RewardState s = make_rest_state(lay);
  double prev = evaluate_registry(reg, s).total;
  for (double scale : {10.0, 30.0, 60.0}) {
    s.tau = Vec::Constant(8, scale);
    const double now = evaluate_registry(reg, s).total;
    CHECK(now <= prev + 1e-12);
    prev = now;
  }
}

TEST_CASE("non-finite term values abort") {
  std::vector<RewardTerm> reg{{"bad", 1.0, RewardGroup::task, [](const RewardState&) { return kInf; }}};
  RewardState s;
  CHECK_THROWS_AS(evaluate_registry(reg, s), NumericFault);
}
