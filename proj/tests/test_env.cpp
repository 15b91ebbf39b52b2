#include <catch2/catch_amalgamated.hpp>

#include "support/testutil.hpp"
#include "xloco/env.hpp"

using namespace xloco;

namespace {

struct Rig {
  JointLayout lay = make_layout("compact8");
  SurrogateParams phys;
  LegIndices legs = LegIndices::resolve(lay);
  EpisodePhysics ep;

  Rig() {
    ep.init_joint_scale = Vec::Ones(lay.dof());
    ep.dynamic_friction = 0.8;  // full propulsion coupling
  }

  RobotState standing(const Heightfield& hf, double x = 1.0) const {
    RobotState s;
    s.q = lay.q_default();
    s.qdot = Vec::Zero(lay.dof());
    s.base_pos = Vec3(x, 4.0, 0.0);
    const double ext = std::max(leg_extension(s.q(legs.l_hip), s.q(legs.l_knee), phys),
                                leg_extension(s.q(legs.r_hip), s.q(legs.r_knee), phys));
    s.base_pos.z() = hf.height_at(x, 4.0) + ext;
    s.head_height = s.base_pos.z() + phys.head_offset;
    s.contacts = {true, true};
    return s;
  }

  StepEvents substep(RobotState& s, const Vec& tau, const Heightfield& hf, Vec2& prev_off, double& timer,
                     bool upright_cmd = true) const {
    return surrogate_substep(s, tau, ep, phys, lay, legs, hf, prev_off, timer, 1.0 / 200.0, upright_cmd);
  }
};

EnvConfig quiet_config() {
  EnvConfig cfg;
  cfg.pushes_enabled = false;
  cfg.dr.init_joint_scale = {1.0, 1.0};
  cfg.cmd_vx = {0.5, 0.5};
  cfg.cmd_vy = {0.0, 0.0};
  cfg.cmd_wz = {0.0, 0.0};
  return cfg;
}

Heightfield flat_field() {
  return generate_field({make_patch_meta(TerrainType::flat, 0.0, TerrainRanges{})}, 1, 1, TerrainGridConfig{});
}

}  // namespace

TEST_CASE("domain randomization samples live inside their ranges") {
  DrConfig cfg;
  RandomStream rng(123);
  const int n = 100000;
  auto check_range = [&](double v, const Range& r) {
    CHECK(v >= r.lo);
    CHECK(v <= r.hi);
  };
  double sum_sf = 0, sum_pay = 0, sum_int = 0;
  for (int i = 0; i < n; ++i) {
    const EpisodePhysics p = sample_domain_randomization(cfg, rng, 4);
    check_range(p.static_friction, cfg.static_friction);
    check_range(p.dynamic_friction, cfg.dynamic_friction);
    check_range(p.payload, cfg.payload);
    check_range(p.kp_scale, cfg.kp_scale);
    check_range(p.kd_scale, cfg.kd_scale);
    check_range(p.push_interval, cfg.push_interval);
    for (int j = 0; j < 4; ++j) check_range(p.init_joint_scale(j), cfg.init_joint_scale);
    sum_sf += p.static_friction;
    sum_pay += p.payload;
    sum_int += p.push_interval;
  }
  auto mid_ok = [&](double mean, const Range& r) {
    const double se = (r.hi - r.lo) / std::sqrt(12.0) / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(mean - 0.5 * (r.lo + r.hi)) < 3.0 * se);
  };
  mid_ok(sum_sf / n, cfg.static_friction);
  mid_ok(sum_pay / n, cfg.payload);
  mid_ok(sum_int / n, cfg.push_interval);
}

TEST_CASE("degenerate randomization ranges are point masses") {
  DrConfig cfg;
  cfg.init_joint_scale = {0.8, 0.8};
  RandomStream rng(5);
  const EpisodePhysics p = sample_domain_randomization(cfg, rng, 3);
  for (int j = 0; j < 3; ++j) CHECK(p.init_joint_scale(j) == 0.8);
}

TEST_CASE("push deltas respect the randomization table") {
  DrConfig cfg;
  RandomStream rng(9);
  for (int i = 0; i < 100000; ++i) {
    RobotState s;
    s.q = Vec::Zero(2);
    s.qdot = Vec::Zero(2);
    const Vec3 v0 = s.base_lin_vel, w0 = s.base_ang_vel;
    if (!inject_push(s, cfg, PushContext{}, rng)) continue;
    const Vec3 dv = s.base_lin_vel - v0, dw = s.base_ang_vel - w0;
    CHECK(dv.x() >= -0.5);
    CHECK(dv.x() <= 0.5);
    CHECK(dv.y() >= -0.5);
    CHECK(dv.y() <= 0.5);
    CHECK(dv.z() >= -0.2);
    CHECK(dv.z() <= 0.2);
    CHECK(std::abs(dw.x()) <= 0.52);
    CHECK(std::abs(dw.y()) <= 0.52);
    CHECK(std::abs(dw.z()) <= 0.78);
  }
}

TEST_CASE("zero-width push ranges leave the state untouched") {
  DrConfig cfg;
  cfg.push_vx = cfg.push_vy = cfg.push_vz = {0.0, 0.0};
  cfg.push_roll = cfg.push_pitch = cfg.push_yaw = {0.0, 0.0};
  RandomStream rng(4);
  RobotState s;
  s.q = Vec::Zero(1);
  s.qdot = Vec::Zero(1);
  s.base_lin_vel = Vec3(0.3, -0.1, 0.0);
  const Vec3 before = s.base_lin_vel;
  CHECK(inject_push(s, cfg, PushContext{}, rng));
  CHECK(s.base_lin_vel == before);
  CHECK(s.base_ang_vel == Vec3::Zero());
}

TEST_CASE("vulnerability factor multiplies the trigger probability") {
  DrConfig cfg;
  cfg.base_trigger = 0.3;
  cfg.vulnerability_factor = 2.0;
  RandomStream rng(77);
  const int n = 100000;
  int fired_plain = 0, fired_vuln = 0;
  for (int i = 0; i < n; ++i) {
    RobotState a, b;
    a.q = b.q = Vec::Zero(1);
    a.qdot = b.qdot = Vec::Zero(1);
    fired_plain += inject_push(a, cfg, PushContext{false, 0.0}, rng);
    fired_vuln += inject_push(b, cfg, PushContext{false, 0.6}, rng);
  }
  const double se3 = 3.0 * std::sqrt(0.3 * 0.7 / n);
  CHECK(std::abs(fired_plain / static_cast<double>(n) - 0.3) < se3);
  const double se6 = 3.0 * std::sqrt(0.6 * 0.4 / n);
  CHECK(std::abs(fired_vuln / static_cast<double>(n) - 0.6) < se6);
}

TEST_CASE("default reset with unit scale stands at the nominal pose") {
  EnvConfig cfg = quiet_config();
  Env env(cfg);
  const RobotState s = env.reset(ResetMode::default_);
  CHECK((s.q - env.layout().q_default()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(s.posture == Posture::upright);
  CHECK(s.base_pos.z() == Catch::Approx(0.784).margin(1e-3));
  CHECK(s.head_height == Catch::Approx(s.base_pos.z() + 0.55).margin(1e-12));
}

TEST_CASE("fallen resets lie near the ground") {
  EnvConfig cfg = quiet_config();
  cfg.specialist = Specialist::recovery;
  Env env(cfg);
  for (int i = 0; i < 20; ++i) {
    const RobotState su = env.reset(ResetMode::fallen_supine);
    CHECK(su.posture == Posture::supine);
    CHECK(su.base_rpy.y() <= -1.3);
    CHECK(su.head_height < 0.45);
    const RobotState pr = env.reset(ResetMode::fallen_prone);
    CHECK(pr.posture == Posture::prone);
    CHECK(pr.base_rpy.y() >= 1.3);
  }
}

TEST_CASE("randomized offsets follow the obstacle start distributions") {
  EnvConfig cfg = quiet_config();
  cfg.terrain = TerrainType::box;
  cfg.difficulty = 0.5;
  Env env(cfg);
  for (int i = 0; i < 200; ++i) {
    const RobotState s = env.reset(ResetMode::randomized_offset);
    CHECK(s.base_pos.x() >= 3.0 - 0.55 - 0.15);
    CHECK(s.base_pos.x() <= 3.0 + 0.15);
  }
  cfg.terrain = TerrainType::hanging_bar;
  Env bar(cfg);
  for (int i = 0; i < 200; ++i) {
    const RobotState s = bar.reset(ResetMode::randomized_offset);
    CHECK(s.base_pos.x() >= 4.0 - 3.5);
    CHECK(s.base_pos.x() <= 4.0 - 3.0);
  }
}

TEST_CASE("zero action at the nominal pose is an equilibrium") {
  EnvConfig cfg = quiet_config();
  Env env(cfg);
  env.reset(ResetMode::default_);
  const Vec zero = Vec::Zero(env.layout().dof());
  for (int t = 0; t < 10; ++t) {
    const EnvStep r = env.step(zero);
    CHECK_FALSE(r.done);
  }
  CHECK((env.state().q - env.layout().q_default()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(env.state().base_lin_vel.norm() < 1e-9);
  CHECK(std::abs(env.state().base_pos.x() - 1.0) < 1e-9);
}

TEST_CASE("constant torque matches the discrete damped-integrator closed form") {
  Rig rig;
  const Heightfield hf = flat_field();
  RobotState s = rig.standing(hf);
  s.base_pos.z() = 5.0;  // airborne so no contact side effects
  rig.phys.gravity = 0.0;
  Vec tau = Vec::Zero(rig.lay.dof());
  const int j = rig.legs.l_knee;
  tau(j) = 0.2;
  Vec2 off = Vec2::Zero();
  double timer = 0.0;
  const double dt = 1.0 / 200.0, m = rig.phys.joint_inertia, d = rig.phys.joint_damping;
  const int n = 50;
  for (int t = 0; t < n; ++t) rig.substep(s, tau, hf, off, timer);
  const double decay = 1.0 - dt * d / m;
  const double expect = tau(j) / d * (1.0 - std::pow(decay, n));
  CHECK(s.qdot(j) == Catch::Approx(expect).margin(1e-9));
  CHECK(s.qdot(j) < tau(j) / d);  // saturating toward the damping limit
}

TEST_CASE("kinetic energy is non-increasing without torque or pushes") {
  Rig rig;
  rig.phys.gravity = 0.0;
  const Heightfield hf = flat_field();
  RandomStream rng(31);
  RobotState s = rig.standing(hf);
  s.base_pos.z() = 6.0;  // airborne, gravity off
  s.base_rpy = Vec3(0.2, -0.3, 0.7);
  for (int j = 0; j < rig.lay.dof(); ++j) s.qdot(j) = rng.uniform(-3.0, 3.0);
  s.base_lin_vel = Vec3(0.4, -0.2, 0.1);
  s.base_ang_vel = Vec3(0.1, -0.2, 0.3);
  const Vec zero = Vec::Zero(rig.lay.dof());
  Vec2 off(leg_offset(s.q(rig.legs.l_hip), s.q(rig.legs.l_knee), rig.phys),
           leg_offset(s.q(rig.legs.r_hip), s.q(rig.legs.r_knee), rig.phys));
  double timer = 0.0;
  auto energy = [&](const RobotState& st) {
    return 0.5 * rig.phys.joint_inertia * st.qdot.squaredNorm() + 0.5 * rig.phys.mass * st.base_lin_vel.squaredNorm() +
           0.5 * st.base_ang_vel.squaredNorm();
  };
  double prev = energy(s);
  for (int t = 0; t < 200; ++t) {
    rig.substep(s, zero, hf, off, timer);
    const double now = energy(s);
    CHECK(now <= prev + 1e-12);
    prev = now;
  }
}

TEST_CASE("joint kinetic energy decays under zero torque even in contact") {
  Rig rig;
  const Heightfield hf = flat_field();
  RandomStream rng(32);
  RobotState s = rig.standing(hf);
  for (int j = 0; j < rig.lay.dof(); ++j) s.qdot(j) = rng.uniform(-2.0, 2.0);
  Vec2 off = Vec2::Zero();
  double timer = 0.0;
  const Vec zero = Vec::Zero(rig.lay.dof());
  double prev = s.qdot.squaredNorm();
  for (int t = 0; t < 100; ++t) {
    rig.substep(s, zero, hf, off, timer);
    const double now = s.qdot.squaredNorm();
    CHECK(now <= prev + 1e-12);
    prev = now;
  }
}

TEST_CASE("violating the stability margin topples and latches a fall") {
  Rig rig;
  const Heightfield hf = flat_field();
  RobotState s = rig.standing(hf);
  s.base_rpy.y() = 0.75;  // beyond the 0.6 rad margin
  Vec2 off = Vec2::Zero();
  double timer = 0.0;
  const Vec zero = Vec::Zero(rig.lay.dof());
  bool fell = false;
  for (int t = 0; t < 400; ++t) fell |= rig.substep(s, zero, hf, off, timer).fell;
  CHECK(fell);
  CHECK(s.posture == Posture::prone);  // forward pitch ends face-down
  CHECK(s.head_height < 0.45);
}

TEST_CASE("tall boxes block upright walkers and yield to a crouch") {
  Rig rig;
  const Heightfield hf = generate_field({make_patch_meta_param(TerrainType::box, 0.65)}, 1, 1, TerrainGridConfig{});
  const Vec zero = Vec::Zero(rig.lay.dof());
  Vec2 off = Vec2::Zero();
  double timer = 0.0;

  RobotState s = rig.standing(hf, 2.85);
  s.base_lin_vel.x() = 1.0;
  const StepEvents ev = rig.substep(s, zero, hf, off, timer);
  CHECK(ev.collision);
  CHECK(s.base_lin_vel.x() == 0.0);

  RobotState c = rig.standing(hf, 2.85);
  c.q(rig.legs.l_hip) = c.q(rig.legs.r_hip) = -1.3;
  c.q(rig.legs.l_knee) = c.q(rig.legs.r_knee) = 2.2;
  const double ext = leg_extension(-1.3, 2.2, rig.phys);
  c.base_pos.z() = hf.height_at(2.85, 4.0) + ext;
  c.base_lin_vel.x() = 1.0;
  Vec2 off2(leg_offset(-1.3, 2.2, rig.phys), leg_offset(-1.3, 2.2, rig.phys));
  double timer2 = 0.0;
  const StepEvents ev2 = rig.substep(c, zero, hf, off2, timer2);
  CHECK_FALSE(ev2.collision);
  CHECK(c.base_lin_vel.x() > 0.5);
}

TEST_CASE("low bars block standing heads but admit crawlers") {
  Rig rig;
  const Heightfield hf =
      generate_field({make_patch_meta_param(TerrainType::hanging_bar, 0.7)}, 1, 1, TerrainGridConfig{});
  const Vec zero = Vec::Zero(rig.lay.dof());

  RobotState s = rig.standing(hf, 3.8);
  s.base_lin_vel.x() = 1.0;
  Vec2 off = Vec2::Zero();
  double timer = 0.0;
  CHECK(rig.substep(s, zero, hf, off, timer).collision);
  CHECK(s.base_lin_vel.x() == 0.0);

  RobotState crawl = rig.standing(hf, 3.8);
  crawl.base_rpy.y() = 1.5;  // lying
  crawl.base_pos.z() = rig.phys.lying_height;
  crawl.head_height = crawl.base_pos.z() + rig.phys.head_offset * std::cos(crawl.tilt());
  crawl.base_lin_vel.x() = 1.0;
  Vec2 off2 = Vec2::Zero();
  double timer2 = 0.0;
  const StepEvents ev = rig.substep(crawl, zero, hf, off2, timer2, false);
  CHECK_FALSE(ev.collision);
  CHECK(crawl.base_lin_vel.x() > 0.5);
}

TEST_CASE("patch context appears inside the look-ahead window only") {
  EnvConfig cfg = quiet_config();
  cfg.terrain = TerrainType::box;
  cfg.use_difficulty_param = true;
  cfg.difficulty_param = 0.5;
  Env env(cfg);
  env.reset(ResetMode::default_);
  // reset puts the base at x = 1: the box at x = 3 is outside the 1.5 m window
  CHECK(env.context_id() == 0);

  EnvConfig cfg2 = cfg;
  cfg2.terrain = TerrainType::hanging_bar;
  cfg2.difficulty_param = 0.9;
  Env bar(cfg2);
  bar.reset(ResetMode::default_);
  CHECK(bar.context_id() == 0);
}

TEST_CASE("motion command layouts") {
  const JointLayout lay8 = make_layout("compact8");
  RandomStream rng(11);
  auto trajs = generate_reference_motions(Skill::climb, 1, rng, lay8);
  const Vec m = motion_command(trajs[0], 10, lay8, 15);
  REQUIRE(m.size() == 15);
  CHECK(m(0) == Catch::Approx(10.0 / 149.0).margin(1e-12));
  for (int i = 0; i < 6; ++i) CHECK(m(1 + i) == trajs[0].base(i, 10));
  for (int j = 0; j < 8; ++j) CHECK(m(7 + j) == trajs[0].joints(j, 10));

  const JointLayout lay23 = make_layout("g1_23");
  auto full = generate_reference_motions(Skill::walk, 1, rng, lay23);
  const Vec m52 = motion_command(full[0], 0, lay23, 52);
  REQUIRE(m52.size() == 52);
  CHECK(m52(0) == 0.0);
  CHECK(m52.allFinite());
  CHECK_THROWS_AS(motion_command(full[0], 999, lay23, 52), ConfigError);
}

TEST_CASE("observation widths match the declared contracts") {
  EnvConfig cfg = quiet_config();
  Env env(cfg);
  env.reset(ResetMode::default_);
  const EnvStep r = env.step(Vec::Zero(8));
  CHECK(r.prop.flatten().size() == 6 + 3 * 8);
  CHECK(r.priv.flatten().size() == 3 + 1 + 6 + 6 + 143 + 15);
  CHECK(r.prop.flatten().allFinite());
  CHECK(r.priv.flatten().allFinite());
}

TEST_CASE("episodes terminate on the configured timeout") {
  EnvConfig cfg = quiet_config();
  cfg.episode_seconds = 0.2;  // 10 control steps at 50 Hz
  Env env(cfg);
  env.reset(ResetMode::default_);
  const Vec zero = Vec::Zero(8);
  for (int t = 0; t < 9; ++t) CHECK_FALSE(env.step(zero).done);
  const EnvStep last = env.step(zero);
  CHECK(last.done);
  CHECK(last.timeout);
}

TEST_CASE("identical seeds give bit-identical trajectories") {
  EnvConfig cfg = quiet_config();
  cfg.terrain = TerrainType::slope;
  cfg.difficulty = 0.4;
  cfg.pushes_enabled = true;
  cfg.seed = 99;
  Env a(cfg), b(cfg);
  a.reset(ResetMode::default_);
  b.reset(ResetMode::default_);
  RandomStream act_rng(7);
  for (int t = 0; t < 60; ++t) {
    Vec act(8);
    for (int j = 0; j < 8; ++j) act(j) = act_rng.uniform(-0.5, 0.5);
    const EnvStep ra = a.step(act);
    const EnvStep rb = b.step(act);
    REQUIRE(ra.prop.flatten() == rb.prop.flatten());
    REQUIRE(ra.priv.flatten() == rb.priv.flatten());
    REQUIRE(ra.reward.total == rb.reward.total);
    if (ra.done) break;
  }
}

TEST_CASE("walking actions move the base forward") {
  EnvConfig cfg = quiet_config();
  Env env(cfg);
  env.reset(ResetMode::default_);
  const double x0 = env.state().base_pos.x();
  // cyclic anti-phase hip swing: stance legs sweep backward and push the base
  for (int t = 0; t < 150; ++t) {
    const double ph = 2.0 * M_PI * t / 25.0;
    Vec a = Vec::Zero(8);
    a(0) = 0.9 * std::sin(ph);         // left hip
    a(2) = 0.9 * std::sin(ph + M_PI);  // right hip
    a(1) = 0.3 + 0.3 * std::cos(ph);
    a(3) = 0.3 + 0.3 * std::cos(ph + M_PI);
    env.step(a);
  }
  CHECK(env.state().base_pos.x() > x0 + 0.3);
  CHECK(env.state().posture == Posture::upright);
}
