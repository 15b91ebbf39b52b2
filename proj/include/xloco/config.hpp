#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "xloco/common.hpp"
#include "xloco/depthcam.hpp"
#include "xloco/distill.hpp"
#include "xloco/env.hpp"
#include "xloco/rl.hpp"

namespace xloco {

inline Specialist specialist_from_name(const std::string& s) {
  for (Specialist k : {Specialist::loco, Specialist::recovery, Specialist::wbc})
    if (s == specialist_name(k)) return k;
  throw ConfigError("unknown specialist: " + s);
}

// ---------------------------------------------------------------------------
// Run configuration

struct AmpSection {
  double alpha_d = 10.0;  // gradient-penalty weight
  double lr = 1e-3;
  std::vector<int> hidden{64, 64};
  int window = 5;    // frames per discriminator input
  int batch = 64;    // windows per update
  int motions = 8;   // reference trajectories per skill
};

struct EvalSection {
  std::string task = "slope";  // slope|pit|stairs|bar|box|recovery
  int episodes = 100;
  int seeds = 3;
  double balance_seconds = 5.0;  // recovery success requires holding upright this long
  double cmd_vx = 0.5;           // forward command held during traversal episodes
};

/// Everything one run needs. Defaults are the desk-scale profile:
/// 64 envs, the 8-joint surrogate, iteration counts cut ~100x from the
/// full-scale schedule.
struct RunConfig {
  int num_envs = 64;
  EnvConfig env;  // carries seed, terrain, dr and reward params

  PpoConfig ppo;
  int iters_loco = 300;
  int iters_recovery = 150;
  int iters_wbc = 400;
  int log_every = 10;
  int checkpoint_every = 100;

  AmpSection amp;

  DistillConfig distill;
  int distill_iterations = 400;

  CameraModel camera;
  CameraDrConfig camera_dr;
  AugmentConfig augment;
  bool render_enabled = true;

  EvalSection eval;
};

// ---------------------------------------------------------------------------
// Key bindings: one table drives parsing, serialization and rejection of
// unknown keys, so the snapshot a run writes is always reparseable.

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> tokens(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string t;
  while (in >> t) out.push_back(t);
  return out;
}

inline double parse_double_token(const std::string& t, const std::string& key) {
  try {
    size_t idx = 0;
    const double v = std::stod(t, &idx);
    if (idx != t.size()) throw std::invalid_argument(t);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "': not a number: '" + t + "'");
  }
}

inline long long parse_int_token(const std::string& t, const std::string& key) {
  try {
    size_t idx = 0;
    const long long v = std::stoll(t, &idx);
    if (idx != t.size()) throw std::invalid_argument(t);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "': not an integer: '" + t + "'");
  }
}

template <class T>
T parse_value(const std::string& raw, const std::string& key) {
  const std::vector<std::string> tok = tokens(raw);
  if constexpr (std::is_same_v<T, double>) {
    if (tok.size() != 1) throw ConfigError("config: key '" + key + "': expected one number");
    return parse_double_token(tok[0], key);
  } else if constexpr (std::is_same_v<T, int>) {
    if (tok.size() != 1) throw ConfigError("config: key '" + key + "': expected one integer");
    const long long v = parse_int_token(tok[0], key);
    if (v < INT_MIN || v > INT_MAX) throw ConfigError("config: key '" + key + "': integer out of range");
    return static_cast<int>(v);
  } else if constexpr (std::is_same_v<T, uint64_t>) {
    if (tok.size() != 1) throw ConfigError("config: key '" + key + "': expected one integer");
    try {
      size_t idx = 0;
      const uint64_t v = std::stoull(tok[0], &idx);
      if (idx != tok[0].size() || tok[0][0] == '-') throw std::invalid_argument(tok[0]);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config: key '" + key + "': not an unsigned integer: '" + tok[0] + "'");
    }
  } else if constexpr (std::is_same_v<T, bool>) {
    if (tok.size() == 1 && tok[0] == "true") return true;
    if (tok.size() == 1 && tok[0] == "false") return false;
    throw ConfigError("config: key '" + key + "': expected true or false");
  } else if constexpr (std::is_same_v<T, std::string>) {
    const std::string v = trim(raw);
    if (v.empty()) throw ConfigError("config: key '" + key + "': empty value");
    return v;
  } else if constexpr (std::is_same_v<T, Range>) {
    if (tok.size() != 2) throw ConfigError("config: key '" + key + "': expected 'lo hi'");
    return Range{parse_double_token(tok[0], key), parse_double_token(tok[1], key)};
  } else if constexpr (std::is_same_v<T, Vec3>) {
    if (tok.size() != 3) throw ConfigError("config: key '" + key + "': expected three numbers");
    return Vec3(parse_double_token(tok[0], key), parse_double_token(tok[1], key), parse_double_token(tok[2], key));
  } else if constexpr (std::is_same_v<T, std::vector<int>>) {
    if (tok.empty()) throw ConfigError("config: key '" + key + "': expected at least one integer");
    std::vector<int> v;
    for (const auto& t : tok) v.push_back(static_cast<int>(parse_int_token(t, key)));
    return v;
  }
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string format_value(double v) { return format_double(v); }
inline std::string format_value(int v) { return std::to_string(v); }
inline std::string format_value(uint64_t v) { return std::to_string(v); }
inline std::string format_value(bool v) { return v ? "true" : "false"; }
inline std::string format_value(const std::string& v) { return v; }
inline std::string format_value(const Range& r) { return format_double(r.lo) + " " + format_double(r.hi); }
inline std::string format_value(const Vec3& v) {
  return format_double(v.x()) + " " + format_double(v.y()) + " " + format_double(v.z());
}
inline std::string format_value(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
  return s;
}

struct Binding {
  std::string section, key, comment;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline std::vector<Binding> make_bindings() {
  std::vector<Binding> v;
  auto add = [&v](const char* sec, const char* key, const char* comment, auto ref) {
    using T = std::remove_reference_t<decltype(ref(std::declval<RunConfig&>()))>;
    Binding b;
    b.section = sec;
    b.key = key;
    b.comment = comment;
    const std::string full = std::string(sec) + "." + key;
    b.set = [ref, full](RunConfig& c, const std::string& s) { ref(c) = parse_value<T>(s, full); };
    b.get = [ref](const RunConfig& c) { return format_value(ref(const_cast<RunConfig&>(c))); };
    v.push_back(std::move(b));
  };
  auto add_custom = [&v](const char* sec, const char* key, const char* comment,
                         std::function<void(RunConfig&, const std::string&)> set,
                         std::function<std::string(const RunConfig&)> get) {
    v.push_back(Binding{sec, key, comment, std::move(set), std::move(get)});
  };

  // [env]
  add("env", "seed", "master RNG seed; env var XLOCO_SEED overrides",
      +[](RunConfig& c) -> uint64_t& { return c.env.seed; });
  add("env", "num_envs", "parallel environments", +[](RunConfig& c) -> int& { return c.num_envs; });
  add("env", "joint_profile", "compact8 (desk) or g1_23 (full)",
      +[](RunConfig& c) -> std::string& { return c.env.joint_profile; });
  add_custom(
      "env", "specialist", "loco | recovery | wbc",
      [](RunConfig& c, const std::string& s) { c.env.specialist = specialist_from_name(trim(s)); },
      [](const RunConfig& c) { return std::string(specialist_name(c.env.specialist)); });
  add("env", "dt", "s, physics substep", +[](RunConfig& c) -> double& { return c.env.dt; });
  add("env", "control_decimation", "substeps per control step",
      +[](RunConfig& c) -> int& { return c.env.control_decimation; });
  add("env", "episode_seconds", "s", +[](RunConfig& c) -> double& { return c.env.episode_seconds; });
  add("env", "pushes_enabled", "scheduled base pushes", +[](RunConfig& c) -> bool& { return c.env.pushes_enabled; });
  add("env", "push_trigger", "chance an elapsed push fires",
      +[](RunConfig& c) -> double& { return c.env.push_trigger; });
  add("env", "m_dim", "motion-command width", +[](RunConfig& c) -> int& { return c.env.m_dim; });
  add("env", "cmd_vx", "m/s command range", +[](RunConfig& c) -> Range& { return c.env.cmd_vx; });
  add("env", "cmd_vy", "m/s command range", +[](RunConfig& c) -> Range& { return c.env.cmd_vy; });
  add("env", "cmd_wz", "rad/s command range", +[](RunConfig& c) -> Range& { return c.env.cmd_wz; });

  // [terrain]
  add_custom(
      "terrain", "type", "flat | slope | pit | stairs | hanging_bar | box | gap",
      [](RunConfig& c, const std::string& s) { c.env.terrain = terrain_from_name(trim(s)); },
      [](const RunConfig& c) { return std::string(terrain_name(c.env.terrain)); });
  add("terrain", "difficulty", "curriculum level in [0,1]", +[](RunConfig& c) -> double& { return c.env.difficulty; });
  add("terrain", "use_difficulty_param", "interpret difficulty_param as the raw obstacle parameter",
      +[](RunConfig& c) -> bool& { return c.env.use_difficulty_param; });
  add("terrain", "difficulty_param", "raw obstacle parameter (m or deg by type)",
      +[](RunConfig& c) -> double& { return c.env.difficulty_param; });

  // [dr]
  add("dr", "static_friction", "", +[](RunConfig& c) -> Range& { return c.env.dr.static_friction; });
  add("dr", "dynamic_friction", "", +[](RunConfig& c) -> Range& { return c.env.dr.dynamic_friction; });
  add("dr", "payload", "kg", +[](RunConfig& c) -> Range& { return c.env.dr.payload; });
  add("dr", "init_joint_scale", "multiplier on nominal angles",
      +[](RunConfig& c) -> Range& { return c.env.dr.init_joint_scale; });
  add("dr", "push_interval", "s", +[](RunConfig& c) -> Range& { return c.env.dr.push_interval; });
  add("dr", "push_vx", "m/s", +[](RunConfig& c) -> Range& { return c.env.dr.push_vx; });
  add("dr", "push_vy", "m/s", +[](RunConfig& c) -> Range& { return c.env.dr.push_vy; });
  add("dr", "push_vz", "m/s", +[](RunConfig& c) -> Range& { return c.env.dr.push_vz; });
  add("dr", "push_roll", "rad/s", +[](RunConfig& c) -> Range& { return c.env.dr.push_roll; });
  add("dr", "push_pitch", "rad/s", +[](RunConfig& c) -> Range& { return c.env.dr.push_pitch; });
  add("dr", "push_yaw", "rad/s", +[](RunConfig& c) -> Range& { return c.env.dr.push_yaw; });
  add("dr", "kp_scale", "", +[](RunConfig& c) -> Range& { return c.env.dr.kp_scale; });
  add("dr", "kd_scale", "", +[](RunConfig& c) -> Range& { return c.env.dr.kd_scale; });
  add("dr", "vulnerability_factor", "push-chance multiplier in vulnerable scenarios",
      +[](RunConfig& c) -> double& { return c.env.dr.vulnerability_factor; });

  // [ppo]
  add("ppo", "gamma", "", +[](RunConfig& c) -> double& { return c.ppo.gamma; });
  add("ppo", "lambda", "", +[](RunConfig& c) -> double& { return c.ppo.lambda; });
  add("ppo", "clip", "", +[](RunConfig& c) -> double& { return c.ppo.clip; });
  add("ppo", "entropy_coef", "", +[](RunConfig& c) -> double& { return c.ppo.entropy_coef; });
  add("ppo", "desired_kl", "", +[](RunConfig& c) -> double& { return c.ppo.desired_kl; });
  add("ppo", "lr", "", +[](RunConfig& c) -> double& { return c.ppo.lr; });
  add("ppo", "adaptive_lr_enabled", "", +[](RunConfig& c) -> bool& { return c.ppo.adaptive_lr_enabled; });
  add("ppo", "lr_min", "", +[](RunConfig& c) -> double& { return c.ppo.lr_min; });
  add("ppo", "lr_max", "", +[](RunConfig& c) -> double& { return c.ppo.lr_max; });
  add("ppo", "epochs", "", +[](RunConfig& c) -> int& { return c.ppo.epochs; });
  add("ppo", "minibatches", "", +[](RunConfig& c) -> int& { return c.ppo.minibatches; });
  add("ppo", "steps_per_batch", "control steps per env per update",
      +[](RunConfig& c) -> int& { return c.ppo.steps_per_batch; });
  add("ppo", "value_coef", "", +[](RunConfig& c) -> double& { return c.ppo.value_coef; });
  add("ppo", "max_grad_norm", "", +[](RunConfig& c) -> double& { return c.ppo.max_grad_norm; });
  add("ppo", "iterations_loco", "desk-scaled from the full 30k schedule",
      +[](RunConfig& c) -> int& { return c.iters_loco; });
  add("ppo", "iterations_recovery", "desk-scaled from the full 10k schedule",
      +[](RunConfig& c) -> int& { return c.iters_recovery; });
  add("ppo", "iterations_wbc", "desk-scaled from the full 50k schedule",
      +[](RunConfig& c) -> int& { return c.iters_wbc; });
  add("ppo", "log_every", "iterations between CSV rows", +[](RunConfig& c) -> int& { return c.log_every; });
  add("ppo", "checkpoint_every", "iterations between checkpoints",
      +[](RunConfig& c) -> int& { return c.checkpoint_every; });

  // [amp]
  add("amp", "alpha_d", "gradient-penalty weight", +[](RunConfig& c) -> double& { return c.amp.alpha_d; });
  add("amp", "lr", "", +[](RunConfig& c) -> double& { return c.amp.lr; });
  add("amp", "hidden", "discriminator hidden sizes", +[](RunConfig& c) -> std::vector<int>& { return c.amp.hidden; });
  add("amp", "window", "frames per discriminator input", +[](RunConfig& c) -> int& { return c.amp.window; });
  add("amp", "batch", "windows per update", +[](RunConfig& c) -> int& { return c.amp.batch; });
  add("amp", "motions", "reference trajectories per skill", +[](RunConfig& c) -> int& { return c.amp.motions; });

  // [rewards]
  add("rewards", "h_stage1", "m", +[](RunConfig& c) -> double& { return c.env.rew.h_stage1; });
  add("rewards", "h_stage3", "m", +[](RunConfig& c) -> double& { return c.env.rew.h_stage3; });
  add("rewards", "air_time_target", "s", +[](RunConfig& c) -> double& { return c.env.rew.air_time_target; });
  add("rewards", "feet_lateral_target", "m", +[](RunConfig& c) -> double& { return c.env.rew.feet_lateral_target; });
  add("rewards", "clearance_height", "m", +[](RunConfig& c) -> double& { return c.env.rew.clearance_height; });
  add("rewards", "post_target_height", "m", +[](RunConfig& c) -> double& { return c.env.rew.post_target_height; });

  // [distill]
  add("distill", "lr", "", +[](RunConfig& c) -> double& { return c.distill.lr; });
  add("distill", "epochs", "", +[](RunConfig& c) -> int& { return c.distill.epochs; });
  add("distill", "minibatches", "", +[](RunConfig& c) -> int& { return c.distill.minibatches; });
  add("distill", "steps_per_iter", "control steps per env per iteration",
      +[](RunConfig& c) -> int& { return c.distill.steps_per_iter; });
  add("distill", "iterations", "", +[](RunConfig& c) -> int& { return c.distill_iterations; });
  add("distill", "rho_init", "starting expert fraction", +[](RunConfig& c) -> double& { return c.distill.rho_init; });
  add("distill", "delta_rho", "decay per qualifying iteration",
      +[](RunConfig& c) -> double& { return c.distill.delta_rho; });
  add("distill", "tau_low", "decay threshold", +[](RunConfig& c) -> double& { return c.distill.tau_low; });
  add("distill", "tau_high", "suspend threshold", +[](RunConfig& c) -> double& { return c.distill.tau_high; });
  add("distill", "head_threshold", "m, recovery-case boundary",
      +[](RunConfig& c) -> double& { return c.distill.head_threshold; });
  add("distill", "history_steps", "proprioceptive frames the student sees",
      +[](RunConfig& c) -> int& { return c.distill.history_steps; });
  add("distill", "noise_angle", "rad, uniform obs noise on angles",
      +[](RunConfig& c) -> double& { return c.distill.noise_angle; });
  add("distill", "noise_vel", "rad/s, uniform obs noise on rates",
      +[](RunConfig& c) -> double& { return c.distill.noise_vel; });
  add("distill", "sfi_enabled", "", +[](RunConfig& c) -> bool& { return c.distill.sfi_enabled; });
  add("distill", "sfi_fall_prob", "per step per env while upright",
      +[](RunConfig& c) -> double& { return c.distill.sfi_fall_prob; });
  add("distill", "sfi_window", "head-height samples", +[](RunConfig& c) -> int& { return c.distill.sfi_window; });
  add("distill", "sfi_variance_delta", "m^2", +[](RunConfig& c) -> double& { return c.distill.sfi_variance_delta; });
  add("distill", "fallen_reset_fraction", "episodes starting from the ground",
      +[](RunConfig& c) -> double& { return c.distill.fallen_reset_fraction; });

  // [camera]
  add("camera", "pos_offset", "m, head-frame mount", +[](RunConfig& c) -> Vec3& { return c.camera.pos_offset; });
  add("camera", "rpy_offset", "rad, mount orientation", +[](RunConfig& c) -> Vec3& { return c.camera.rpy_offset; });
  add("camera", "fov_h_deg", "deg", +[](RunConfig& c) -> double& { return c.camera.fov_h_deg; });
  add("camera", "width", "px", +[](RunConfig& c) -> int& { return c.camera.width; });
  add("camera", "height", "px", +[](RunConfig& c) -> int& { return c.camera.height; });
  add("camera", "max_range", "m", +[](RunConfig& c) -> double& { return c.camera.max_range; });
  add("camera", "near_clip", "m", +[](RunConfig& c) -> double& { return c.camera.near_clip; });
  add("camera", "pos_jitter", "m, per axis", +[](RunConfig& c) -> Range& { return c.camera_dr.pos_jitter; });
  add("camera", "pitch_deg", "deg", +[](RunConfig& c) -> Range& { return c.camera_dr.pitch_deg; });
  add("camera", "roll_deg", "deg", +[](RunConfig& c) -> Range& { return c.camera_dr.roll_deg; });
  add("camera", "yaw_deg", "deg", +[](RunConfig& c) -> Range& { return c.camera_dr.yaw_deg; });
  add("camera", "fov_shift_deg", "deg", +[](RunConfig& c) -> Range& { return c.camera_dr.fov_shift_deg; });
  add("camera", "noise_sigma", "m", +[](RunConfig& c) -> double& { return c.augment.noise_sigma; });
  add("camera", "blur_sigma", "", +[](RunConfig& c) -> double& { return c.augment.blur_sigma; });
  add("camera", "enable_blur", "", +[](RunConfig& c) -> bool& { return c.augment.enable_blur; });
  add("camera", "render_enabled", "render depth during distillation",
      +[](RunConfig& c) -> bool& { return c.render_enabled; });

  // [eval]
  add("eval", "task", "slope | pit | stairs | bar | box | recovery",
      +[](RunConfig& c) -> std::string& { return c.eval.task; });
  add("eval", "episodes", "per seed", +[](RunConfig& c) -> int& { return c.eval.episodes; });
  add("eval", "seeds", "", +[](RunConfig& c) -> int& { return c.eval.seeds; });
  add("eval", "balance_seconds", "s, recovery hold time",
      +[](RunConfig& c) -> double& { return c.eval.balance_seconds; });
  add("eval", "cmd_vx", "m/s held during traversal episodes",
      +[](RunConfig& c) -> double& { return c.eval.cmd_vx; });

  return v;
}

inline const std::vector<Binding>& bindings() {
  static const std::vector<Binding> b = make_bindings();
  return b;
}

inline const Binding* find_binding(const std::string& section, const std::string& key) {
  for (const Binding& b : bindings())
    if (b.section == section && b.key == key) return &b;
  return nullptr;
}

}  // namespace config_detail

// ---------------------------------------------------------------------------
// Validation and resolution

inline void check_range_order(const char* name, const Range& r) {
  require(r.lo <= r.hi, std::string("config: range '") + name + "' has lo > hi");
}

/// Copies cross-section values to their consumers and rejects out-of-range
/// settings. Call after parsing or after programmatic edits.
inline void finalize_run_config(RunConfig& c) {
  require(c.num_envs >= 1, "config: env.num_envs must be >= 1");
  require(c.env.dt > 0.0, "config: env.dt must be positive");
  require(c.env.control_decimation >= 1, "config: env.control_decimation must be >= 1");
  require(c.env.episode_seconds > 0.0, "config: env.episode_seconds must be positive");
  require(c.env.push_trigger >= 0.0 && c.env.push_trigger <= 1.0, "config: env.push_trigger outside [0,1]");
  require(c.env.m_dim >= 1, "config: env.m_dim must be >= 1");
  check_range_order("env.cmd_vx", c.env.cmd_vx);
  check_range_order("env.cmd_vy", c.env.cmd_vy);
  check_range_order("env.cmd_wz", c.env.cmd_wz);

  require(c.env.difficulty >= 0.0 && c.env.difficulty <= 1.0, "config: terrain.difficulty outside [0,1]");
  require(c.env.difficulty_param >= 0.0, "config: terrain.difficulty_param must be >= 0");

  const DrConfig& d = c.env.dr;
  check_range_order("dr.static_friction", d.static_friction);
  check_range_order("dr.dynamic_friction", d.dynamic_friction);
  check_range_order("dr.payload", d.payload);
  check_range_order("dr.init_joint_scale", d.init_joint_scale);
  check_range_order("dr.push_interval", d.push_interval);
  check_range_order("dr.push_vx", d.push_vx);
  check_range_order("dr.push_vy", d.push_vy);
  check_range_order("dr.push_vz", d.push_vz);
  check_range_order("dr.push_roll", d.push_roll);
  check_range_order("dr.push_pitch", d.push_pitch);
  check_range_order("dr.push_yaw", d.push_yaw);
  check_range_order("dr.kp_scale", d.kp_scale);
  check_range_order("dr.kd_scale", d.kd_scale);
  require(d.vulnerability_factor >= 1.0, "config: dr.vulnerability_factor must be >= 1");

  c.ppo.num_envs = c.num_envs;  // one vector width for the whole run
  c.ppo.validate();
  require(c.iters_loco >= 1 && c.iters_recovery >= 1 && c.iters_wbc >= 1,
          "config: ppo.iterations_* must be >= 1");
  require(c.log_every >= 1 && c.checkpoint_every >= 1, "config: ppo.log_every/checkpoint_every must be >= 1");

  require(c.amp.alpha_d >= 0.0, "config: amp.alpha_d must be >= 0");
  require(c.amp.lr > 0.0, "config: amp.lr must be positive");
  require(!c.amp.hidden.empty(), "config: amp.hidden must list at least one layer");
  for (int h : c.amp.hidden) require(h >= 1, "config: amp.hidden sizes must be >= 1");
  require(c.amp.window >= 2, "config: amp.window must be >= 2");
  require(c.amp.batch >= 1 && c.amp.motions >= 1, "config: amp.batch/motions must be >= 1");

  require(c.env.rew.h_stage1 > 0.0 && c.env.rew.h_stage3 > 0.0, "config: rewards stage heights must be positive");
  require(c.env.rew.air_time_target > 0.0, "config: rewards.air_time_target must be positive");
  require(c.env.rew.clearance_height >= 0.0, "config: rewards.clearance_height must be >= 0");

  c.distill.validate();
  require(c.distill_iterations >= 1, "config: distill.iterations must be >= 1");
  require(c.distill.sfi_window >= 2, "config: distill.sfi_window must be >= 2");
  require(c.distill.sfi_fall_prob >= 0.0 && c.distill.sfi_fall_prob <= 1.0,
          "config: distill.sfi_fall_prob outside [0,1]");

  c.camera.validate();
  check_range_order("camera.pos_jitter", c.camera_dr.pos_jitter);
  check_range_order("camera.pitch_deg", c.camera_dr.pitch_deg);
  check_range_order("camera.roll_deg", c.camera_dr.roll_deg);
  check_range_order("camera.yaw_deg", c.camera_dr.yaw_deg);
  check_range_order("camera.fov_shift_deg", c.camera_dr.fov_shift_deg);
  require(c.augment.noise_sigma >= 0.0, "config: camera.noise_sigma must be >= 0");
  require(c.augment.blur_sigma > 0.0, "config: camera.blur_sigma must be positive");

  static const std::vector<std::string> kTasks{"slope", "pit", "stairs", "bar", "box", "recovery"};
  bool known = false;
  for (const auto& t : kTasks) known = known || t == c.eval.task;
  require(known, "config: eval.task must be one of slope|pit|stairs|bar|box|recovery, got '" + c.eval.task + "'");
  require(c.eval.episodes >= 1 && c.eval.seeds >= 1, "config: eval.episodes/seeds must be >= 1");
  require(c.eval.balance_seconds > 0.0, "config: eval.balance_seconds must be positive");
  require(c.eval.cmd_vx >= 0.0, "config: eval.cmd_vx must be non-negative");
}

// ---------------------------------------------------------------------------
// Text format

/// Layered key-value text: '[section]' headers, 'key = value' lines, '#'
/// comments. Unknown sections or keys are errors; unmentioned keys keep the
/// values already in `base`.
inline RunConfig parse_config_text(const std::string& text, RunConfig base = RunConfig{}) {
  using namespace config_detail;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const Binding& b : bindings()) known = known || b.section == section;
      if (!known) throw ConfigError("config line " + std::to_string(lineno) + ": unknown section '" + section + "'");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": key '" + key + "' before any [section]");
    const Binding* b = find_binding(section, key);
    if (b == nullptr)
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + section + "." + key + "'");
    b->set(base, value);
  }
  finalize_run_config(base);
  return base;
}

/// Canonical snapshot: every key in a fixed order with unit comments.
/// parse_config_text(serialize_config(c)) reproduces c exactly.
inline std::string serialize_config(const RunConfig& c) {
  using namespace config_detail;
  std::string out;
  std::string section;
  for (const Binding& b : bindings()) {
    if (b.section != section) {
      if (!section.empty()) out += "\n";
      section = b.section;
      out += "[" + section + "]\n";
    }
    out += b.key + " = " + b.get(c);
    if (b.comment[0] != '\0') out += "  # " + b.comment;
    out += "\n";
  }
  return out;
}

/// 16-hex-digit FNV-1a of the canonical snapshot; embedded in checkpoints.
inline std::string config_hash(const RunConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(serialize_config(c))));
  return buf;
}

/// Hash that identifies a training setup. The eval request section and the
/// specialist role are normalized first: picking a different benchmark task
/// must not disown a checkpoint, and the role is already recorded in the
/// checkpoint's kind field, so three specialists trained from one config file
/// all embed the same hash.
inline std::string training_hash(const RunConfig& c) {
  RunConfig n = c;
  n.eval = EvalSection{};
  n.env.specialist = Specialist::loco;
  return config_hash(n);
}

inline RunConfig load_config_file(const std::string& path, RunConfig base = RunConfig{}) {
  std::ifstream in(path);
  require(in.good(), "config: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), std::move(base));
}

inline void save_config_file(const std::string& path, const RunConfig& c) {
  std::ofstream out(path);
  require(out.good(), "config: cannot write '" + path + "'");
  out << serialize_config(c);
  require(out.good(), "config: write failed for '" + path + "'");
}

/// XLOCO_SEED beats the config seed when set; returns true if applied.
inline bool apply_seed_env_override(RunConfig& c) {
  const char* s = std::getenv("XLOCO_SEED");
  if (s == nullptr || *s == '\0') return false;
  c.env.seed = config_detail::parse_value<uint64_t>(s, "XLOCO_SEED");
  return true;
}

}  // namespace xloco
