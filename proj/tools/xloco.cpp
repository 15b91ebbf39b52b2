// Command-line front end: train specialists, distill the vision student,
// benchmark policies, and render depth images from scene descriptions.
//
// Exit codes: 0 success, 2 configuration/usage error, 3 numeric fault.

#include <CLI11.hpp>

#include <xloco/eval.hpp>
#include <xloco/trainer.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace xloco;

constexpr double kDeg2Rad = M_PI / 180.0;

std::string g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Seed precedence: config file < XLOCO_SEED env var < --seed flag.
RunConfig resolve_config(const std::string& path, long long seed_flag) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_config_file(path);
  apply_seed_env_override(cfg);
  if (seed_flag >= 0) cfg.env.seed = static_cast<uint64_t>(seed_flag);
  finalize_run_config(cfg);
  return cfg;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write '" + path + "'");
  out << text;
  require(out.good(), "short write on '" + path + "'");
}

// ---------------------------------------------------------------------------
// train-specialist

int cmd_train(const std::string& name, const std::string& config_path, long long seed, const std::string& out_dir,
              int iterations) {
  const RunConfig cfg = resolve_config(config_path, seed);
  const Specialist kind = specialist_from_name(name);
  int iters = iterations;
  if (iters <= 0) {
    switch (kind) {
      case Specialist::loco: iters = cfg.iters_loco; break;
      case Specialist::recovery: iters = cfg.iters_recovery; break;
      case Specialist::wbc: iters = cfg.iters_wbc; break;
    }
  }
  std::filesystem::create_directories(out_dir);

  const TrainRunResult res =
      train_specialist_run(cfg, kind, out_dir, iters, specialist_net_for(cfg.env.joint_profile), &std::cout);
  std::cout << "checkpoint " << res.checkpoint_path << "\n"
            << "log        " << res.csv_path << "\n";
  if (res.aborted_on_numeric_fault) {
    std::cerr << "xloco: numeric fault after " << res.iterations_completed << " iterations: " << res.fault_message
              << "\nxloco: last good checkpoint kept at " << res.checkpoint_path << "\n";
    return 3;
  }
  std::cout << "finished " << res.iterations_completed << " iterations\n";
  return 0;
}

// ---------------------------------------------------------------------------
// distill

int cmd_distill(const std::string& config_path, long long seed, const std::vector<std::string>& specialists,
                const std::string& out_dir, const std::string& replay_path, int iterations) {
  RunConfig cfg = resolve_config(config_path, seed);
  if (iterations > 0) {
    cfg.distill_iterations = iterations;
    finalize_run_config(cfg);
  }
  std::filesystem::create_directories(out_dir);

  if (!replay_path.empty()) {
    // Replay mode: feed a recorded loss sequence through the expert-fraction
    // scheduler and write the resulting trace without training anything.
    std::ifstream in(replay_path);
    require(in.good(), "replay: cannot open '" + replay_path + "'");
    std::vector<double> losses;
    double v = 0.0;
    while (in >> v) losses.push_back(v);
    require(!losses.empty(), "replay: no losses in '" + replay_path + "'");

    SchedulerState st;
    st.rho = cfg.distill.rho_init;
    st.delta_rho = cfg.distill.delta_rho;
    st.tau_low = cfg.distill.tau_low;
    st.tau_high = cfg.distill.tau_high;
    const std::vector<SchedulerTraceRow> rows = replay_scheduler(st, losses);

    CsvLog log;
    const std::string trace_path = out_dir + "/scheduler_trace.csv";
    log.open(trace_path, {"iteration", "loss", "rho_before", "rho_after", "suspended"});
    for (const SchedulerTraceRow& r : rows)
      log.row({static_cast<double>(r.iteration), r.loss, r.rho_before, r.rho_after, r.suspended ? 1.0 : 0.0});
    write_text_file(out_dir + "/scheduler_trace_resolved.cfg", serialize_config(cfg));

    std::cout << "trace      " << trace_path << "\n"
              << "replayed   " << rows.size() << " updates\n"
              << "final rho  " << g17(rows.back().rho_after) << "\n";
    return 0;
  }

  if (specialists.size() != 3) {
    static const char* roles[3] = {"loco", "recovery", "wbc"};
    static const char* covers[3] = {"case c_loco", "case c_rec", "cases c_coor_1 and c_coor_2"};
    std::string msg = "distill: need three specialist checkpoints in order: loco recovery wbc.";
    for (size_t i = specialists.size(); i < 3; ++i)
      msg += std::string(" Missing the ") + roles[i] + " checkpoint leaves " + covers[i] + " without a teacher.";
    throw ConfigError(msg);
  }

  LoadedSpecialist loco = load_specialist(specialists[0], Specialist::loco, cfg);
  LoadedSpecialist recovery = load_specialist(specialists[1], Specialist::recovery, cfg);
  LoadedSpecialist wbc = load_specialist(specialists[2], Specialist::wbc, cfg);

  const DistillRunResult res = distill_run(cfg, loco.policy, recovery.policy, wbc.policy, out_dir, &std::cout);
  std::cout << "checkpoint " << res.checkpoint_path << "\n"
            << "trace      " << res.csv_path << "\n";
  if (res.aborted_on_numeric_fault) {
    std::cerr << "xloco: numeric fault after " << res.iterations_completed << " iterations: " << res.fault_message
              << "\nxloco: last good checkpoint kept at " << res.checkpoint_path << "\n";
    return 3;
  }
  std::cout << "finished   " << res.iterations_completed << " iterations\n"
            << "final rho  " << g17(res.final_rho) << "\n"
            << "final loss " << g17(res.final_loss) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

int cmd_eval(const std::string& config_path, long long seed, const std::string& policy_path, const std::string& task,
             int episodes, int seeds, bool force, const std::string& out_dir) {
  RunConfig cfg = resolve_config(config_path, seed);
  if (!task.empty()) cfg.eval.task = task;
  if (episodes > 0) cfg.eval.episodes = episodes;
  if (seeds > 0) cfg.eval.seeds = seeds;
  finalize_run_config(cfg);
  const EvalTaskSpec spec = eval_task_spec(cfg.eval.task);

  const CheckpointHeader hdr = peek_checkpoint(policy_path);
  const std::string want = training_hash(cfg);
  if (hdr.config_hash != want) {
    if (!force)
      throw ConfigError("eval: checkpoint '" + policy_path + "' was trained under config hash " + hdr.config_hash +
                        " but the active config hashes to " + want + "; pass --force to evaluate anyway");
    std::cerr << "xloco: warning: config hash mismatch (" << hdr.config_hash << " vs " << want
              << "), continuing because of --force\n";
  }

  std::filesystem::create_directories(out_dir);

  EvalReport rep;
  std::string policy_kind = hdr.kind;
  if (hdr.kind == "student") {
    LoadedStudent student = load_student(policy_path, cfg);
    StudentController ctrl(&student.policy, cfg.camera, cfg.render_enabled);
    rep = evaluate(cfg, spec, ctrl);
  } else {
    const std::string prefix = "specialist_";
    require(hdr.kind.rfind(prefix, 0) == 0, "eval: unknown checkpoint kind '" + hdr.kind + "'");
    const Specialist kind = specialist_from_name(hdr.kind.substr(prefix.size()));
    LoadedSpecialist sp = load_specialist(policy_path, kind, cfg);

    // Whole-body tasks need the motion reference the teacher was trained
    // against; regenerate it from the same stream the pipeline uses.
    std::vector<ReferenceTrajectory> ref_pool;
    const ReferenceTrajectory* ref = nullptr;
    if (kind == Specialist::wbc && (spec.terrain == TerrainType::box || spec.terrain == TerrainType::hanging_bar)) {
      RandomStream ref_rng = RandomStream::for_stream(cfg.env.seed, 1000017);
      const auto climb = generate_reference_motions(Skill::climb, 1, ref_rng, make_layout(cfg.env.joint_profile));
      const auto crawl = generate_reference_motions(Skill::roll, 1, ref_rng, make_layout(cfg.env.joint_profile));
      ref_pool.push_back(spec.terrain == TerrainType::box ? climb.front() : crawl.front());
      ref = &ref_pool.front();
    }
    SpecialistController ctrl(&sp.policy, ref);
    rep = evaluate(cfg, spec, ctrl);
  }

  char line[256];
  std::snprintf(line, sizeof(line), "R_succ     %.6f +/- %.6f\n", rep.r_succ_mean, rep.r_succ_std);
  std::cout << "task       " << rep.task << "\n"
            << "policy     " << policy_path << " (" << policy_kind << ")\n"
            << "seeds      " << rep.seeds << " x " << rep.episodes_per_seed << " episodes\n"
            << line;
  std::snprintf(line, sizeof(line), "D_trav     %.6f +/- %.6f m\n", rep.d_trav_mean, rep.d_trav_std);
  std::cout << line << "config     " << rep.config_hash << "\n";

  const std::string csv_path = out_dir + "/eval_" + rep.task + ".csv";
  std::ostringstream csv;
  csv << "key,value\n"
      << "task," << rep.task << "\n"
      << "policy_kind," << policy_kind << "\n"
      << "config_hash," << rep.config_hash << "\n"
      << "seeds," << rep.seeds << "\n"
      << "episodes_per_seed," << rep.episodes_per_seed << "\n"
      << "r_succ_mean," << g17(rep.r_succ_mean) << "\n"
      << "r_succ_std," << g17(rep.r_succ_std) << "\n"
      << "d_trav_mean," << g17(rep.d_trav_mean) << "\n"
      << "d_trav_std," << g17(rep.d_trav_std) << "\n";
  for (size_t s = 0; s < rep.per_seed_r_succ.size(); ++s)
    csv << "r_succ_seed" << s << "," << g17(rep.per_seed_r_succ[s]) << "\n";
  for (size_t s = 0; s < rep.per_seed_d_trav.size(); ++s)
    csv << "d_trav_seed" << s << "," << g17(rep.per_seed_d_trav[s]) << "\n";
  write_text_file(csv_path, csv.str());
  write_text_file(out_dir + "/eval_" + rep.task + "_resolved.cfg", serialize_config(cfg));
  std::cout << "report     " << csv_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// render-depth

struct SceneSpec {
  TerrainType terrain = TerrainType::flat;
  double param = 0.0;
  bool has_param = false;
  double agent_x = 2.0;
  double agent_y = 4.0;
  double agent_yaw_deg = 0.0;
};

SceneSpec parse_scene_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "scene: cannot open '" + path + "'");
  SceneSpec sc;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
    while (!line.empty() && is_space(line.back())) line.pop_back();
    size_t start = 0;
    while (start < line.size() && is_space(line[start])) ++start;
    line.erase(0, start);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    require(eq != std::string::npos, "scene: expected key=value at " + path + ":" + std::to_string(lineno));
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    while (!key.empty() && is_space(key.back())) key.pop_back();
    size_t vs = 0;
    while (vs < val.size() && is_space(val[vs])) ++vs;
    val.erase(0, vs);
    auto as_double = [&]() {
      try {
        size_t used = 0;
        const double d = std::stod(val, &used);
        require(used == val.size(), "scene: bad number '" + val + "' for " + key);
        return d;
      } catch (const std::exception&) {
        throw ConfigError("scene: bad number '" + val + "' for " + key);
      }
    };
    if (key == "terrain") {
      sc.terrain = terrain_from_name(val);
    } else if (key == "param") {
      sc.param = as_double();
      sc.has_param = true;
    } else if (key == "agent_x") {
      sc.agent_x = as_double();
    } else if (key == "agent_y") {
      sc.agent_y = as_double();
    } else if (key == "agent_yaw_deg") {
      sc.agent_yaw_deg = as_double();
    } else {
      throw ConfigError("scene: unknown key '" + key + "' at " + path + ":" + std::to_string(lineno));
    }
  }
  require(sc.terrain == TerrainType::flat || sc.has_param,
          "scene: 'param' is required for terrain '" + std::string(terrain_name(sc.terrain)) + "'");
  return sc;
}

void apply_camera_params(CameraModel& cam, const std::string& params) {
  std::stringstream ss(params);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const size_t eq = item.find('=');
    require(eq != std::string::npos, "camera: expected key=value, got '" + item + "'");
    const std::string key = item.substr(0, eq), val = item.substr(eq + 1);
    double d = 0.0;
    try {
      size_t used = 0;
      d = std::stod(val, &used);
      require(used == val.size(), "camera: bad number '" + val + "' for " + key);
    } catch (const std::exception&) {
      throw ConfigError("camera: bad number '" + val + "' for " + key);
    }
    if (key == "width")
      cam.width = static_cast<int>(d);
    else if (key == "height")
      cam.height = static_cast<int>(d);
    else if (key == "fov_deg")
      cam.fov_h_deg = d;
    else if (key == "near")
      cam.near_clip = d;
    else if (key == "max_range")
      cam.max_range = d;
    else if (key == "mount_x")
      cam.pos_offset.x() = d;
    else if (key == "mount_y")
      cam.pos_offset.y() = d;
    else if (key == "mount_z")
      cam.pos_offset.z() = d;
    else if (key == "roll_deg")
      cam.rpy_offset.x() = kDeg2Rad * d;
    else if (key == "pitch_deg")
      cam.rpy_offset.y() = kDeg2Rad * d;
    else if (key == "yaw_deg")
      cam.rpy_offset.z() = kDeg2Rad * d;
    else
      throw ConfigError("camera: unknown parameter '" + key + "'");
  }
  cam.validate();
}

std::string depth_to_pgm(const Mat& img, double max_range) {
  std::ostringstream out;
  out << "P2\n" << img.cols() << " " << img.rows() << "\n65535\n";
  for (int r = 0; r < img.rows(); ++r) {
    for (int c = 0; c < img.cols(); ++c) {
      const double v = clampd(img(r, c) / max_range, 0.0, 1.0);
      out << (c ? " " : "") << static_cast<int>(std::lround(v * 65535.0));
    }
    out << "\n";
  }
  return out.str();
}

std::string depth_to_f32(const Mat& img) {
  std::string blob;
  blob.reserve(static_cast<size_t>(img.size()) * 4);
  for (int r = 0; r < img.rows(); ++r)
    for (int c = 0; c < img.cols(); ++c) {
      const float f = static_cast<float>(img(r, c));
      char bytes[4];
      std::memcpy(bytes, &f, 4);
      blob.append(bytes, 4);
    }
  return blob;
}

int cmd_render(const std::string& config_path, long long seed, const std::string& scene_path,
               const std::string& camera_params, const std::string& out_path, bool augment) {
  RunConfig cfg = resolve_config(config_path, seed);
  // Everything below renders fully in memory; files appear only after the
  // image exists, so a bad scene never leaves partial output behind.
  const SceneSpec scene = parse_scene_file(scene_path);
  CameraModel cam = cfg.camera;
  apply_camera_params(cam, camera_params);
  cfg.camera = cam;

  Heightfield hf = generate_field({make_patch_meta_param(scene.terrain, scene.param)}, 1, 1);

  const JointLayout lay = make_layout(cfg.env.joint_profile);
  const LegIndices legs = LegIndices::resolve(lay);
  RobotState s;
  s.q = lay.q_default();
  s.qdot = Vec::Zero(lay.dof());
  s.base_rpy = Vec3(0.0, 0.0, kDeg2Rad * scene.agent_yaw_deg);
  const double ext = std::max(leg_extension(s.q(legs.l_hip), s.q(legs.l_knee), cfg.env.phys),
                              leg_extension(s.q(legs.r_hip), s.q(legs.r_knee), cfg.env.phys));
  const double ground = hf.height_at(scene.agent_x, scene.agent_y);
  s.base_pos = Vec3(scene.agent_x, scene.agent_y, ground + ext);
  s.head_height = ext + cfg.env.phys.head_offset;

  const TriangleMesh static_mesh = build_static_mesh(hf);
  const TriangleMesh own_mesh = make_agent_mesh(s, cfg.env.phys);
  const Vec3 head_pos = s.base_pos + s.base_quat().toRotationMatrix() * Vec3(0, 0, cfg.env.phys.head_offset);
  const CameraPose pose = camera_world_pose(cam, head_pos, s.base_rpy);

  Mat img = render_depth(static_mesh, &own_mesh, cam, pose);
  if (augment) {
    RandomStream rng = RandomStream::for_stream(cfg.env.seed, 900001);
    img = augment_depth(img, cfg.augment, rng, cam.near_clip, cam.max_range);
  }

  const std::string pgm = depth_to_pgm(img, cam.max_range);
  const std::string blob = depth_to_f32(img);
  const std::string snapshot = serialize_config(cfg);
  write_text_file(out_path, pgm);
  write_text_file(out_path + ".f32", blob);
  write_text_file(out_path + ".cfg", snapshot);

  std::cout << "image      " << out_path << " (" << cam.width << "x" << cam.height << ", pgm, depth/max_range)\n"
            << "raw        " << out_path << ".f32 (float32 row-major meters)\n"
            << "depth      min " << g17(img.minCoeff()) << "  max " << g17(img.maxCoeff()) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xloco: synergetic locomotion policy pipeline"};
  app.require_subcommand(1);
  int rc = 0;

  // train-specialist
  std::string t_name, t_config, t_out = "runs";
  long long t_seed = -1;
  int t_iters = 0;
  CLI::App* train = app.add_subcommand("train-specialist", "train one specialist policy with PPO");
  train->add_option("specialist", t_name, "loco | recovery | wbc")->required();
  train->add_option("--config", t_config, "run config file")->required();
  train->add_option("--seed", t_seed, "seed override (beats config and XLOCO_SEED)");
  train->add_option("--out", t_out, "output directory");
  train->add_option("--iterations", t_iters, "iteration count override");
  train->callback([&]() { rc = cmd_train(t_name, t_config, t_seed, t_out, t_iters); });

  // distill
  std::string d_config, d_out = "runs", d_replay;
  std::vector<std::string> d_specs;
  long long d_seed = -1;
  int d_iters = 0;
  CLI::App* distill = app.add_subcommand("distill", "distill the three specialists into the vision student");
  distill->add_option("--config", d_config, "run config file")->required();
  distill->add_option("--specialists", d_specs, "loco, recovery, wbc checkpoints (in that order)")->expected(1, 3);
  distill->add_option("--seed", d_seed, "seed override (beats config and XLOCO_SEED)");
  distill->add_option("--out", d_out, "output directory");
  distill->add_option("--iterations", d_iters, "iteration count override");
  distill->add_option("--replay-losses", d_replay, "replay a loss sequence through the scheduler instead of training");
  distill->callback([&]() { rc = cmd_distill(d_config, d_seed, d_specs, d_out, d_replay, d_iters); });

  // eval
  std::string e_config, e_policy, e_task, e_out = "runs";
  long long e_seed = -1;
  int e_episodes = 0, e_seeds = 0;
  bool e_force = false;
  CLI::App* ev = app.add_subcommand("eval", "benchmark a policy checkpoint on one task");
  ev->add_option("--config", e_config, "run config file")->required();
  ev->add_option("--policy", e_policy, "policy checkpoint")->required();
  ev->add_option("--task", e_task, "slope | pit | stairs | bar | box | recovery");
  ev->add_option("--episodes", e_episodes, "episodes per seed");
  ev->add_option("--seeds", e_seeds, "number of seeds");
  ev->add_option("--seed", e_seed, "base seed override (beats config and XLOCO_SEED)");
  ev->add_option("--out", e_out, "output directory");
  ev->add_flag("--force", e_force, "evaluate despite a config hash mismatch");
  ev->callback([&]() { rc = cmd_eval(e_config, e_seed, e_policy, e_task, e_episodes, e_seeds, e_force, e_out); });

  // render-depth
  std::string r_config, r_scene, r_camera, r_out;
  long long r_seed = -1;
  bool r_augment = false;
  CLI::App* render = app.add_subcommand("render-depth", "render a depth image from a scene description");
  render->add_option("--scene", r_scene, "scene file (terrain=..., param=..., agent_x=...)")->required();
  render->add_option("--camera", r_camera, "comma-separated overrides, e.g. width=64,height=64,pitch_deg=15");
  render->add_option("--out", r_out, "output image path (pgm; also writes .f32 and .cfg)")->required();
  render->add_option("--config", r_config, "run config file (defaults apply when omitted)");
  render->add_option("--seed", r_seed, "seed override for --augment noise");
  render->add_flag("--augment", r_augment, "apply the training-time noise/blur augmentation");
  render->callback([&]() { rc = cmd_render(r_config, r_seed, r_scene, r_camera, r_out, r_augment); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "xloco: " << e.what() << "\n";
    return 2;
  } catch (const NumericFault& e) {
    std::cerr << "xloco: numeric fault: " << e.what() << "\n";
    return 3;
  }
  return rc;
}
