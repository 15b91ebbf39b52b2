#pragma once

#include <array>
#include <deque>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "xloco/amp.hpp"
#include "xloco/checkpoint.hpp"
#include "xloco/config.hpp"
#include "xloco/distill.hpp"
#include "xloco/env.hpp"
#include "xloco/policies.hpp"
#include "xloco/rl.hpp"

namespace xloco {

constexpr int kCurriculumMaxLevel = 10;

// ---------------------------------------------------------------------------
// Network sizes per joint profile. The surrogate profile gets desk-sized nets;
// full-scale profiles keep the library defaults.

inline SpecialistNetConfig specialist_net_for(const std::string& joint_profile) {
  SpecialistNetConfig c;
  if (joint_profile == "compact8") {
    c.actor_hidden = {64, 64};
    c.critic_hidden = {64, 64};
    c.elevation_hidden = {32};
    c.elevation_latent = 8;
  }
  return c;
}

inline StudentNetConfig student_net_for(const std::string& joint_profile, const CameraModel& cam,
                                        int history_steps) {
  StudentNetConfig c;
  c.depth_h = cam.height;
  c.depth_w = cam.width;
  c.depth_max_range = cam.max_range;
  c.history_steps = history_steps;
  if (joint_profile == "compact8") {
    c.conv = {{4, 4, 4}, {3, 2, 8}};
    c.depth_latent = 16;
    c.hist_hidden = {64};
    c.hist_latent = 32;
    c.gate_hidden = {32};
    c.expert_hidden = {64, 64};
  }
  return c;
}

// ---------------------------------------------------------------------------
// Deterministic CSV sink

class CsvLog {
 public:
  CsvLog() = default;

  void open(const std::string& path, const std::vector<std::string>& columns) {
    out_.open(path);
    require(out_.good(), "csv: cannot write '" + path + "'");
    cols_ = static_cast<int>(columns.size());
    for (size_t i = 0; i < columns.size(); ++i) out_ << (i ? "," : "") << columns[i];
    out_ << "\n";
  }

  void row(const std::vector<double>& values) {
    require(static_cast<int>(values.size()) == cols_, "csv: row width mismatch");
    char buf[64];
    for (size_t i = 0; i < values.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", values[i]);
      out_ << (i ? "," : "") << buf;
    }
    out_ << "\n";
    out_.flush();
  }

  bool is_open() const { return out_.is_open(); }

 private:
  std::ofstream out_;
  int cols_ = 0;
};

// ---------------------------------------------------------------------------
// Specialist PPO trainer

struct TrainIterStats {
  int iteration = 0;
  double mean_reward = 0.0;                          // weighted total per control step
  std::array<double, kRewardGroups> group_reward{};  // per-step means
  std::vector<double> term_means;                    // registry order
  PpoStats ppo;
  AmpStats amp;
  bool amp_used = false;
  int episodes_finished = 0;
  double mean_ep_len = 0.0;        // control steps, episodes that ended this iteration
  double traversal_fraction = 0.0; // mean distance fraction of finished episodes
  double mean_difficulty = 0.0;    // curriculum level average across envs
};

class SpecialistTrainer {
 public:
  SpecialistTrainer(RunConfig cfg, Specialist kind, SpecialistNetConfig net_cfg = {})
      : cfg_(std::move(cfg)), kind_(kind) {
    cfg_.env.specialist = kind;
    finalize_run_config(cfg_);
    rng_ = RandomStream::for_stream(cfg_.env.seed, 1000003);

    for (int i = 0; i < cfg_.num_envs; ++i) {
      EnvConfig ec = cfg_.env;
      ec.env_index = i;
      envs_.emplace_back(ec);
    }
    const JointLayout& lay = envs_.front().layout();
    act_dim_ = lay.dof();
    prop_dim_ = 6 + 3 * act_dim_;
    obs_dim_ = prop_dim_ + 16 + cfg_.env.scan_h + cfg_.env.m_dim;

    RandomStream net_rng = RandomStream::for_stream(cfg_.env.seed, 1000007);
    policy_ = SpecialistPolicy::make(kind, prop_dim_, cfg_.env.scan_h, cfg_.env.m_dim, act_dim_, net_cfg, net_rng);
    opt_ = Adam(cfg_.ppo.lr);

    use_amp_ = kind != Specialist::wbc;
    if (use_amp_) {
      disc_ = Mlp::make(act_dim_ * cfg_.amp.window, cfg_.amp.hidden, 1, net_rng);
      disc_opt_ = Adam(cfg_.amp.lr);
      const Skill sk = kind == Specialist::loco ? Skill::walk : Skill::recover;
      motions_.trajectories = generate_reference_motions(sk, cfg_.amp.motions, net_rng, lay);
      motions_.window = cfg_.amp.window;
    }
    if (kind == Specialist::wbc) {
      climb_refs_ = generate_reference_motions(Skill::climb, cfg_.amp.motions, net_rng, lay);
      crawl_refs_ = generate_reference_motions(Skill::roll, cfg_.amp.motions, net_rng, lay);
    }

    last_action_.assign(static_cast<size_t>(cfg_.num_envs), Vec::Zero(act_dim_));
    q_hist_.resize(static_cast<size_t>(cfg_.num_envs));
    const int level0 =
        static_cast<int>(clampd(cfg_.env.difficulty, 0.0, 1.0) * kCurriculumMaxLevel + 0.5);
    levels_.assign(static_cast<size_t>(cfg_.num_envs), level0);
    for (int i = 0; i < cfg_.num_envs; ++i) reset_env(i);

    for (const auto& term : make_registry(kind, lay, cfg_.env.rew)) term_names_.push_back(term.name);
  }

  const SpecialistPolicy& policy() const { return policy_; }
  SpecialistPolicy& policy() { return policy_; }
  Mlp& discriminator() { return disc_; }
  const std::vector<std::string>& term_names() const { return term_names_; }
  const RunConfig& config() const { return cfg_; }
  int iteration() const { return iter_; }
  int obs_dim() const { return obs_dim_; }
  int act_dim() const { return act_dim_; }

  TrainIterStats iterate() {
    const int T = cfg_.ppo.steps_per_batch;
    const int N = cfg_.num_envs;
    const int G = policy_.n_critics();

    RolloutBuffer buf;
    buf.allocate(T, N, obs_dim_, obs_dim_, act_dim_, G);
    buf.old_log_std = policy_.head.log_std;

    TrainIterStats st;
    st.iteration = iter_;
    st.term_means.assign(term_names_.size(), 0.0);
    double ep_len_sum = 0.0, frac_sum = 0.0;
    pol_windows_.clear();

    for (int t = 0; t < T; ++t) {
      Mat obs(obs_dim_, N);
      for (int n = 0; n < N; ++n)
        obs.col(n) = detail::specialist_obs(envs_[static_cast<size_t>(n)].proprio(last_action_[static_cast<size_t>(n)]),
                                            envs_[static_cast<size_t>(n)].privileged());

      const Mat mean = policy_.actor.forward(obs);
      Mat actions(act_dim_, N);
      for (int n = 0; n < N; ++n)
        for (int j = 0; j < act_dim_; ++j)
          actions(j, n) = mean(j, n) + std::exp(policy_.head.log_std[j]) * rng_.normal();
      if (!actions.allFinite()) throw NumericFault("trainer: policy produced non-finite actions");
      const Vec lp = policy_.head.log_prob(mean, actions);
      for (int g = 0; g < G; ++g)
        buf.values[static_cast<size_t>(g)].row(t) = policy_.critics[static_cast<size_t>(g)].forward(obs).row(0);

      Mat d_now;
      if (use_amp_) {
        Mat wins(act_dim_ * cfg_.amp.window, N);
        for (int n = 0; n < N; ++n) wins.col(n) = window_of(n);
        d_now = disc_.forward(wins);
        for (int n = 0; n < N; ++n) pol_windows_.push_back(wins.col(n));
      }

      for (int n = 0; n < N; ++n) {
        Env& env = envs_[static_cast<size_t>(n)];
        const int s = buf.flat(t, n);
        buf.obs.col(s) = obs.col(n);
        buf.critic_obs.col(s) = obs.col(n);
        buf.actions.col(s) = actions.col(n);
        buf.old_mean.col(s) = mean.col(n);
        buf.old_log_prob[s] = lp[n];

        if (use_amp_) env.set_amp_discriminator_value(d_now(0, n));
        const EnvStep step = env.step(actions.col(n));

        if (G == 1)
          buf.rewards[0](t, n) = step.reward.total;
        else
          for (int g = 0; g < G; ++g) buf.rewards[static_cast<size_t>(g)](t, n) = step.reward.per_group[static_cast<size_t>(g)];
        buf.dones(t, n) = step.done ? 1.0 : 0.0;
        buf.timeouts(t, n) = step.timeout ? 1.0 : 0.0;

        st.mean_reward += step.reward.total;
        for (int g = 0; g < kRewardGroups; ++g) st.group_reward[static_cast<size_t>(g)] += step.reward.per_group[static_cast<size_t>(g)];
        for (size_t k = 0; k < st.term_means.size(); ++k) st.term_means[k] += step.reward.per_term[k].second;

        if (step.timeout) {
          Vec final_obs(obs_dim_);
          final_obs << step.prop.flatten(), step.priv.flatten();
          for (int g = 0; g < G; ++g)
            buf.timeout_values[static_cast<size_t>(g)](t, n) = policy_.critics[static_cast<size_t>(g)].forward(final_obs)(0, 0);
        }

        last_action_[static_cast<size_t>(n)] = actions.col(n);
        push_q(n, env.state().q);

        if (step.done) {
          ++st.episodes_finished;
          ep_len_sum += env.steps_taken();
          const double frac = env.distance_fraction();
          frac_sum += frac;
          if (cfg_.env.terrain != TerrainType::flat && !cfg_.env.use_difficulty_param) {
            int& lvl = levels_[static_cast<size_t>(n)];
            lvl = curriculum_update(lvl, frac, !step.timeout, kCurriculumMaxLevel);
            env.set_difficulty(curriculum_difficulty(lvl, kCurriculumMaxLevel));
          }
          reset_env(n);
        }
      }
    }

    // bootstrap values of the states the rollout stopped in
    {
      Mat obs(obs_dim_, N);
      for (int n = 0; n < N; ++n)
        obs.col(n) = detail::specialist_obs(envs_[static_cast<size_t>(n)].proprio(last_action_[static_cast<size_t>(n)]),
                                            envs_[static_cast<size_t>(n)].privileged());
      for (int g = 0; g < G; ++g)
        buf.values[static_cast<size_t>(g)].row(T) = policy_.critics[static_cast<size_t>(g)].forward(obs).row(0);
    }

    buf.finalize(cfg_.ppo.gamma, cfg_.ppo.lambda);
    st.ppo = ppo_update(policy_.actor, policy_.head, policy_.critics, buf, cfg_.ppo, opt_, rng_);

    if (use_amp_ && !pol_windows_.empty()) {
      const int B = cfg_.amp.batch;
      const Mat ref = motions_.sample_windows(B, rng_);
      Mat pol(act_dim_ * cfg_.amp.window, B);
      for (int i = 0; i < B; ++i)
        pol.col(i) = pol_windows_[rng_.uniform_index(static_cast<int>(pol_windows_.size()))];
      st.amp = discriminator_update(disc_, ref, pol, cfg_.amp.alpha_d, disc_opt_);
      st.amp_used = true;
    }

    const double steps = static_cast<double>(T) * N;
    st.mean_reward /= steps;
    for (double& g : st.group_reward) g /= steps;
    for (double& v : st.term_means) v /= steps;
    if (st.episodes_finished > 0) {
      st.mean_ep_len = ep_len_sum / st.episodes_finished;
      st.traversal_fraction = frac_sum / st.episodes_finished;
    }
    double lsum = 0.0;
    for (int l : levels_) lsum += curriculum_difficulty(l, kCurriculumMaxLevel);
    st.mean_difficulty = lsum / N;

    ++iter_;
    return st;
  }

  /// Parameter registry in checkpoint order (policy only; the discriminator
  /// is a training aid and is not part of the artifact).
  std::vector<TensorRef> collect() {
    std::vector<TensorRef> refs;
    policy_.collect(refs);
    return refs;
  }

  CheckpointHeader header(const std::string& hash) const {
    CheckpointHeader h;
    h.kind = specialist_checkpoint_kind(kind_);
    h.config_hash = hash;
    h.joint_profile = cfg_.env.joint_profile;
    h.meta["act_dim"] = std::to_string(act_dim_);
    h.meta["obs_dim"] = std::to_string(obs_dim_);
    h.meta["prop_dim"] = std::to_string(prop_dim_);
    h.meta["scan_dim"] = std::to_string(cfg_.env.scan_h);
    h.meta["m_dim"] = std::to_string(cfg_.env.m_dim);
    h.meta["critics"] = std::to_string(policy_.n_critics());
    h.meta["iteration"] = std::to_string(iter_);
    return h;
  }

 private:
  Vec window_of(int n) const {
    const auto& hist = q_hist_[static_cast<size_t>(n)];
    Vec w(act_dim_ * cfg_.amp.window);
    for (int k = 0; k < cfg_.amp.window; ++k) w.segment(k * act_dim_, act_dim_) = hist[static_cast<size_t>(k)];
    return w;
  }

  void push_q(int n, const Vec& q) {
    auto& hist = q_hist_[static_cast<size_t>(n)];
    hist.push_back(q);
    while (static_cast<int>(hist.size()) > cfg_.amp.window) hist.pop_front();
  }

  void reset_env(int n) {
    Env& env = envs_[static_cast<size_t>(n)];
    ResetMode mode = ResetMode::default_;
    if (kind_ == Specialist::recovery)
      mode = rng_.bernoulli(0.5) ? ResetMode::fallen_supine : ResetMode::fallen_prone;
    else if (kind_ == Specialist::wbc &&
             (cfg_.env.terrain == TerrainType::box || cfg_.env.terrain == TerrainType::hanging_bar))
      mode = ResetMode::randomized_offset;
    env.reset(mode);

    if (kind_ == Specialist::wbc) {
      const auto& pool = cfg_.env.terrain == TerrainType::hanging_bar ? crawl_refs_ : climb_refs_;
      env.set_reference(&pool[rng_.uniform_index(static_cast<int>(pool.size()))]);
      env.set_case_coordination(true);
    }
    env.set_amp_discriminator_value(1.0);  // neutral until a real window exists

    auto& hist = q_hist_[static_cast<size_t>(n)];
    hist.clear();
    for (int k = 0; k < cfg_.amp.window; ++k) hist.push_back(env.state().q);
    last_action_[static_cast<size_t>(n)].setZero();
  }

  RunConfig cfg_;
  Specialist kind_;
  std::vector<Env> envs_;
  SpecialistPolicy policy_;
  Adam opt_;
  bool use_amp_ = false;
  Mlp disc_;
  Adam disc_opt_;
  ReferenceMotionStore motions_;
  std::vector<ReferenceTrajectory> climb_refs_, crawl_refs_;
  std::vector<std::deque<Vec>> q_hist_;
  std::vector<Vec> pol_windows_;
  std::vector<Vec> last_action_;
  std::vector<int> levels_;
  std::vector<std::string> term_names_;
  RandomStream rng_{0};
  int act_dim_ = 0, prop_dim_ = 0, obs_dim_ = 0;
  int iter_ = 0;
};

// ---------------------------------------------------------------------------
// Full training runs with CSV + checkpoints

struct TrainRunResult {
  std::string checkpoint_path;
  std::string csv_path;
  bool aborted_on_numeric_fault = false;
  std::string fault_message;
  int iterations_completed = 0;
  TrainIterStats last;
};

inline std::vector<std::string> train_csv_columns(const std::vector<std::string>& term_names) {
  std::vector<std::string> cols{"iteration",    "mean_reward", "group_task",  "group_style",
                                "group_reg",    "group_post",  "policy_loss", "value_loss",
                                "entropy",      "kl",          "lr",          "amp_loss",
                                "amp_d_ref",    "amp_d_pol",   "episodes",    "ep_len",
                                "traversal",    "difficulty"};
  for (const auto& t : term_names) cols.push_back("term_" + t);
  return cols;
}

inline std::vector<double> train_csv_row(const TrainIterStats& s) {
  std::vector<double> v{static_cast<double>(s.iteration),
                        s.mean_reward,
                        s.group_reward[0],
                        s.group_reward[1],
                        s.group_reward[2],
                        s.group_reward[3],
                        s.ppo.policy_loss,
                        s.ppo.value_loss,
                        s.ppo.entropy,
                        s.ppo.kl,
                        s.ppo.lr,
                        s.amp_used ? s.amp.loss : 0.0,
                        s.amp_used ? s.amp.mean_d_ref : 0.0,
                        s.amp_used ? s.amp.mean_d_pol : 0.0,
                        static_cast<double>(s.episodes_finished),
                        s.mean_ep_len,
                        s.traversal_fraction,
                        s.mean_difficulty};
  v.insert(v.end(), s.term_means.begin(), s.term_means.end());
  return v;
}

/// Runs a specialist to completion. On a numeric fault the last saved
/// checkpoint stays on disk and the result reports the abort.
inline TrainRunResult train_specialist_run(const RunConfig& cfg, Specialist kind, const std::string& out_dir,
                                           int iterations, SpecialistNetConfig net_cfg = {},
                                           std::ostream* progress = nullptr) {
  SpecialistTrainer trainer(cfg, kind, net_cfg);
  const std::string hash = training_hash(trainer.config());
  const std::string base = out_dir + "/" + specialist_name(kind);

  TrainRunResult res;
  res.checkpoint_path = base + ".ckpt";
  res.csv_path = base + "_train.csv";

  save_config_file(base + "_resolved.cfg", trainer.config());
  CsvLog log;
  log.open(res.csv_path, train_csv_columns(trainer.term_names()));

  const auto checkpoint = [&]() { save_checkpoint(res.checkpoint_path, trainer.header(hash), trainer.collect()); };
  checkpoint();  // always leave a loadable artifact, even if iteration 1 faults

  for (int it = 0; it < iterations; ++it) {
    TrainIterStats st;
    try {
      st = trainer.iterate();
    } catch (const NumericFault& e) {
      res.aborted_on_numeric_fault = true;
      res.fault_message = e.what();
      return res;
    }
    res.last = st;
    res.iterations_completed = it + 1;
    if ((it + 1) % cfg.log_every == 0 || it + 1 == iterations) log.row(train_csv_row(st));
    if ((it + 1) % cfg.checkpoint_every == 0 || it + 1 == iterations) checkpoint();
    if (progress != nullptr && ((it + 1) % cfg.log_every == 0 || it + 1 == iterations))
      (*progress) << specialist_name(kind) << " iter " << (it + 1) << "/" << iterations << " reward "
                  << st.mean_reward << " ep_len " << st.mean_ep_len << "\n";
  }
  return res;
}

// ---------------------------------------------------------------------------
// Artifact loading

namespace trainer_detail {

inline int meta_int(const CheckpointHeader& h, const std::string& key, const std::string& path) {
  const auto it = h.meta.find(key);
  require(it != h.meta.end(), "checkpoint '" + path + "': missing meta key '" + key + "'");
  return std::stoi(it->second);
}

}  // namespace trainer_detail

struct LoadedSpecialist {
  SpecialistPolicy policy;
  CheckpointHeader header;
};

/// Loads a specialist checkpoint, refusing kind, joint-profile, or dimension
/// mismatches with the active configuration.
inline LoadedSpecialist load_specialist(const std::string& path, Specialist expected, const RunConfig& cfg) {
  LoadedSpecialist out;
  out.header = peek_checkpoint(path);
  const std::string want = specialist_checkpoint_kind(expected);
  require(out.header.kind == want,
          "checkpoint '" + path + "': holds '" + out.header.kind + "' where '" + want + "' was expected");
  require(out.header.joint_profile == cfg.env.joint_profile,
          "checkpoint '" + path + "': joint profile '" + out.header.joint_profile + "' does not match config '" +
              cfg.env.joint_profile + "'");

  const JointLayout lay = make_layout(cfg.env.joint_profile);
  const int act = lay.dof();
  const int prop = 6 + 3 * act;
  const int obs = prop + 16 + cfg.env.scan_h + cfg.env.m_dim;
  require(trainer_detail::meta_int(out.header, "act_dim", path) == act,
          "checkpoint '" + path + "': action dimension mismatch against the configured robot");
  require(trainer_detail::meta_int(out.header, "obs_dim", path) == obs,
          "checkpoint '" + path + "': observation dimension mismatch against the configured robot");

  RandomStream rng(1);  // initial weights are overwritten by the load
  out.policy = SpecialistPolicy::make(expected, prop, cfg.env.scan_h, cfg.env.m_dim, act,
                                      specialist_net_for(cfg.env.joint_profile), rng);
  std::vector<TensorRef> refs;
  out.policy.collect(refs);
  load_checkpoint(path, refs);
  return out;
}

inline CheckpointHeader student_header(const RunConfig& cfg, const std::string& hash, int prop_dim, int act_dim,
                                       int iteration) {
  CheckpointHeader h;
  h.kind = "student";
  h.config_hash = hash;
  h.joint_profile = cfg.env.joint_profile;
  h.meta["act_dim"] = std::to_string(act_dim);
  h.meta["prop_dim"] = std::to_string(prop_dim);
  h.meta["history_steps"] = std::to_string(cfg.distill.history_steps);
  h.meta["cam_h"] = std::to_string(cfg.camera.height);
  h.meta["cam_w"] = std::to_string(cfg.camera.width);
  h.meta["iteration"] = std::to_string(iteration);
  return h;
}

struct LoadedStudent {
  StudentPolicy policy;
  CheckpointHeader header;
};

inline LoadedStudent load_student(const std::string& path, const RunConfig& cfg) {
  LoadedStudent out;
  out.header = peek_checkpoint(path);
  require(out.header.kind == "student",
          "checkpoint '" + path + "': holds '" + out.header.kind + "' where 'student' was expected");
  require(out.header.joint_profile == cfg.env.joint_profile,
          "checkpoint '" + path + "': joint profile '" + out.header.joint_profile + "' does not match config '" +
              cfg.env.joint_profile + "'");

  const JointLayout lay = make_layout(cfg.env.joint_profile);
  const int act = lay.dof();
  const int prop = 6 + 3 * act;
  require(trainer_detail::meta_int(out.header, "act_dim", path) == act,
          "checkpoint '" + path + "': action dimension mismatch against the configured robot");
  require(trainer_detail::meta_int(out.header, "cam_h", path) == cfg.camera.height &&
              trainer_detail::meta_int(out.header, "cam_w", path) == cfg.camera.width,
          "checkpoint '" + path + "': camera resolution mismatch against the configured camera");
  require(trainer_detail::meta_int(out.header, "history_steps", path) == cfg.distill.history_steps,
          "checkpoint '" + path + "': history length mismatch against the configured distillation");

  RandomStream rng(1);
  out.policy = StudentPolicy::make(
      prop, act, student_net_for(cfg.env.joint_profile, cfg.camera, cfg.distill.history_steps), rng);
  std::vector<TensorRef> refs;
  out.policy.collect(refs);
  load_checkpoint(path, refs);
  return out;
}

// ---------------------------------------------------------------------------
// Distillation runs

struct DistillRunResult {
  std::string checkpoint_path;
  std::string csv_path;
  bool aborted_on_numeric_fault = false;
  std::string fault_message;
  int iterations_completed = 0;
  double final_rho = 0.0;
  double final_loss = 0.0;
};

/// Scheduler trace rows for a replayed loss sequence; the CLI uses this to
/// audit the annealing rule against a fixture file.
struct SchedulerTraceRow {
  int iteration = 0;
  double loss = 0.0;
  double rho_before = 0.0, rho_after = 0.0;
  bool suspended = false;
};

inline std::vector<SchedulerTraceRow> replay_scheduler(SchedulerState s, const std::vector<double>& losses) {
  std::vector<SchedulerTraceRow> rows;
  for (size_t i = 0; i < losses.size(); ++i) {
    SchedulerTraceRow r;
    r.iteration = static_cast<int>(i);
    r.loss = losses[i];
    r.rho_before = s.rho;
    s = update_rho(s, losses[i]);
    r.rho_after = s.rho;
    r.suspended = s.suspended;
    rows.push_back(r);
  }
  return rows;
}

inline std::vector<std::string> distill_csv_columns() {
  return {"iteration", "loss",       "rho_before", "rho_after",      "suspended", "expert_fraction",
          "steps",     "falls",      "resets",     "sfi_injections", "sfi_terms", "case_rec",
          "case_loco", "case_coor1", "case_coor2"};
}

inline std::vector<double> distill_csv_row(int it, const DistillStats& s) {
  return {static_cast<double>(it),
          s.loss,
          s.rho_before,
          s.rho_after,
          s.suspended ? 1.0 : 0.0,
          s.expert_fraction,
          static_cast<double>(s.steps),
          static_cast<double>(s.falls),
          static_cast<double>(s.episode_resets),
          static_cast<double>(s.sfi_injections),
          static_cast<double>(s.sfi_terminations),
          static_cast<double>(s.case_counts[0]),
          static_cast<double>(s.case_counts[1]),
          static_cast<double>(s.case_counts[2]),
          static_cast<double>(s.case_counts[3])};
}

/// Terrain mix for the distillation envs, cycled by env index: upright
/// locomotion, fallen recovery (via fallen resets on any terrain), and both
/// coordination contexts all appear in the rollout stream.
inline const std::array<TerrainType, 4> kDistillTerrains{TerrainType::flat, TerrainType::slope, TerrainType::box,
                                                         TerrainType::hanging_bar};

/// Distills the three specialists into one student. Writes a student
/// checkpoint, a per-iteration CSV whose rho columns form the scheduler
/// trace, and the resolved config snapshot.
inline DistillRunResult distill_run(const RunConfig& cfg_in, SpecialistPolicy& loco, SpecialistPolicy& recovery,
                                    SpecialistPolicy& wbc, const std::string& out_dir,
                                    std::ostream* progress = nullptr) {
  RunConfig cfg = cfg_in;
  finalize_run_config(cfg);
  const std::string hash = training_hash(cfg);

  std::vector<Env> envs;
  envs.reserve(static_cast<size_t>(cfg.num_envs));
  for (int i = 0; i < cfg.num_envs; ++i) {
    EnvConfig ec = cfg.env;
    ec.env_index = i;
    ec.specialist = Specialist::loco;  // reward registry is unused during distillation
    ec.terrain = kDistillTerrains[static_cast<size_t>(i) % kDistillTerrains.size()];
    envs.emplace_back(ec);
  }
  const JointLayout& lay = envs.front().layout();
  const int act_dim = lay.dof();
  const int prop_dim = 6 + 3 * act_dim;

  RandomStream net_rng = RandomStream::for_stream(cfg.env.seed, 1000011);
  StudentPolicy student = StudentPolicy::make(
      prop_dim, act_dim, student_net_for(cfg.env.joint_profile, cfg.camera, cfg.distill.history_steps), net_rng);
  Adam opt(cfg.distill.lr);

  RandomStream ref_rng = RandomStream::for_stream(cfg.env.seed, 1000017);
  const auto climb = generate_reference_motions(Skill::climb, 1, ref_rng, lay);
  const auto crawl = generate_reference_motions(Skill::roll, 1, ref_rng, lay);

  DistillContext ctx;
  ctx.envs = &envs;
  ctx.teachers.loco = &loco;
  ctx.teachers.recovery = &recovery;
  ctx.teachers.wbc = &wbc;
  ctx.teachers.coor1_reference = &climb.front();
  ctx.teachers.coor2_reference = &crawl.front();
  ctx.student = &student;
  ctx.opt = &opt;
  ctx.cfg = cfg.distill;
  ctx.rng = RandomStream::for_stream(cfg.env.seed, 1000013);
  ctx.render_enabled = cfg.render_enabled;
  ctx.camera = cfg.camera;
  ctx.camera_dr = cfg.camera_dr;
  ctx.augment = cfg.augment;

  DistillRunResult res;
  res.checkpoint_path = out_dir + "/student.ckpt";
  res.csv_path = out_dir + "/distill_train.csv";

  save_config_file(out_dir + "/distill_resolved.cfg", cfg);
  CsvLog log;
  log.open(res.csv_path, distill_csv_columns());

  const auto checkpoint = [&](int it) {
    std::vector<TensorRef> refs;
    student.collect(refs);
    save_checkpoint(res.checkpoint_path, student_header(cfg, hash, prop_dim, act_dim, it), refs);
  };
  checkpoint(0);

  for (int it = 0; it < cfg.distill_iterations; ++it) {
    DistillStats st;
    try {
      st = distillation_iteration(ctx);
    } catch (const NumericFault& e) {
      res.aborted_on_numeric_fault = true;
      res.fault_message = e.what();
      return res;
    }
    res.iterations_completed = it + 1;
    res.final_rho = st.rho_after;
    res.final_loss = st.loss;
    log.row(distill_csv_row(it, st));  // every iteration: this is the scheduler trace
    if ((it + 1) % cfg.checkpoint_every == 0 || it + 1 == cfg.distill_iterations) checkpoint(it + 1);
    if (progress != nullptr && ((it + 1) % cfg.log_every == 0 || it + 1 == cfg.distill_iterations))
      (*progress) << "distill iter " << (it + 1) << "/" << cfg.distill_iterations << " loss " << st.loss << " rho "
                  << st.rho_after << " expert " << st.expert_fraction << "\n";
  }
  return res;
}

}  // namespace xloco
