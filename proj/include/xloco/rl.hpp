#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "xloco/common.hpp"
#include "xloco/net.hpp"
#include "xloco/rng.hpp"

namespace xloco {

struct PpoConfig {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;
  double entropy_coef = 0.005;
  double desired_kl = 0.01;
  double lr = 1e-3;
  bool adaptive_lr_enabled = true;
  double lr_min = 1e-5, lr_max = 1e-2;
  int epochs = 5;
  int minibatches = 4;
  int steps_per_batch = 24;
  int num_envs = 64;
  double value_coef = 1.0;
  double max_grad_norm = 1.0;

  void validate() const {
    require(gamma >= 0.0 && gamma < 1.0, "ppo: gamma must lie in [0,1)");
    require(lambda >= 0.0 && lambda <= 1.0, "ppo: lambda must lie in [0,1]");
    require(clip > 0.0, "ppo: clip must be positive");
    require(epochs >= 1 && minibatches >= 1 && steps_per_batch >= 1 && num_envs >= 1,
            "ppo: loop sizes must be positive");
  }
};

// ---------------------------------------------------------------------------
// Generalized advantage estimation

struct GaeResult {
  Mat advantages;  // T x N
  Mat returns;     // T x N
};

/// rewards/dones/timeouts are (T, N); values is (T+1, N) with the bootstrap
/// value of the live final state in row T. timeouts must be a subset of
/// dones; a timeout bootstraps through timeout_values (the critic's estimate
/// of the successor state observed before the reset), a true termination
/// does not bootstrap. The recursion resets across every episode boundary.
inline GaeResult compute_gae(const Mat& rewards, const Mat& values, const Mat& dones, const Mat& timeouts,
                             const Mat& timeout_values, double gamma, double lambda) {
  const int T = static_cast<int>(rewards.rows());
  const int N = static_cast<int>(rewards.cols());
  require(values.rows() == T + 1 && values.cols() == N, "compute_gae: values must be (T+1, N)");
  require(dones.rows() == T && dones.cols() == N, "compute_gae: dones shape mismatch");
  require(timeouts.rows() == T && timeouts.cols() == N, "compute_gae: timeouts shape mismatch");
  for (int t = 0; t < T; ++t)
    for (int n = 0; n < N; ++n)
      require(timeouts(t, n) == 0.0 || dones(t, n) != 0.0, "compute_gae: timeout outside a done step");

  GaeResult out;
  out.advantages = Mat::Zero(T, N);
  out.returns = Mat::Zero(T, N);
  for (int n = 0; n < N; ++n) {
    double acc = 0.0;
    for (int t = T - 1; t >= 0; --t) {
      const bool done = dones(t, n) != 0.0;
      const bool timeout = timeouts(t, n) != 0.0;
      double next_value;
      if (!done)
        next_value = values(t + 1, n);
      else if (timeout)
        next_value = timeout_values(t, n);
      else
        next_value = 0.0;
      const double delta = rewards(t, n) + gamma * next_value - values(t, n);
      acc = delta + gamma * lambda * (done ? 0.0 : acc);
      out.advantages(t, n) = acc;
      out.returns(t, n) = acc + values(t, n);
    }
  }
  return out;
}

inline GaeResult compute_gae(const Mat& rewards, const Mat& values, const Mat& dones, double gamma, double lambda) {
  const Mat zeros = Mat::Zero(rewards.rows(), rewards.cols());
  return compute_gae(rewards, values, dones, zeros, zeros, gamma, lambda);
}

// ---------------------------------------------------------------------------
// PPO pieces

/// Clipped surrogate objective for one sample (to be maximized).
inline double ppo_surrogate(double ratio, double advantage, double clip) {
  require(ratio > 0.0, "ppo_surrogate: ratio must be positive");
  const double clipped = clampd(ratio, 1.0 - clip, 1.0 + clip) * advantage;
  return std::min(ratio * advantage, clipped);
}

/// Desired-KL learning-rate rule with clamping.
inline double adaptive_lr(double lr, double measured_kl, double desired_kl, double lr_min = 1e-5,
                          double lr_max = 1e-2) {
  require(lr > 0.0, "adaptive_lr: lr must be positive");
  if (measured_kl > 2.0 * desired_kl)
    lr /= 1.5;
  else if (measured_kl < 0.5 * desired_kl && measured_kl > 0.0)
    lr *= 1.5;
  return clampd(lr, lr_min, lr_max);
}

/// On-policy storage, flattened over (T, N): column index t*N + n.
struct RolloutBuffer {
  int T = 0, N = 0, G = 1;
  Mat obs;         // actor observations, D_a x (T*N)
  Mat critic_obs;  // critic observations, D_c x (T*N)
  Mat actions;     // A x (T*N)
  Vec old_log_prob;
  Mat old_mean;  // A x (T*N), behavior-policy means
  Vec old_log_std;
  std::vector<Mat> rewards;           // per group, (T, N)
  std::vector<Mat> values;            // per group, (T+1, N), bootstrap row at T
  std::vector<Mat> timeout_values;    // per group, (T, N)
  Mat dones, timeouts;                // (T, N), 0/1
  std::vector<GaeResult> gae;        // filled by finalize()

  int flat(int t, int n) const { return t * N + n; }
  int batch() const { return T * N; }

  void allocate(int T_, int N_, int obs_dim, int critic_obs_dim, int act_dim, int groups) {
    T = T_;
    N = N_;
    G = groups;
    obs = Mat::Zero(obs_dim, T * N);
    critic_obs = Mat::Zero(critic_obs_dim, T * N);
    actions = Mat::Zero(act_dim, T * N);
    old_log_prob = Vec::Zero(T * N);
    old_mean = Mat::Zero(act_dim, T * N);
    old_log_std = Vec::Zero(act_dim);
    rewards.assign(static_cast<size_t>(G), Mat::Zero(T, N));
    values.assign(static_cast<size_t>(G), Mat::Zero(T + 1, N));
    timeout_values.assign(static_cast<size_t>(G), Mat::Zero(T, N));
    dones = Mat::Zero(T, N);
    timeouts = Mat::Zero(T, N);
    gae.clear();
  }

  void finalize(double gamma, double lambda) {
    gae.clear();
    for (int g = 0; g < G; ++g)
      gae.push_back(compute_gae(rewards[static_cast<size_t>(g)], values[static_cast<size_t>(g)], dones, timeouts,
                                timeout_values[static_cast<size_t>(g)], gamma, lambda));
  }

  /// Equal-weight multi-critic advantage: sum over groups.
  Vec total_advantage_flat() const {
    require(!gae.empty(), "rollout buffer: finalize() not called");
    Vec a = Vec::Zero(T * N);
    for (const auto& r : gae)
      for (int t = 0; t < T; ++t)
        for (int n = 0; n < N; ++n) a[flat(t, n)] += r.advantages(t, n);
    return a;
  }

  Vec group_returns_flat(int g) const {
    Vec r(T * N);
    for (int t = 0; t < T; ++t)
      for (int n = 0; n < N; ++n) r[flat(t, n)] = gae[static_cast<size_t>(g)].returns(t, n);
    return r;
  }
};

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  Vec value_loss_per_group;
  double entropy = 0.0;
  double kl = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

/// One gathered minibatch; columns are samples. adv is already normalized.
struct Minibatch {
  Mat obs, critic_obs, actions, old_mean;
  Vec old_log_prob, old_log_std, adv;
  std::vector<Vec> returns;  // per group
  int size() const { return static_cast<int>(obs.cols()); }
};

struct MinibatchStats {
  double policy_loss = 0.0, value_loss = 0.0, entropy = 0.0, measured_kl = 0.0, total_loss = 0.0;
  Vec value_loss_per_group;
};

/// Loss evaluation + exact gradient accumulation for one minibatch.
/// total loss = -surrogate - entropy_coef * H + value_coef * sum_g mse_g.
/// Gradients accumulate into the nets' buffers; caller zeroes and steps.
template <class Actor>
MinibatchStats ppo_minibatch_backward(Actor& actor, GaussianHead& head, std::vector<Mlp>& critics,
                                      const Minibatch& mb, const PpoConfig& cfg) {
  const int sz = mb.size();
  const int G = static_cast<int>(critics.size());
  MinibatchStats st;
  st.value_loss_per_group = Vec::Zero(G);

  const Vec sigma2 = (2.0 * head.log_std).array().exp();
  const Mat mean = actor.forward(mb.obs);
  const Vec newlp = head.log_prob(mean, mb.actions);
  st.measured_kl = GaussianHead::mean_kl(mb.old_mean, mb.old_log_std, mean, head.log_std);

  double surr = 0.0;
  Vec coef(sz);  // d(policy loss)/d(log prob) per sample
  for (int i = 0; i < sz; ++i) {
    const double ratio = std::exp(newlp[i] - mb.old_log_prob[i]);
    const double b1 = ratio * mb.adv[i];
    const double b2 = clampd(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * mb.adv[i];
    surr += std::min(b1, b2);
    coef[i] = (b1 <= b2) ? -(ratio * mb.adv[i]) / sz : 0.0;
  }
  surr /= sz;
  st.entropy = head.entropy();
  st.policy_loss = -surr - cfg.entropy_coef * st.entropy;

  std::vector<Mat> vpred(static_cast<size_t>(G));
  for (int g = 0; g < G; ++g) {
    vpred[static_cast<size_t>(g)] = critics[static_cast<size_t>(g)].forward(mb.critic_obs);
    double mse = 0.0;
    for (int i = 0; i < sz; ++i) mse += sqr(vpred[static_cast<size_t>(g)](0, i) - mb.returns[static_cast<size_t>(g)][i]);
    mse /= sz;
    st.value_loss += mse;
    st.value_loss_per_group[g] = mse;
  }
  st.total_loss = st.policy_loss + cfg.value_coef * st.value_loss;
  if (!std::isfinite(st.total_loss))
    throw NumericFault("ppo update: non-finite loss (policy=" + std::to_string(st.policy_loss) +
                       ", value=" + std::to_string(st.value_loss) + ")");

  Mat dmean(mean.rows(), sz);
  for (int i = 0; i < sz; ++i) {
    dmean.col(i) = coef[i] * (mb.actions.col(i) - mean.col(i)).cwiseQuotient(sigma2);
    head.g_log_std +=
        coef[i] * ((mb.actions.col(i) - mean.col(i)).array().square() / sigma2.array() - 1.0).matrix();
  }
  actor.backward(dmean);
  head.g_log_std.array() += -cfg.entropy_coef;  // d(-c_e * H)/d log_std
  for (int g = 0; g < G; ++g) {
    Mat dv(1, sz);
    for (int i = 0; i < sz; ++i)
      dv(0, i) =
          cfg.value_coef * 2.0 * (vpred[static_cast<size_t>(g)](0, i) - mb.returns[static_cast<size_t>(g)][i]) / sz;
    critics[static_cast<size_t>(g)].backward(dv);
  }
  return st;
}

/// Fisher-Yates permutation of 0..n-1 driven by the given stream.
inline std::vector<int> shuffled_indices(int n, RandomStream& rng) {
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = n - 1; i > 0; --i) std::swap(idx[static_cast<size_t>(i)], idx[rng.uniform_index(i + 1)]);
  return idx;
}

/// One PPO iteration over a full buffer. `Actor` must provide forward /
/// backward / zero_grad / collect in the Mlp sense. One Adam instance owns
/// actor, head, and critic parameters; the registry is rebuilt in a fixed
/// order so optimizer state stays aligned across iterations.
template <class Actor>
PpoStats ppo_update(Actor& actor, GaussianHead& head, std::vector<Mlp>& critics, RolloutBuffer& buf, PpoConfig& cfg,
                    Adam& opt, RandomStream& rng) {
  cfg.validate();
  require(static_cast<int>(critics.size()) == buf.G, "ppo_update: one critic per reward group required");
  require(!buf.gae.empty(), "ppo_update: buffer not finalized");

  std::vector<TensorRef> refs;
  actor.collect(refs, "actor");
  head.collect(refs, "head");
  for (size_t g = 0; g < critics.size(); ++g) critics[g].collect(refs, "critic" + std::to_string(g));

  const int B = buf.batch();
  const Vec adv_total = buf.total_advantage_flat();
  std::vector<Vec> returns(static_cast<size_t>(buf.G));
  for (int g = 0; g < buf.G; ++g) returns[static_cast<size_t>(g)] = buf.group_returns_flat(g);

  PpoStats stats;
  stats.value_loss_per_group = Vec::Zero(buf.G);
  int updates = 0;
  const int chunk = B / cfg.minibatches;
  require(chunk >= 1, "ppo_update: more minibatches than samples");

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<int> order = shuffled_indices(B, rng);
    for (int mbi = 0; mbi < cfg.minibatches; ++mbi) {
      const int lo = mbi * chunk;
      const int sz = (mbi == cfg.minibatches - 1) ? B - lo : chunk;

      Minibatch mb;
      mb.obs.resize(buf.obs.rows(), sz);
      mb.critic_obs.resize(buf.critic_obs.rows(), sz);
      mb.actions.resize(buf.actions.rows(), sz);
      mb.old_mean.resize(buf.actions.rows(), sz);
      mb.old_log_prob.resize(sz);
      mb.adv.resize(sz);
      mb.old_log_std = buf.old_log_std;
      mb.returns.assign(static_cast<size_t>(buf.G), Vec(sz));
      for (int i = 0; i < sz; ++i) {
        const int s = order[static_cast<size_t>(lo + i)];
        mb.obs.col(i) = buf.obs.col(s);
        mb.critic_obs.col(i) = buf.critic_obs.col(s);
        mb.actions.col(i) = buf.actions.col(s);
        mb.old_log_prob[i] = buf.old_log_prob[s];
        mb.old_mean.col(i) = buf.old_mean.col(s);
        mb.adv[i] = adv_total[s];
        for (int g = 0; g < buf.G; ++g) mb.returns[static_cast<size_t>(g)][i] = returns[static_cast<size_t>(g)][s];
      }
      // normalize advantages within the minibatch
      const double am = mb.adv.mean();
      const double astd = std::sqrt((mb.adv.array() - am).square().sum() / sz);
      mb.adv = (mb.adv.array() - am) / (astd + 1e-8);

      zero_grads(refs);
      const MinibatchStats st = ppo_minibatch_backward(actor, head, critics, mb, cfg);
      if (cfg.adaptive_lr_enabled)
        cfg.lr = adaptive_lr(cfg.lr, st.measured_kl, cfg.desired_kl, cfg.lr_min, cfg.lr_max);
      opt.lr = cfg.lr;
      stats.grad_norm = clip_grad_norm(refs, cfg.max_grad_norm);
      opt.step(refs);

      stats.policy_loss += st.policy_loss;
      stats.value_loss += st.value_loss;
      stats.value_loss_per_group += st.value_loss_per_group;
      stats.entropy += st.entropy;
      stats.kl += st.measured_kl;
      ++updates;
    }
  }
  const double inv = 1.0 / updates;
  stats.policy_loss *= inv;
  stats.value_loss *= inv;
  stats.value_loss_per_group *= inv;
  stats.entropy *= inv;
  stats.kl *= inv;
  stats.lr = cfg.lr;
  return stats;
}

}  // namespace xloco
