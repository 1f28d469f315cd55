#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "abmt/adam.hpp"
#include "abmt/rollout.hpp"

namespace abmt {

struct PpoConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  int epochs = 4;
  int minibatches = 4;
  int rollout_len = 128;  // T
  int n_envs = 16;        // E
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  bool value_clip = true;
  bool normalize_advantage = true;
  long total_steps = 200000;

  double lr = 3e-4;
  bool grad_clip = true;
  double max_grad_norm = 0.5;

  int hidden_dim = 64;
  int embed_dim = 64;
  int heads = 4;
  double log_std_init = 0.0;

  int eval_interval = 10;   // updates between evaluation reports (0 = off)
  int eval_episodes = 4;
  int checkpoint_interval = 50;  // updates between checkpoints (0 = final only)

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in (0, 1]");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0))
      throw ConfigError("gae_lambda must be in [0, 1]");
    if (clip_eps <= 0.0) throw ConfigError("clip_eps must be > 0");
    if (epochs < 1 || minibatches < 1 || rollout_len < 1 || n_envs < 1)
      throw ConfigError("epochs, minibatches, rollout_len, n_envs must be >= 1");
    if ((static_cast<long>(rollout_len) * n_envs) % minibatches != 0)
      throw ConfigError("rollout_len * n_envs must be divisible by minibatches");
    if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  }

  PolicyArch arch() const {
    return PolicyArch{hidden_dim, embed_dim, heads, log_std_init};
  }
};

inline PpoConfig ppo_from_json(const nlohmann::json& j) {
  detail::require_keys(
      j,
      {"gamma", "gae_lambda", "clip_eps", "epochs", "minibatches",
       "rollout_len", "n_envs", "entropy_coef", "value_coef", "value_clip",
       "normalize_advantage", "total_steps", "lr", "grad_clip",
       "max_grad_norm", "hidden_dim", "embed_dim", "heads", "log_std_init",
       "eval_interval",
       "eval_episodes", "checkpoint_interval"},
      "ppo");
  PpoConfig c;
  if (j.contains("gamma")) c.gamma = j["gamma"];
  if (j.contains("gae_lambda")) c.gae_lambda = j["gae_lambda"];
  if (j.contains("clip_eps")) c.clip_eps = j["clip_eps"];
  if (j.contains("epochs")) c.epochs = j["epochs"];
  if (j.contains("minibatches")) c.minibatches = j["minibatches"];
  if (j.contains("rollout_len")) c.rollout_len = j["rollout_len"];
  if (j.contains("n_envs")) c.n_envs = j["n_envs"];
  if (j.contains("entropy_coef")) c.entropy_coef = j["entropy_coef"];
  if (j.contains("value_coef")) c.value_coef = j["value_coef"];
  if (j.contains("value_clip")) c.value_clip = j["value_clip"];
  if (j.contains("normalize_advantage"))
    c.normalize_advantage = j["normalize_advantage"];
  if (j.contains("total_steps")) c.total_steps = j["total_steps"];
  if (j.contains("lr")) c.lr = j["lr"];
  if (j.contains("grad_clip")) c.grad_clip = j["grad_clip"];
  if (j.contains("max_grad_norm")) c.max_grad_norm = j["max_grad_norm"];
  if (j.contains("hidden_dim")) c.hidden_dim = j["hidden_dim"];
  if (j.contains("embed_dim")) c.embed_dim = j["embed_dim"];
  if (j.contains("heads")) c.heads = j["heads"];
  if (j.contains("log_std_init")) c.log_std_init = j["log_std_init"];
  if (j.contains("eval_interval")) c.eval_interval = j["eval_interval"];
  if (j.contains("eval_episodes")) c.eval_episodes = j["eval_episodes"];
  if (j.contains("checkpoint_interval"))
    c.checkpoint_interval = j["checkpoint_interval"];
  c.validate();
  return c;
}

struct UpdateStats {
  // Means over all epoch/minibatch iterations of the update.
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_frac = 0.0;
  double approx_kl = 0.0;
  // First minibatch of the first epoch; parameters are still exactly those
  // used during collection there, so the ratio is one by construction.
  double first_mb_policy_loss = 0.0;
  double first_mb_clip_frac = 0.0;
  double first_mb_adv_mean = 0.0;
};

// Clipped-surrogate PPO update over a completed rollout buffer.
inline UpdateStats ppo_update(const RolloutBuffer& buf, PolicyBundle& policy,
                              Adam& adam, const PpoConfig& cfg, Rng& rng) {
  if (!buf.gae_done)
    throw std::logic_error("ppo_update: compute_gae must run first");
  const long M = buf.samples();
  const long mb_size = M / cfg.minibatches;

  // Per-update advantage normalization.
  std::vector<double> adv(buf.advantages);
  if (cfg.normalize_advantage) {
    double mean = 0.0;
    for (double a : adv) mean += a;
    mean /= static_cast<double>(M);
    double var = 0.0;
    for (double a : adv) var += (a - mean) * (a - mean);
    const double sd = std::sqrt(var / static_cast<double>(M)) + 1e-8;
    for (double& a : adv) a = (a - mean) / sd;
  }

  std::vector<long> order(static_cast<std::size_t>(M));
  for (long i = 0; i < M; ++i) order[static_cast<std::size_t>(i)] = i;

  UpdateStats stats;
  int iterations = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates shuffle with the deterministic generator.
    for (long i = M - 1; i > 0; --i) {
      const long j = static_cast<long>(rng.uniform_int(static_cast<std::uint64_t>(i + 1)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    for (int mb = 0; mb < cfg.minibatches; ++mb) {
      const long* idx = order.data() + mb * mb_size;
      const int m = static_cast<int>(mb_size);

      // Gather minibatch rows.
      Tensor obs = buf.has_tokens
                       ? Tensor({m, buf.obs_token_count, buf.token_width})
                       : Tensor({m, buf.obs_dim});
      Tensor gsb = buf.has_tokens
                       ? Tensor({m, buf.gs_token_count, buf.token_width})
                       : Tensor({m, buf.gs_dim});
      Tensor act({m, buf.action_dim});
      Tensor logp_old({m});
      Tensor madv({m});
      Tensor ret({m});
      Tensor v_old({m});
      const long obs_row = buf.has_tokens
                               ? static_cast<long>(buf.obs_token_count) * buf.token_width
                               : buf.obs_dim;
      const long gs_row = buf.has_tokens
                              ? static_cast<long>(buf.gs_token_count) * buf.token_width
                              : buf.gs_dim;
      for (int r = 0; r < m; ++r) {
        const long s = idx[r];
        const long te = s / buf.N;  // (t*E + e) index for global-state rows
        const double* src_obs = buf.has_tokens
                                    ? buf.obs_tokens.data() + s * obs_row
                                    : buf.obs_flat.data() + s * obs_row;
        std::copy(src_obs, src_obs + obs_row, obs.v.begin() + r * obs_row);
        const double* src_gs = buf.has_tokens
                                   ? buf.gs_tokens.data() + te * gs_row
                                   : buf.gs.data() + te * gs_row;
        std::copy(src_gs, src_gs + gs_row, gsb.v.begin() + r * gs_row);
        for (int a = 0; a < buf.action_dim; ++a)
          act.v[static_cast<long>(r) * buf.action_dim + a] =
              buf.actions[s * buf.action_dim + a];
        logp_old.v[r] = buf.log_probs[s];
        madv.v[r] = adv[static_cast<std::size_t>(s)];
        ret.v[r] = buf.returns[s];
        v_old.v[r] = buf.values[s];
      }

      // Build the update graph.
      Tape tape;
      BoundParams bound = bind_params(tape, policy.params());
      Var mean = policy.actor_mean(tape, bound, tape.constant(obs));
      Var logp = gaussian_log_prob(tape, mean, policy.log_std_var(bound),
                                   tape.constant(act));
      Var ratio = tape.exp_(tape.sub(logp, tape.constant(logp_old)));
      Var adv_c = tape.constant(madv);
      Var surr1 = tape.mul(ratio, adv_c);
      Var surr2 = tape.mul(tape.clamp_(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps), adv_c);
      Var policy_loss = tape.neg(tape.mean_all(tape.minimum(surr1, surr2)));

      Var v = tape.reshape(policy.critic_value(tape, bound, tape.constant(gsb)), {m});
      Var v_err = tape.square(tape.sub(v, tape.constant(ret)));
      Var value_loss;
      if (cfg.value_clip) {
        Var v_old_c = tape.constant(v_old);
        Var v_clipped = tape.add(
            v_old_c, tape.clamp_(tape.sub(v, v_old_c), -cfg.clip_eps, cfg.clip_eps));
        Var v_err_clipped = tape.square(tape.sub(v_clipped, tape.constant(ret)));
        value_loss = tape.scale(tape.mean_all(tape.maximum(v_err, v_err_clipped)), 0.5);
      } else {
        value_loss = tape.scale(tape.mean_all(v_err), 0.5);
      }
      Var entropy = gaussian_entropy(tape, policy.log_std_var(bound));
      Var total = tape.add(policy_loss,
                           tape.add(tape.scale(value_loss, cfg.value_coef),
                                    tape.scale(entropy, -cfg.entropy_coef)));
      tape.backward(total);

      std::vector<Tensor> grads;
      grads.reserve(static_cast<std::size_t>(policy.params().size()));
      for (int i = 0; i < policy.params().size(); ++i)
        grads.push_back(tape.grad(bound[i]));
      adam.step(policy.params(), grads);

      // Diagnostics.
      const Tensor& ratio_v = tape.value(ratio);
      double clip_count = 0.0, kl = 0.0;
      for (double rv : ratio_v.v) {
        if (std::abs(rv - 1.0) > cfg.clip_eps) clip_count += 1.0;
        kl += (rv - 1.0) - std::log(rv);
      }
      const double clip_frac = clip_count / static_cast<double>(m);
      kl /= static_cast<double>(m);
      const double pl = tape.value(policy_loss).v[0];
      const double vl = tape.value(value_loss).v[0];
      const double en = tape.value(entropy).v[0];
      stats.policy_loss += pl;
      stats.value_loss += vl;
      stats.entropy += en;
      stats.clip_frac += clip_frac;
      stats.approx_kl += kl;
      if (iterations == 0) {
        stats.first_mb_policy_loss = pl;
        stats.first_mb_clip_frac = clip_frac;
        double am = 0.0;
        for (double a : madv.v) am += a;
        stats.first_mb_adv_mean = am / static_cast<double>(m);
      }
      ++iterations;
    }
  }
  const double inv = 1.0 / iterations;
  stats.policy_loss *= inv;
  stats.value_loss *= inv;
  stats.entropy *= inv;
  stats.clip_frac *= inv;
  stats.approx_kl *= inv;
  return stats;
}

}  // namespace abmt
