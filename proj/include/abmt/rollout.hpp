#pragma once

#include <vector>

#include "abmt/env.hpp"
#include "abmt/policy.hpp"

namespace abmt {

// Trajectory storage indexed [t, env, agent]. The global state (and its
// token view) is shared per (t, env). All arrays are fully written by
// collect_rollout before compute_gae may run.
struct RolloutBuffer {
  int T = 0, E = 0, N = 0;
  int obs_dim = 0, obs_token_count = 0, token_width = 0;
  int gs_dim = 0, gs_token_count = 0, action_dim = 0;
  bool has_tokens = false;

  std::vector<double> obs_flat;    // [T,E,N,obs_dim]
  std::vector<double> obs_tokens;  // [T,E,N,obs_token_count*token_width]
  std::vector<double> gs;          // [T,E,gs_dim]
  std::vector<double> gs_tokens;   // [T,E,gs_token_count*token_width]
  std::vector<double> actions;     // [T,E,N,action_dim]
  std::vector<double> log_probs;   // [T,E,N]
  std::vector<double> rewards;     // [T,E,N]
  std::vector<double> values;      // [T,E,N]
  std::vector<double> dones;       // [T,E,N]
  std::vector<double> advantages;  // [T,E,N]
  std::vector<double> returns;     // [T,E,N]
  std::vector<double> bootstrap;   // [E]
  bool gae_done = false;

  long tea(int t, int e, int a) const {
    return (static_cast<long>(t) * E + e) * N + a;
  }
  long samples() const { return static_cast<long>(T) * E * N; }

  static RolloutBuffer make(const Env& env, const PolicyBundle& policy, int T,
                            int E) {
    RolloutBuffer b;
    b.T = T;
    b.E = E;
    b.N = env.config().n_agents;
    b.obs_dim = env.obs_flat_dim();
    b.obs_token_count = env.obs_token_count();
    b.token_width = kTokenWidth;
    b.gs_dim = env.global_state_dim();
    b.gs_token_count = env.global_token_count();
    b.action_dim = env.action_dim();
    b.has_tokens = policy.variant() == EncoderVariant::Attention;
    const long ten = b.samples();
    b.obs_flat.assign(ten * b.obs_dim, 0.0);
    if (b.has_tokens)
      b.obs_tokens.assign(ten * b.obs_token_count * b.token_width, 0.0);
    b.gs.assign(static_cast<long>(T) * E * b.gs_dim, 0.0);
    if (b.has_tokens)
      b.gs_tokens.assign(static_cast<long>(T) * E * b.gs_token_count * b.token_width, 0.0);
    b.actions.assign(ten * b.action_dim, 0.0);
    b.log_probs.assign(ten, 0.0);
    b.rewards.assign(ten, 0.0);
    b.values.assign(ten, 0.0);
    b.dones.assign(ten, 0.0);
    b.advantages.assign(ten, 0.0);
    b.returns.assign(ten, 0.0);
    b.bootstrap.assign(E, 0.0);
    return b;
  }
};

// Rolls the shared policy forward for T steps across all environments.
// Observations go through the shared actor; one critic value per (t, env)
// from the shared global state, recorded per agent. Environments auto-reset
// on termination inside BatchEnv.
inline RolloutBuffer collect_rollout(BatchEnv& envs, const PolicyBundle& policy,
                                     int T, Rng& sample_rng) {
  const Env& env = envs.env();
  const int E = envs.size();
  const int N = env.config().n_agents;
  RolloutBuffer buf = RolloutBuffer::make(env, policy, T, E);

  std::vector<Observation> cur_obs(static_cast<std::size_t>(E) * N);
  auto refresh_obs = [&](int e) {
    for (int a = 0; a < N; ++a)
      cur_obs[static_cast<std::size_t>(e) * N + a] = env.observe(envs.state(e), a);
  };
  for (int e = 0; e < E; ++e) refresh_obs(e);

  for (int t = 0; t < T; ++t) {
    // Record observations and global states.
    std::vector<const Observation*> obs_ptrs(static_cast<std::size_t>(E) * N);
    std::vector<const WorldState*> state_ptrs(static_cast<std::size_t>(E));
    for (int e = 0; e < E; ++e) {
      state_ptrs[static_cast<std::size_t>(e)] = &envs.state(e);
      for (int a = 0; a < N; ++a) {
        const Observation& o = cur_obs[static_cast<std::size_t>(e) * N + a];
        obs_ptrs[static_cast<std::size_t>(e) * N + a] = &o;
        std::copy(o.flat.begin(), o.flat.end(),
                  buf.obs_flat.begin() + buf.tea(t, e, a) * buf.obs_dim);
        if (buf.has_tokens)
          std::copy(o.tokens.begin(), o.tokens.end(),
                    buf.obs_tokens.begin() +
                        buf.tea(t, e, a) * buf.obs_token_count * buf.token_width);
      }
      const auto g = env.global_state(envs.state(e));
      std::copy(g.begin(), g.end(),
                buf.gs.begin() + (static_cast<long>(t) * E + e) * buf.gs_dim);
      if (buf.has_tokens) {
        const auto gt = env.global_tokens(envs.state(e));
        std::copy(gt.begin(), gt.end(),
                  buf.gs_tokens.begin() + (static_cast<long>(t) * E + e) *
                                              buf.gs_token_count * buf.token_width);
      }
    }

    // Shared-actor forward over all (env, agent) rows; centralized critic
    // over all env rows.
    const Tensor obs_batch = policy.obs_tensor(obs_ptrs);
    const auto act = policy.act(obs_batch, sample_rng, /*deterministic=*/false);
    const Tensor gs_batch = policy.gs_tensor(env, state_ptrs);
    const std::vector<double> vals = policy.values(gs_batch);

    std::vector<std::vector<Vec2>> actions(static_cast<std::size_t>(E));
    for (int e = 0; e < E; ++e) {
      actions[static_cast<std::size_t>(e)].resize(static_cast<std::size_t>(N));
      for (int a = 0; a < N; ++a) {
        const long row = static_cast<long>(e) * N + a;
        actions[static_cast<std::size_t>(e)][static_cast<std::size_t>(a)] =
            Vec2{act.actions.v[row * 2], act.actions.v[row * 2 + 1]};
        const long i = buf.tea(t, e, a);
        buf.actions[i * 2] = act.actions.v[row * 2];
        buf.actions[i * 2 + 1] = act.actions.v[row * 2 + 1];
        buf.log_probs[i] = act.log_probs.v[row];
        buf.values[i] = vals[static_cast<std::size_t>(e)];
      }
    }

    const auto outcomes = envs.step(actions);
    for (int e = 0; e < E; ++e) {
      const auto& out = outcomes[static_cast<std::size_t>(e)];
      for (int a = 0; a < N; ++a) {
        const long i = buf.tea(t, e, a);
        buf.rewards[i] = out.rewards[static_cast<std::size_t>(a)];
        buf.dones[i] = out.terminated ? 1.0 : 0.0;
      }
      // envs.step already reset terminated instances; re-observe either way.
      refresh_obs(e);
    }
  }

  // Bootstrap values for the state after step T.
  std::vector<const WorldState*> state_ptrs(static_cast<std::size_t>(E));
  for (int e = 0; e < E; ++e) state_ptrs[static_cast<std::size_t>(e)] = &envs.state(e);
  buf.bootstrap = policy.values(policy.gs_tensor(env, state_ptrs));
  return buf;
}

// GAE(gamma, lambda):
//   delta_t = r_t + gamma*(1-done_t)*V_{t+1} - V_t
//   A_t     = delta_t + gamma*lambda*(1-done_t)*A_{t+1}
//   ret_t   = A_t + V_t
// with V_T taken from the bootstrap values.
inline void compute_gae(RolloutBuffer& buf, double gamma, double lambda) {
  for (int e = 0; e < buf.E; ++e) {
    for (int a = 0; a < buf.N; ++a) {
      double next_adv = 0.0;
      double next_value = buf.bootstrap[static_cast<std::size_t>(e)];
      for (int t = buf.T - 1; t >= 0; --t) {
        const long i = buf.tea(t, e, a);
        const double not_done = 1.0 - buf.dones[i];
        const double delta = buf.rewards[i] +
                             gamma * not_done * next_value - buf.values[i];
        next_adv = delta + gamma * lambda * not_done * next_adv;
        buf.advantages[i] = next_adv;
        buf.returns[i] = next_adv + buf.values[i];
        next_value = buf.values[i];
      }
    }
  }
  buf.gae_done = true;
}

}  // namespace abmt
