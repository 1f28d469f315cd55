#pragma once

#include <cmath>
#include <vector>

#include "abmt/env.hpp"
#include "abmt/policy.hpp"

namespace abmt {

struct EvalReport {
  struct Row {
    double episode_return = 0.0;  // mean over agents of summed rewards
    long deliveries = 0;
    long collisions = 0;
  };
  int episodes = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double mean_deliveries = 0.0;
  double mean_collisions = 0.0;
  std::vector<Row> rows;
};

// Runs full fixed-horizon episodes. ActFn maps (env, state, rng) to one
// action per agent; rng is a per-episode deterministic stream.
template <typename ActFn>
EvalReport evaluate(const Env& env, ActFn&& act_fn, int episodes,
                    std::uint64_t seed) {
  EvalReport rep;
  rep.episodes = episodes;
  Rng base(seed);
  for (int ep = 0; ep < episodes; ++ep) {
    WorldState s = env.reset_with_rng(base.split(2 * static_cast<std::uint64_t>(ep)));
    Rng act_rng = base.split(2 * static_cast<std::uint64_t>(ep) + 1);
    EvalReport::Row row;
    for (int t = 0; t < env.config().max_steps; ++t) {
      const auto actions = act_fn(env, s, act_rng);
      const StepOutcome out = env.step(s, actions);
      double mean_r = 0.0;
      for (double r : out.rewards) mean_r += r;
      row.episode_return += mean_r / static_cast<double>(out.rewards.size());
      row.collisions += out.info.collision_pairs_this_step;
    }
    row.deliveries = s.delivered_total;
    rep.rows.push_back(row);
  }
  for (const auto& r : rep.rows) {
    rep.mean_return += r.episode_return;
    rep.mean_deliveries += static_cast<double>(r.deliveries);
    rep.mean_collisions += static_cast<double>(r.collisions);
  }
  const double n = static_cast<double>(episodes);
  rep.mean_return /= n;
  rep.mean_deliveries /= n;
  rep.mean_collisions /= n;
  if (episodes > 1) {
    double var = 0.0;
    for (const auto& r : rep.rows) {
      const double d = r.episode_return - rep.mean_return;
      var += d * d;
    }
    rep.std_return = std::sqrt(var / (n - 1.0));
  }
  return rep;
}

// Trained-policy adapter: shared actor applied to every agent's observation.
struct BundlePolicy {
  const PolicyBundle* bundle = nullptr;
  bool deterministic = false;

  std::vector<Vec2> operator()(const Env& env, const WorldState& s,
                               Rng& rng) const {
    const int n = env.config().n_agents;
    std::vector<Observation> obs(static_cast<std::size_t>(n));
    std::vector<const Observation*> ptrs(static_cast<std::size_t>(n));
    for (int a = 0; a < n; ++a) {
      obs[static_cast<std::size_t>(a)] = env.observe(s, a);
      ptrs[static_cast<std::size_t>(a)] = &obs[static_cast<std::size_t>(a)];
    }
    const auto act = bundle->act(bundle->obs_tensor(ptrs), rng, deterministic);
    std::vector<Vec2> actions(static_cast<std::size_t>(n));
    for (int a = 0; a < n; ++a)
      actions[static_cast<std::size_t>(a)] =
          Vec2{act.actions.v[static_cast<long>(a) * 2],
               act.actions.v[static_cast<long>(a) * 2 + 1]};
    return actions;
  }
};

// Uniform random actions in [-1, 1]^2; the baseline for training checks.
struct RandomPolicy {
  std::vector<Vec2> operator()(const Env& env, const WorldState&,
                               Rng& rng) const {
    std::vector<Vec2> actions(static_cast<std::size_t>(env.config().n_agents));
    for (auto& a : actions) {
      a.x = rng.uniform(-1.0, 1.0);
      a.y = rng.uniform(-1.0, 1.0);
    }
    return actions;
  }
};

}  // namespace abmt
