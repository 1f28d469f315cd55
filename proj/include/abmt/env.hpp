#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "abmt/common.hpp"
#include "abmt/rng.hpp"
#include "abmt/scenario.hpp"

namespace abmt {

struct MachineState {
  bool ready = false;
  int timer = 0;  // steps spent processing; unused while ready
  long parts_produced = 0;
};

struct WorldState {
  std::vector<Vec2> pos;
  std::vector<Vec2> vel;
  std::vector<std::uint8_t> carrying;
  std::vector<MachineState> machines;
  long delivered_total = 0;
  int step_index = 0;
  Rng rng;  // consumed on reset; carried so auto-resets stay reproducible
};

// Per-agent observation in two equivalent views. The flat view feeds the
// MLP encoder; the token view feeds the attention encoder. Token layout:
// [type one-hot (self, agent, machine, storage), payload..., zero padding].
struct Observation {
  std::vector<double> flat;
  std::vector<double> tokens;  // row-major [n_tokens, token_width]
  int n_tokens = 0;
  int token_width = 0;
};

struct StepInfo {
  int deliveries_this_step = 0;
  int pickups_this_step = 0;
  int collision_pairs_this_step = 0;  // agent pairs + agent-blocker contacts
};

struct StepOutcome {
  std::vector<Observation> obs;
  std::vector<double> rewards;
  bool terminated = false;
  StepInfo info;
};

// Entity-token geometry shared by both observation views.
inline constexpr int kTokenTypes = 4;  // self, agent, machine, storage
inline constexpr int kTokenPayload = 5;
inline constexpr int kTokenWidth = kTokenTypes + kTokenPayload;
enum class TokenType { Self = 0, Agent = 1, Machine = 2, Storage = 3 };

// True (unpadded) payload widths per token type, in token order. Used by
// tests that cross-check the flat view against the token view.
inline int token_payload_width(TokenType t) {
  switch (t) {
    case TokenType::Self: return 5;
    case TokenType::Agent: return 4;
    case TokenType::Machine: return 4;
    case TokenType::Storage: return 2;
  }
  return 0;
}

// Deterministic machine-tending environment on a square arena. All methods
// are const; state flows through explicitly. A single WorldState must not be
// stepped concurrently, but one Env (config) may be shared across threads.
class Env {
 public:
  explicit Env(ScenarioConfig config) : cfg_(std::move(config)) {
    cfg_.validate();
  }

  const ScenarioConfig& config() const { return cfg_; }

  int obs_flat_dim() const {
    return 5 + 4 * (cfg_.n_agents - 1) + 4 * cfg_.n_machines() + 2;
  }
  int obs_token_count() const { return 1 + (cfg_.n_agents - 1) + cfg_.n_machines() + 1; }
  int global_state_dim() const {
    return 5 * cfg_.n_agents + 4 * cfg_.n_machines() + 2 + 1;
  }
  int global_token_count() const { return cfg_.n_agents + cfg_.n_machines() + 1; }
  int action_dim() const { return 2; }

  WorldState reset(std::uint64_t seed) const { return reset_with_rng(Rng(seed)); }

  WorldState reset_with_rng(Rng rng) const {
    WorldState s;
    s.rng = rng;
    s.pos.resize(cfg_.n_agents);
    s.vel.assign(cfg_.n_agents, Vec2{});
    s.carrying.assign(cfg_.n_agents, 0);
    s.machines.resize(cfg_.machines.size());
    s.delivered_total = 0;
    s.step_index = 0;
    sample_spawn_positions(s);
    for (std::size_t m = 0; m < s.machines.size(); ++m) {
      auto& ms = s.machines[m];
      ms.ready = false;
      ms.parts_produced = 0;
      ms.timer = static_cast<int>(
          s.rng.uniform() * static_cast<double>(cfg_.machines[m].cycle_duration));
    }
    return s;
  }

  // One simulation step. Action components are clamped to [-1, 1].
  StepOutcome step(WorldState& s, const std::vector<Vec2>& actions) const {
    const int n = cfg_.n_agents;
    StepOutcome out;
    out.rewards.assign(n, 0.0);

    // Shaping potential is measured against the goal captured at step start,
    // so each constant-goal segment telescopes exactly.
    std::vector<Vec2> goals(n);
    std::vector<double> prev_goal_dist(n);
    for (int i = 0; i < n; ++i) {
      goals[i] = goal_point(s, i);
      prev_goal_dist[i] = distance(s.pos[i], goals[i]);
    }

    // (1) Integrate holonomic double-integrator dynamics.
    for (int i = 0; i < n; ++i) {
      Vec2 a{clamp(actions.size() > static_cast<std::size_t>(i) ? actions[i].x : 0.0, -1.0, 1.0),
             clamp(actions.size() > static_cast<std::size_t>(i) ? actions[i].y : 0.0, -1.0, 1.0)};
      Vec2 v = (s.vel[i] + a * (cfg_.a_max * cfg_.dt)) * (1.0 - cfg_.drag);
      const double speed = v.norm();
      if (speed > cfg_.v_max) v = v * (cfg_.v_max / speed);
      s.vel[i] = v;
      s.pos[i] += v * cfg_.dt;
    }

    // (2) Positional collision resolution.
    std::vector<int> collision_events(n, 0);
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        Vec2 d = s.pos[j] - s.pos[i];
        const double dist = d.norm();
        const double min_dist = 2.0 * cfg_.agent_radius;
        if (dist < min_dist) {
          Vec2 dir = dist > 1e-12 ? d * (1.0 / dist) : Vec2{1.0, 0.0};
          const double push = 0.5 * (min_dist - dist);
          s.pos[i] -= dir * push;
          s.pos[j] += dir * push;
          ++out.info.collision_pairs_this_step;
          ++collision_events[i];
          ++collision_events[j];
        }
      }
    }
    for (int i = 0; i < n; ++i) {
      for (const auto& spec : cfg_.machines) {
        for (const auto& b : spec.blockers) {
          if (project_out_of_rect(b.inflated(cfg_.agent_radius), s.pos[i],
                                  s.vel[i])) {
            ++out.info.collision_pairs_this_step;
            ++collision_events[i];
          }
        }
      }
      clamp_to_walls(s.pos[i], s.vel[i]);
    }

    // (3) Machine cycles.
    for (std::size_t m = 0; m < s.machines.size(); ++m) {
      auto& ms = s.machines[m];
      if (!ms.ready) {
        ms.timer += 1;
        if (ms.timer >= cfg_.machines[m].cycle_duration) {
          ms.ready = true;
          ms.timer = 0;
        }
      }
    }

    // (4) Pickups; ties broken by lowest agent index, one part per agent.
    std::vector<int> picked(n, 0);
    for (std::size_t m = 0; m < s.machines.size(); ++m) {
      auto& ms = s.machines[m];
      if (!ms.ready) continue;
      int chosen = -1;
      for (int i = 0; i < n; ++i) {
        if (s.carrying[i] || picked[i]) continue;
        if (distance(s.pos[i], cfg_.machines[m].access_point) <=
            cfg_.machines[m].pickup_radius) {
          chosen = i;
          break;
        }
      }
      if (chosen >= 0) {
        s.carrying[chosen] = 1;
        picked[chosen] = 1;
        ms.ready = false;
        ms.timer = 0;
        ms.parts_produced += 1;
        ++out.info.pickups_this_step;
      }
    }

    // (5) Deliveries.
    std::vector<int> delivered(n, 0);
    for (int i = 0; i < n; ++i) {
      if (s.carrying[i] && cfg_.storage_rect.contains(s.pos[i])) {
        s.carrying[i] = 0;
        delivered[i] = 1;
        s.delivered_total += 1;
        ++out.info.deliveries_this_step;
      }
    }

    // (6) Rewards.
    for (int i = 0; i < n; ++i) {
      const double new_goal_dist = distance(s.pos[i], goals[i]);
      out.rewards[i] = cfg_.r_deliver * delivered[i] +
                       cfg_.r_pickup * picked[i] +
                       cfg_.w_shaping * (prev_goal_dist[i] - new_goal_dist) -
                       cfg_.w_collision * collision_events[i] - cfg_.w_time;
    }

    s.step_index += 1;
    out.terminated = s.step_index >= cfg_.max_steps;
    out.obs.resize(n);
    for (int i = 0; i < n; ++i) out.obs[i] = observe(s, i);
    return out;
  }

  // The shaping goal: storage center while carrying, otherwise the nearest
  // ready machine's access point (arena center if none is ready).
  Vec2 goal_point(const WorldState& s, int agent) const {
    if (s.carrying[agent]) return cfg_.storage_rect.center();
    double best = -1.0;
    Vec2 target{0.0, 0.0};
    for (std::size_t m = 0; m < s.machines.size(); ++m) {
      if (!s.machines[m].ready) continue;
      const double d = distance(s.pos[agent], cfg_.machines[m].access_point);
      if (best < 0.0 || d < best) {
        best = d;
        target = cfg_.machines[m].access_point;
      }
    }
    return target;
  }

  Observation observe(const WorldState& s, int agent) const {
    if (agent < 0 || agent >= cfg_.n_agents)
      throw std::out_of_range("observe: agent index out of range");
    Observation o;
    o.token_width = kTokenWidth;
    o.n_tokens = obs_token_count();
    o.flat.reserve(obs_flat_dim());
    o.tokens.assign(static_cast<std::size_t>(o.n_tokens) * kTokenWidth, 0.0);

    int row = 0;
    auto token = [&](TokenType t) -> double* {
      double* p = o.tokens.data() + static_cast<std::size_t>(row) * kTokenWidth;
      p[static_cast<int>(t)] = 1.0;
      ++row;
      return p + kTokenTypes;
    };

    const Vec2 self_p = s.pos[agent];
    {
      // All positions are self-relative, so the self entries are zero; the
      // fixed landmarks' relative vectors still determine absolute position.
      double* p = token(TokenType::Self);
      p[0] = 0.0;
      p[1] = 0.0;
      p[2] = s.vel[agent].x;
      p[3] = s.vel[agent].y;
      p[4] = s.carrying[agent] ? 1.0 : 0.0;
      o.flat.insert(o.flat.end(), {p[0], p[1], p[2], p[3], p[4]});
    }
    for (int j = 0; j < cfg_.n_agents; ++j) {
      if (j == agent) continue;
      double* p = token(TokenType::Agent);
      p[0] = s.pos[j].x - self_p.x;
      p[1] = s.pos[j].y - self_p.y;
      p[2] = s.vel[j].x - s.vel[agent].x;
      p[3] = s.vel[j].y - s.vel[agent].y;
      o.flat.insert(o.flat.end(), {p[0], p[1], p[2], p[3]});
    }
    for (std::size_t m = 0; m < s.machines.size(); ++m) {
      double* p = token(TokenType::Machine);
      p[0] = cfg_.machines[m].access_point.x - self_p.x;
      p[1] = cfg_.machines[m].access_point.y - self_p.y;
      p[2] = s.machines[m].ready ? 1.0 : 0.0;
      p[3] = time_to_ready(s, static_cast<int>(m));
      o.flat.insert(o.flat.end(), {p[0], p[1], p[2], p[3]});
    }
    {
      double* p = token(TokenType::Storage);
      const Vec2 c = cfg_.storage_rect.center();
      p[0] = c.x - self_p.x;
      p[1] = c.y - self_p.y;
      o.flat.insert(o.flat.end(), {p[0], p[1]});
    }
    return o;
  }

  // Centralized-critic input: absolute agent and machine features plus the
  // storage center and normalized step index, in fixed order.
  std::vector<double> global_state(const WorldState& s) const {
    std::vector<double> g;
    g.reserve(global_state_dim());
    for (int i = 0; i < cfg_.n_agents; ++i) {
      g.push_back(s.pos[i].x);
      g.push_back(s.pos[i].y);
      g.push_back(s.vel[i].x);
      g.push_back(s.vel[i].y);
      g.push_back(s.carrying[i] ? 1.0 : 0.0);
    }
    for (std::size_t m = 0; m < s.machines.size(); ++m) {
      g.push_back(cfg_.machines[m].access_point.x);
      g.push_back(cfg_.machines[m].access_point.y);
      g.push_back(s.machines[m].ready ? 1.0 : 0.0);
      g.push_back(time_to_ready(s, static_cast<int>(m)));
    }
    const Vec2 c = cfg_.storage_rect.center();
    g.push_back(c.x);
    g.push_back(c.y);
    g.push_back(static_cast<double>(s.step_index) / cfg_.max_steps);
    return g;
  }

  // Token view of the global state, for the attention-encoder critic.
  // Same token width as observations; agent/machine/storage types.
  std::vector<double> global_tokens(const WorldState& s) const {
    std::vector<double> t(
        static_cast<std::size_t>(global_token_count()) * kTokenWidth, 0.0);
    int row = 0;
    auto token = [&](TokenType type) -> double* {
      double* p = t.data() + static_cast<std::size_t>(row) * kTokenWidth;
      p[static_cast<int>(type)] = 1.0;
      ++row;
      return p + kTokenTypes;
    };
    for (int i = 0; i < cfg_.n_agents; ++i) {
      double* p = token(TokenType::Agent);
      p[0] = s.pos[i].x;
      p[1] = s.pos[i].y;
      p[2] = s.vel[i].x;
      p[3] = s.vel[i].y;
      p[4] = s.carrying[i] ? 1.0 : 0.0;
    }
    for (std::size_t m = 0; m < s.machines.size(); ++m) {
      double* p = token(TokenType::Machine);
      p[0] = cfg_.machines[m].access_point.x;
      p[1] = cfg_.machines[m].access_point.y;
      p[2] = s.machines[m].ready ? 1.0 : 0.0;
      p[3] = time_to_ready(s, static_cast<int>(m));
    }
    {
      double* p = token(TokenType::Storage);
      const Vec2 c = cfg_.storage_rect.center();
      p[0] = c.x;
      p[1] = c.y;
      p[2] = static_cast<double>(s.step_index) / cfg_.max_steps;
    }
    return t;
  }

  double time_to_ready(const WorldState& s, int machine) const {
    const auto& ms = s.machines[machine];
    if (ms.ready) return 0.0;
    const int cycle = cfg_.machines[machine].cycle_duration;
    return static_cast<double>(cycle - ms.timer) / cycle;
  }

 private:
  void sample_spawn_positions(WorldState& s) const {
    const Rect spawn = cfg_.spawn_rect();
    const double min_dist = 2.0 * cfg_.agent_radius;
    for (int i = 0; i < cfg_.n_agents; ++i) {
      bool placed = false;
      for (int attempt = 0; attempt < 10000; ++attempt) {
        Vec2 p{s.rng.uniform(spawn.xmin, spawn.xmax),
               s.rng.uniform(spawn.ymin, spawn.ymax)};
        bool ok = true;
        for (int j = 0; j < i; ++j) {
          if (distance(p, s.pos[j]) <= min_dist) {
            ok = false;
            break;
          }
        }
        if (ok) {
          for (const auto& spec : cfg_.machines) {
            for (const auto& b : spec.blockers) {
              if (b.inflated(cfg_.agent_radius).contains_open(p)) {
                ok = false;
                break;
              }
            }
            if (!ok) break;
          }
        }
        if (ok) {
          s.pos[i] = p;
          placed = true;
          break;
        }
      }
      if (!placed)
        throw ConfigError(
            "reset: spawn rejection sampling failed after 10000 attempts");
    }
  }

  // Pushes p out of rect along the minimal-penetration axis and zeroes the
  // normal velocity component. Returns true if there was an overlap.
  static bool project_out_of_rect(const Rect& r, Vec2& p, Vec2& v) {
    if (!r.contains_open(p)) return false;
    const double pen_left = p.x - r.xmin;
    const double pen_right = r.xmax - p.x;
    const double pen_bottom = p.y - r.ymin;
    const double pen_top = r.ymax - p.y;
    double best = pen_left;
    int axis = 0;
    if (pen_right < best) {
      best = pen_right;
      axis = 1;
    }
    if (pen_bottom < best) {
      best = pen_bottom;
      axis = 2;
    }
    if (pen_top < best) {
      best = pen_top;
      axis = 3;
    }
    switch (axis) {
      case 0: p.x = r.xmin; v.x = 0.0; break;
      case 1: p.x = r.xmax; v.x = 0.0; break;
      case 2: p.y = r.ymin; v.y = 0.0; break;
      case 3: p.y = r.ymax; v.y = 0.0; break;
    }
    return true;
  }

  void clamp_to_walls(Vec2& p, Vec2& v) const {
    const double lim = cfg_.arena_half_extent - cfg_.agent_radius;
    if (p.x < -lim) { p.x = -lim; v.x = 0.0; }
    if (p.x > lim) { p.x = lim; v.x = 0.0; }
    if (p.y < -lim) { p.y = -lim; v.y = 0.0; }
    if (p.y > lim) { p.y = lim; v.y = 0.0; }
  }

  ScenarioConfig cfg_;
};

// Fixed-size batch of independent environment instances sharing one config.
// Instances auto-reset when an episode terminates; completed-episode stats
// are kept in a bounded window for training logs.
class BatchEnv {
 public:
  struct EpisodeStats {
    double mean_return = 0.0;  // mean over agents of summed rewards
    long deliveries = 0;
    long collisions = 0;
  };

  BatchEnv(const Env& env, int n_envs, std::uint64_t seed)
      : env_(env), n_envs_(n_envs) {
    Rng base(seed);
    states_.reserve(n_envs);
    for (int e = 0; e < n_envs; ++e)
      states_.push_back(env_.reset_with_rng(base.split(e)));
    episode_return_.assign(n_envs, 0.0);
    episode_collisions_.assign(n_envs, 0);
  }

  int size() const { return n_envs_; }
  const Env& env() const { return env_; }
  WorldState& state(int e) { return states_[e]; }
  const WorldState& state(int e) const { return states_[e]; }

  // Steps every instance; returns per-instance outcomes in index order and
  // auto-resets finished episodes (the stored state becomes the reset state).
  std::vector<StepOutcome> step(
      const std::vector<std::vector<Vec2>>& actions) {
    std::vector<StepOutcome> outs(n_envs_);
    for (int e = 0; e < n_envs_; ++e) {
      outs[e] = env_.step(states_[e], actions[e]);
      double mean_r = 0.0;
      for (double r : outs[e].rewards) mean_r += r;
      mean_r /= outs[e].rewards.size();
      episode_return_[e] += mean_r;
      episode_collisions_[e] += outs[e].info.collision_pairs_this_step;
      if (outs[e].terminated) {
        EpisodeStats st;
        st.mean_return = episode_return_[e];
        st.deliveries = states_[e].delivered_total;
        st.collisions = episode_collisions_[e];
        push_completed(st);
        episode_return_[e] = 0.0;
        episode_collisions_[e] = 0;
        states_[e] = env_.reset_with_rng(states_[e].rng);
      }
    }
    return outs;
  }

  const std::vector<EpisodeStats>& completed_window() const {
    return completed_;
  }
  long episodes_completed() const { return episodes_completed_; }

 private:
  void push_completed(const EpisodeStats& st) {
    ++episodes_completed_;
    completed_.push_back(st);
    if (completed_.size() > kWindow) completed_.erase(completed_.begin());
  }

  static constexpr std::size_t kWindow = 32;
  Env env_;
  int n_envs_;
  std::vector<WorldState> states_;
  std::vector<double> episode_return_;
  std::vector<long> episode_collisions_;
  std::vector<EpisodeStats> completed_;
  long episodes_completed_ = 0;
};

}  // namespace abmt
