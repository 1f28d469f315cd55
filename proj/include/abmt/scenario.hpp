#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "abmt/common.hpp"

namespace abmt {

struct MachineSpec {
  Vec2 position;
  Vec2 access_point;
  std::vector<Rect> blockers;
  int cycle_duration = 50;
  double pickup_radius = 0.15;
};

// Full description of one machine-tending scenario. Defaults give a 3 m x 3 m
// arena with four wall machines (two per side), each flanked by a pair of
// blocker boxes, and a storage shelf at the bottom middle.
struct ScenarioConfig {
  int n_agents = 3;
  double arena_half_extent = 1.5;
  double dt = 0.1;
  int max_steps = 500;
  double agent_radius = 0.05;
  std::vector<MachineSpec> machines;
  Rect storage_rect{-0.3, -1.5, 0.3, -1.2};

  // Reward weights.
  double r_deliver = 5.0;
  double r_pickup = 1.0;
  double w_shaping = 0.05;
  double w_collision = 0.5;
  double w_time = 0.005;

  // Holonomic double-integrator limits.
  double a_max = 1.0;
  double v_max = 0.5;
  double drag = 0.05;

  int n_machines() const { return static_cast<int>(machines.size()); }

  Rect arena_rect() const {
    return {-arena_half_extent, -arena_half_extent, arena_half_extent,
            arena_half_extent};
  }

  // Agents spawn in the central third of the arena.
  Rect spawn_rect() const {
    const double s = arena_half_extent / 3.0;
    return {-s, -s, s, s};
  }

  void validate() const {
    if (n_agents < 1) throw ConfigError("n_agents must be >= 1");
    if (dt <= 0.0) throw ConfigError("dt must be > 0");
    if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
    if (agent_radius <= 0.0) throw ConfigError("agent_radius must be > 0");
    if (machines.empty()) throw ConfigError("at least one machine required");
    const Rect arena = arena_rect();
    if (!arena.contains({storage_rect.xmin, storage_rect.ymin}) ||
        !arena.contains({storage_rect.xmax, storage_rect.ymax})) {
      throw ConfigError("storage_rect must lie inside the arena");
    }
    for (std::size_t m = 0; m < machines.size(); ++m) {
      const auto& spec = machines[m];
      if (spec.cycle_duration < 1)
        throw ConfigError("machine cycle_duration must be >= 1");
      if (spec.pickup_radius <= 0.0)
        throw ConfigError("machine pickup_radius must be > 0");
      if (!arena.contains(spec.access_point))
        throw ConfigError("machine access_point must lie inside the arena");
      for (const auto& b : spec.blockers) {
        if (b.xmin >= b.xmax || b.ymin >= b.ymax)
          throw ConfigError("blocker rectangle is degenerate");
        if (b.contains_open(spec.access_point))
          throw ConfigError("access_point lies inside a blocker");
        if (b.intersects(storage_rect))
          throw ConfigError("blocker overlaps the storage rectangle");
        for (const auto& other : machines) {
          if (b.contains_open(other.access_point))
            throw ConfigError("blocker covers a machine access point");
        }
      }
    }
  }
};

namespace detail {

inline MachineSpec wall_machine(double side, double y) {
  // side is -1 (left wall) or +1 (right wall).
  MachineSpec m;
  m.position = {side * 1.5, y};
  m.access_point = {side * 1.3, y};
  const double x0 = side < 0 ? -1.5 : 1.25;
  const double x1 = side < 0 ? -1.25 : 1.5;
  m.blockers.push_back({x0, y + 0.15, x1, y + 0.35});
  m.blockers.push_back({x0, y - 0.35, x1, y - 0.15});
  return m;
}

}  // namespace detail

inline ScenarioConfig default_scenario() {
  ScenarioConfig c;
  c.machines = {
      detail::wall_machine(-1, 0.7),
      detail::wall_machine(-1, -0.7),
      detail::wall_machine(+1, 0.7),
      detail::wall_machine(+1, -0.7),
  };
  return c;
}

// Single agent, single machine, no blockers. Used for fast training checks.
// The machine sits off the wall so the approach corridor is open on all
// sides; wall-mounted machines make the pickup spot a sticky local optimum
// at desk-scale training budgets.
inline ScenarioConfig reduced_scenario() {
  ScenarioConfig c;
  c.n_agents = 1;
  MachineSpec m;
  m.position = {-1.1, 0.0};
  m.access_point = {-0.9, 0.0};
  c.machines = {m};
  return c;
}

// ---- JSON (de)serialization -------------------------------------------
//
// Keys mirror the struct field names in snake_case. Unknown keys are a load
// error so that config typos fail loudly instead of silently using defaults.

namespace detail {

inline void require_keys(const nlohmann::json& j,
                         const std::set<std::string>& allowed,
                         const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key()))
      throw ConfigError(where + ": unknown key \"" + it.key() + "\"");
  }
}

inline Vec2 vec2_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2)
    throw ConfigError(where + ": expected [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

inline Rect rect_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4)
    throw ConfigError(where + ": expected [xmin, ymin, xmax, ymax]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
          j[3].get<double>()};
}

inline nlohmann::json rect_to_json(const Rect& r) {
  return nlohmann::json::array({r.xmin, r.ymin, r.xmax, r.ymax});
}

}  // namespace detail

inline MachineSpec machine_from_json(const nlohmann::json& j) {
  detail::require_keys(j,
                       {"position", "access_point", "blockers",
                        "cycle_duration", "pickup_radius"},
                       "machine");
  MachineSpec m;
  if (j.contains("position"))
    m.position = detail::vec2_from_json(j["position"], "machine.position");
  if (j.contains("access_point"))
    m.access_point =
        detail::vec2_from_json(j["access_point"], "machine.access_point");
  if (j.contains("blockers")) {
    for (const auto& b : j["blockers"])
      m.blockers.push_back(detail::rect_from_json(b, "machine.blockers"));
  }
  if (j.contains("cycle_duration")) m.cycle_duration = j["cycle_duration"];
  if (j.contains("pickup_radius")) m.pickup_radius = j["pickup_radius"];
  return m;
}

inline nlohmann::json machine_to_json(const MachineSpec& m) {
  nlohmann::json j;
  j["position"] = {m.position.x, m.position.y};
  j["access_point"] = {m.access_point.x, m.access_point.y};
  j["blockers"] = nlohmann::json::array();
  for (const auto& b : m.blockers) j["blockers"].push_back(detail::rect_to_json(b));
  j["cycle_duration"] = m.cycle_duration;
  j["pickup_radius"] = m.pickup_radius;
  return j;
}

inline ScenarioConfig scenario_from_json(const nlohmann::json& j) {
  detail::require_keys(
      j,
      {"n_agents", "arena_half_extent", "dt", "max_steps", "agent_radius",
       "machines", "storage_rect", "r_deliver", "r_pickup", "w_shaping",
       "w_collision", "w_time", "a_max", "v_max", "drag"},
      "scenario");
  ScenarioConfig c = default_scenario();
  if (j.contains("n_agents")) c.n_agents = j["n_agents"];
  if (j.contains("arena_half_extent"))
    c.arena_half_extent = j["arena_half_extent"];
  if (j.contains("dt")) c.dt = j["dt"];
  if (j.contains("max_steps")) c.max_steps = j["max_steps"];
  if (j.contains("agent_radius")) c.agent_radius = j["agent_radius"];
  if (j.contains("machines")) {
    c.machines.clear();
    for (const auto& m : j["machines"]) c.machines.push_back(machine_from_json(m));
  }
  if (j.contains("storage_rect"))
    c.storage_rect = detail::rect_from_json(j["storage_rect"], "storage_rect");
  if (j.contains("r_deliver")) c.r_deliver = j["r_deliver"];
  if (j.contains("r_pickup")) c.r_pickup = j["r_pickup"];
  if (j.contains("w_shaping")) c.w_shaping = j["w_shaping"];
  if (j.contains("w_collision")) c.w_collision = j["w_collision"];
  if (j.contains("w_time")) c.w_time = j["w_time"];
  if (j.contains("a_max")) c.a_max = j["a_max"];
  if (j.contains("v_max")) c.v_max = j["v_max"];
  if (j.contains("drag")) c.drag = j["drag"];
  c.validate();
  return c;
}

inline nlohmann::json scenario_to_json(const ScenarioConfig& c) {
  nlohmann::json j;
  j["n_agents"] = c.n_agents;
  j["arena_half_extent"] = c.arena_half_extent;
  j["dt"] = c.dt;
  j["max_steps"] = c.max_steps;
  j["agent_radius"] = c.agent_radius;
  j["machines"] = nlohmann::json::array();
  for (const auto& m : c.machines) j["machines"].push_back(machine_to_json(m));
  j["storage_rect"] = detail::rect_to_json(c.storage_rect);
  j["r_deliver"] = c.r_deliver;
  j["r_pickup"] = c.r_pickup;
  j["w_shaping"] = c.w_shaping;
  j["w_collision"] = c.w_collision;
  j["w_time"] = c.w_time;
  j["a_max"] = c.a_max;
  j["v_max"] = c.v_max;
  j["drag"] = c.drag;
  return j;
}

inline ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("scenario JSON parse error in " + path + ": " + e.what());
  }
  return scenario_from_json(j);
}

// FNV-1a 64 over the canonical (sorted-key, compact) JSON encoding. Stored
// in checkpoints so that a policy cannot be silently loaded against a
// structurally different scenario.
inline std::uint64_t scenario_fingerprint(const ScenarioConfig& c) {
  const std::string canon = scenario_to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canon) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace abmt
