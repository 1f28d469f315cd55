#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "abmt/bridge/channel.hpp"
#include "abmt/bridge/gray.hpp"
#include "abmt/bridge/robot.hpp"
#include "abmt/env.hpp"
#include "abmt/metrics_io.hpp"

namespace abmt::bridge {

struct BridgeConfig {
  ChannelConfig channel;
  int gray_bits = 10;
  int frame_period = 1;
  double scale = 1.0 / 3.0;  // sim meters -> arena meters
  RobotParams robot;
  bool oracle_localization = false;

  void validate() const {
    channel.validate();
    robot.validate();
    if (scale <= 0.0) throw ConfigError("bridge scale must be > 0");
    if (gray_bits < 1) throw ConfigError("gray_bits must be >= 1");
  }
};

struct BridgeTraceRow {
  long tick = 0;
  int robot_id = 0;
  double track_err_m = 0.0;
  double pose_age_ticks = 0.0;
  long mirrored_deliveries = 0;
};

struct BridgeRobotMetrics {
  double mean_track_err = 0.0;
  double max_track_err = 0.0;
  double mean_pose_age = 0.0;
  long mirrored_deliveries = 0;
};

struct BridgeResult {
  std::vector<BridgeRobotMetrics> robots;
  std::vector<BridgeTraceRow> trace;
  long ticks = 0;
  long sim_steps = 0;
  long sim_deliveries = 0;
};

inline void write_bridge_csv(const std::string& path,
                             const std::vector<BridgeTraceRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write bridge CSV: " + path);
  out << "tick,robot_id,track_err_m,pose_age_ticks,mirrored_deliveries\n";
  for (const auto& r : rows)
    out << r.tick << ',' << r.robot_id << ',' << format_double(r.track_err_m)
        << ',' << format_double(r.pose_age_ticks) << ','
        << r.mirrored_deliveries << '\n';
}

// Lockstep hardware-in-the-loop run. The ground station steps the scenario
// at its own dt with the frozen policy and streams each agent's scaled
// position as a waypoint; differential-drive robots follow their waypoint at
// a faster tick using the gray-code pose estimate. Actors advance in a fixed
// order (station, channel, robots) so runs are deterministic.
//
// ActFn: (const Env&, const WorldState&, Rng&) -> std::vector<Vec2>.
template <typename ActFn>
BridgeResult run_bridge(const Env& env, ActFn&& policy, const BridgeConfig& cfg,
                        long duration_ticks, std::uint64_t seed) {
  cfg.validate();
  if (duration_ticks < 1) throw ConfigError("bridge duration must be >= 1 tick");
  const int n = env.config().n_agents;
  const int ticks_per_sim =
      std::max(1, static_cast<int>(std::lround(env.config().dt / cfg.robot.dt)));

  GrayCodeSchedule sched;
  sched.bits = cfg.gray_bits;
  sched.frame_period = cfg.frame_period;
  sched.arena_extent = 2.0 * env.config().arena_half_extent * cfg.scale;
  sched.validate();

  Rng base(seed);
  WorldState sim = env.reset_with_rng(base.split(0));
  Rng policy_rng = base.split(1);
  Channel channel(cfg.channel, n, base.split(2), cfg.robot.dt * 1000.0);

  std::vector<RobotState> robots(static_cast<std::size_t>(n));
  std::vector<GrayLocalizer> localizers;
  localizers.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    robots[static_cast<std::size_t>(i)].pose =
        Pose{sim.pos[static_cast<std::size_t>(i)].x * cfg.scale,
             sim.pos[static_cast<std::size_t>(i)].y * cfg.scale, 0.0};
    robots[static_cast<std::size_t>(i)].estimate = robots[static_cast<std::size_t>(i)].pose;
    localizers.emplace_back(sched);
  }

  const Rect storage_scaled{env.config().storage_rect.xmin * cfg.scale,
                            env.config().storage_rect.ymin * cfg.scale,
                            env.config().storage_rect.xmax * cfg.scale,
                            env.config().storage_rect.ymax * cfg.scale};

  BridgeResult result;
  result.robots.assign(static_cast<std::size_t>(n), BridgeRobotMetrics{});
  result.trace.reserve(static_cast<std::size_t>(duration_ticks) * n);
  std::vector<std::uint32_t> waypoint_seq(static_cast<std::size_t>(n), 0);
  std::vector<bool> mirror_state(static_cast<std::size_t>(n), false);
  std::vector<long> age_samples(static_cast<std::size_t>(n), 0);

  for (long tick = 0; tick < duration_ticks; ++tick) {
    // Station: step the sim at its cadence and emit one waypoint per robot.
    if (tick % ticks_per_sim == 0) {
      if (tick > 0) {
        const auto actions = policy(env, sim, policy_rng);
        env.step(sim, actions);
        ++result.sim_steps;
      }
      for (int i = 0; i < n; ++i) {
        BridgeFrame f;
        f.msg_type = MsgType::Waypoint;
        f.robot_id = static_cast<std::uint8_t>(i);
        f.seq = ++waypoint_seq[static_cast<std::size_t>(i)];
        f.t_sim_ms = static_cast<std::uint32_t>(
            std::lround(sim.step_index * env.config().dt * 1000.0));
        f.x_mm = static_cast<std::int32_t>(
            std::lround(sim.pos[static_cast<std::size_t>(i)].x * cfg.scale * 1000.0));
        f.y_mm = static_cast<std::int32_t>(
            std::lround(sim.pos[static_cast<std::size_t>(i)].y * cfg.scale * 1000.0));
        channel.send_waypoint(tick, f);
      }
    }

    // Channel: uplink pose reports and peer exchange, then waypoint delivery.
    std::vector<Pose> reported(static_cast<std::size_t>(n));
    std::vector<Vec2> true_positions(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      reported[static_cast<std::size_t>(i)] = robots[static_cast<std::size_t>(i)].estimate;
      true_positions[static_cast<std::size_t>(i)] =
          Vec2{robots[static_cast<std::size_t>(i)].pose.x,
               robots[static_cast<std::size_t>(i)].pose.y};
    }
    channel.tick(tick, reported, true_positions);
    for (int i = 0; i < n; ++i) {
      const auto frames = channel.receive_waypoints(tick, i);
      if (!frames.empty()) {
        const BridgeFrame& f = frames.back();
        robots[static_cast<std::size_t>(i)].waypoint =
            Vec2{f.x_mm / 1000.0, f.y_mm / 1000.0};
        robots[static_cast<std::size_t>(i)].has_waypoint = true;
      }
    }

    // Robots: localize, then drive.
    for (int i = 0; i < n; ++i) {
      RobotState& r = robots[static_cast<std::size_t>(i)];
      bool fixed = false;
      if (cfg.oracle_localization) {
        r.estimate = r.pose;
        fixed = true;
      } else {
        fixed = localizers[static_cast<std::size_t>(i)].tick(tick, r.pose, r.estimate);
      }
      drive_tick(r, cfg.robot, cfg.robot.dt);
      r.estimate_age = fixed ? 0 : r.estimate_age + 1;
    }

    // Metrics at end of tick.
    for (int i = 0; i < n; ++i) {
      const RobotState& r = robots[static_cast<std::size_t>(i)];
      const double tx = sim.pos[static_cast<std::size_t>(i)].x * cfg.scale;
      const double ty = sim.pos[static_cast<std::size_t>(i)].y * cfg.scale;
      const double err = std::sqrt((r.pose.x - tx) * (r.pose.x - tx) +
                                   (r.pose.y - ty) * (r.pose.y - ty));
      const double age = channel.staleness(i);
      auto& m = result.robots[static_cast<std::size_t>(i)];
      m.mean_track_err += err;
      if (err > m.max_track_err) m.max_track_err = err;
      // Skip warm-up ticks where no report has arrived yet.
      bool age_valid;
      if (cfg.channel.kind == ChannelKind::Central) {
        age_valid = channel.station_has(i);
      } else {
        age_valid = true;
        for (int j = 0; j < n; ++j)
          if (j != i && !channel.peer_has(j, i)) age_valid = false;
      }
      if (age_valid) {
        m.mean_pose_age += age;
        ++age_samples[static_cast<std::size_t>(i)];
      }
      const bool in_region =
          storage_scaled.contains(Vec2{r.pose.x, r.pose.y});
      const bool twin_carrying = sim.carrying[static_cast<std::size_t>(i)] != 0;
      const bool mirrored = in_region && twin_carrying;
      if (mirrored && !mirror_state[static_cast<std::size_t>(i)])
        ++m.mirrored_deliveries;
      mirror_state[static_cast<std::size_t>(i)] = mirrored;

      BridgeTraceRow row;
      row.tick = tick;
      row.robot_id = i;
      row.track_err_m = err;
      row.pose_age_ticks = age_valid ? age : -1.0;  // -1 before first report
      row.mirrored_deliveries = m.mirrored_deliveries;
      result.trace.push_back(row);
    }
  }

  result.ticks = duration_ticks;
  result.sim_deliveries = sim.delivered_total;
  for (int i = 0; i < n; ++i) {
    auto& m = result.robots[static_cast<std::size_t>(i)];
    m.mean_track_err /= static_cast<double>(duration_ticks);
    if (age_samples[static_cast<std::size_t>(i)] > 0)
      m.mean_pose_age /= static_cast<double>(age_samples[static_cast<std::size_t>(i)]);
  }
  return result;
}

// Zero-action policy: agents stay at rest, waypoints are static.
struct ZeroPolicy {
  std::vector<Vec2> operator()(const Env& env, const WorldState&, Rng&) const {
    return std::vector<Vec2>(static_cast<std::size_t>(env.config().n_agents));
  }
};

}  // namespace abmt::bridge
