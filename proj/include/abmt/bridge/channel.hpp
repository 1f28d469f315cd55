#pragma once

#include <deque>
#include <vector>

#include "abmt/bridge/frame.hpp"
#include "abmt/bridge/gray.hpp"
#include "abmt/common.hpp"
#include "abmt/rng.hpp"

namespace abmt::bridge {

enum class ChannelKind { Central = 0, Gossip = 1 };

struct ChannelConfig {
  ChannelKind kind = ChannelKind::Central;
  int capacity = 1;             // central: pose reports per tick
  double neighbor_radius = 0.6; // gossip: reception range, meters
  double delivery_prob = 1.0;   // gossip: per-link reception probability
  int waypoint_delay = 1;       // downlink delay in ticks, both kinds

  void validate() const {
    if (capacity < 1) throw ConfigError("channel capacity must be >= 1");
    if (delivery_prob < 0.0 || delivery_prob > 1.0)
      throw ConfigError("delivery_prob must be in [0, 1]");
    if (waypoint_delay < 0) throw ConfigError("waypoint_delay must be >= 0");
  }
};

// Uplink/peer-exchange model plus the waypoint downlink queue.
//
// Central: the station polls `capacity` robots per tick in round-robin
// order; only polled robots' pose reports reach the station that tick. The
// station rebroadcasts its pose table, so robots learn about each other only
// via the station round trip (one downlink delay on top of the table age).
//
// Gossip: every robot broadcasts its pose every tick; each robot within
// `neighbor_radius` receives it with probability `delivery_prob`.
//
// Waypoints are lossless with a fixed delay in both modes.
class Channel {
 public:
  Channel(const ChannelConfig& cfg, int n_robots, Rng rng,
          double ms_per_tick = 20.0)
      : cfg_(cfg), n_(n_robots), rng_(rng), ms_per_tick_(ms_per_tick) {
    cfg_.validate();
    station_capture_.assign(n_, kNever);
    station_pose_.assign(n_, Pose{});
    station_gate_.assign(n_, SeqGate{});
    report_seq_.assign(n_, 0);
    peer_capture_.assign(static_cast<std::size_t>(n_) * n_, kNever);
    waypoint_queue_.resize(n_);
    waypoint_gate_.assign(n_, SeqGate{});
  }

  const ChannelConfig& config() const { return cfg_; }

  // Station-side: queue one waypoint frame for downlink delivery.
  void send_waypoint(long tick, const BridgeFrame& frame) {
    const auto bytes = encode_frame(frame);
    waypoint_queue_[frame.robot_id].push_back(
        Pending{tick + cfg_.waypoint_delay, bytes});
  }

  // Robot-side: waypoint frames due at `tick`, in send order, stale frames
  // dropped by the per-stream sequence gate.
  std::vector<BridgeFrame> receive_waypoints(long tick, int robot) {
    std::vector<BridgeFrame> out;
    auto& q = waypoint_queue_[static_cast<std::size_t>(robot)];
    while (!q.empty() && q.front().deliver_tick <= tick) {
      const BridgeFrame f = decode_frame(q.front().bytes.data(), kFrameSize);
      q.pop_front();
      if (waypoint_gate_[static_cast<std::size_t>(robot)].accept(f.seq))
        out.push_back(f);
    }
    return out;
  }

  // One uplink/exchange tick. `reported` are the poses robots would send
  // (their estimates); `true_positions` determine gossip reachability.
  void tick(long tick, const std::vector<Pose>& reported,
            const std::vector<Vec2>& true_positions) {
    if (cfg_.kind == ChannelKind::Central) {
      const int polls = cfg_.capacity < n_ ? cfg_.capacity : n_;
      for (int c = 0; c < polls; ++c) {
        const int robot = rr_next_;
        rr_next_ = (rr_next_ + 1) % n_;
        deliver_report_to_station(tick, robot, reported[static_cast<std::size_t>(robot)]);
      }
      // Station table rebroadcast; robots see it after the downlink delay.
      relay_queue_.push_back(RelaySnapshot{tick + cfg_.waypoint_delay,
                                           station_capture_});
      while (!relay_queue_.empty() &&
             relay_queue_.front().deliver_tick <= tick) {
        const auto& snap = relay_queue_.front().capture;
        for (int i = 0; i < n_; ++i)
          for (int j = 0; j < n_; ++j) {
            if (i == j) continue;
            long& cell = peer_capture_[static_cast<std::size_t>(i) * n_ + j];
            if (snap[static_cast<std::size_t>(j)] > cell)
              cell = snap[static_cast<std::size_t>(j)];
          }
        relay_queue_.pop_front();
      }
    } else {
      for (int j = 0; j < n_; ++j) {
        BridgeFrame f = make_report(tick, j, reported[static_cast<std::size_t>(j)]);
        const auto bytes = encode_frame(f);
        for (int i = 0; i < n_; ++i) {
          if (i == j) continue;
          const double dist =
              (true_positions[static_cast<std::size_t>(i)] -
               true_positions[static_cast<std::size_t>(j)]).norm();
          if (dist > cfg_.neighbor_radius) continue;
          if (rng_.uniform() < cfg_.delivery_prob) {
            const BridgeFrame rx = decode_frame(bytes.data(), kFrameSize);
            peer_capture_[static_cast<std::size_t>(i) * n_ + rx.robot_id] = tick;
          }
        }
      }
    }
    last_tick_ = tick;
  }

  // Ages in ticks as of the end of the last processed tick.
  long station_age(int robot) const {
    return age_of(station_capture_[static_cast<std::size_t>(robot)]);
  }
  long peer_age(int receiver, int sender) const {
    return age_of(peer_capture_[static_cast<std::size_t>(receiver) * n_ + sender]);
  }
  bool station_has(int robot) const {
    return station_capture_[static_cast<std::size_t>(robot)] != kNever;
  }
  bool peer_has(int receiver, int sender) const {
    return peer_capture_[static_cast<std::size_t>(receiver) * n_ + sender] != kNever;
  }

  // Mean age of `sender`'s pose over all other robots (gossip consumers).
  double mean_peer_age_of(int sender) const {
    if (n_ <= 1) return 0.0;
    double acc = 0.0;
    for (int i = 0; i < n_; ++i) {
      if (i == sender) continue;
      acc += static_cast<double>(peer_age(i, sender));
    }
    return acc / static_cast<double>(n_ - 1);
  }

  // Primary staleness figure for robot `i`: the station's age of its pose
  // under central polling, the mean consumer age under gossip.
  double staleness(int robot) const {
    return cfg_.kind == ChannelKind::Central
               ? static_cast<double>(station_age(robot))
               : mean_peer_age_of(robot);
  }

  const Pose& station_pose(int robot) const {
    return station_pose_[static_cast<std::size_t>(robot)];
  }

 private:
  static constexpr long kNever = -(1L << 40);

  struct Pending {
    long deliver_tick;
    std::array<std::uint8_t, kFrameSize> bytes;
  };
  struct RelaySnapshot {
    long deliver_tick;
    std::vector<long> capture;
  };

  long age_of(long capture) const { return last_tick_ - capture; }

  BridgeFrame make_report(long tick, int robot, const Pose& pose) {
    BridgeFrame f;
    f.msg_type = MsgType::PoseReport;
    f.robot_id = static_cast<std::uint8_t>(robot);
    f.seq = ++report_seq_[static_cast<std::size_t>(robot)];
    f.t_sim_ms = static_cast<std::uint32_t>(std::lround(tick * ms_per_tick_));
    f.x_mm = static_cast<std::int32_t>(std::lround(pose.x * 1000.0));
    f.y_mm = static_cast<std::int32_t>(std::lround(pose.y * 1000.0));
    f.theta_mrad = static_cast<std::int32_t>(std::lround(pose.theta * 1000.0));
    return f;
  }

  void deliver_report_to_station(long tick, int robot, const Pose& pose) {
    BridgeFrame f = make_report(tick, robot, pose);
    const auto bytes = encode_frame(f);
    const BridgeFrame rx = decode_frame(bytes.data(), kFrameSize);
    if (!station_gate_[static_cast<std::size_t>(rx.robot_id)].accept(rx.seq))
      return;
    station_capture_[static_cast<std::size_t>(rx.robot_id)] = tick;
    station_pose_[static_cast<std::size_t>(rx.robot_id)] =
        Pose{rx.x_mm / 1000.0, rx.y_mm / 1000.0, rx.theta_mrad / 1000.0};
  }

  ChannelConfig cfg_;
  int n_;
  Rng rng_;
  double ms_per_tick_;
  int rr_next_ = 0;
  long last_tick_ = 0;
  std::vector<long> station_capture_;
  std::vector<Pose> station_pose_;
  std::vector<SeqGate> station_gate_;
  std::vector<std::uint32_t> report_seq_;
  std::vector<long> peer_capture_;  // [receiver * n + sender]
  std::deque<RelaySnapshot> relay_queue_;
  std::vector<std::deque<Pending>> waypoint_queue_;
  std::vector<SeqGate> waypoint_gate_;
};

}  // namespace abmt::bridge
