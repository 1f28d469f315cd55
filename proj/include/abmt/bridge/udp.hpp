#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <optional>
#include <thread>
#include <vector>

#include "abmt/bridge/bridge.hpp"

namespace abmt::bridge {

// Thin loopback datagram socket; one BridgeFrame per datagram.
class UdpSocket {
 public:
  UdpSocket() : fd_(::socket(AF_INET, SOCK_DGRAM, 0)) {
    if (fd_ < 0) throw IoError("udp: socket() failed");
  }
  ~UdpSocket() {
    if (fd_ >= 0) ::close(fd_);
  }
  UdpSocket(const UdpSocket&) = delete;
  UdpSocket& operator=(const UdpSocket&) = delete;

  void bind_port(std::uint16_t port) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
      throw IoError("udp: bind failed on port " + std::to_string(port));
  }

  void send_frame(std::uint16_t port, const BridgeFrame& frame) {
    const auto bytes = encode_frame(frame);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(port);
    ::sendto(fd_, bytes.data(), bytes.size(), 0,
             reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  }

  // timeout_ms <= 0 polls without blocking.
  std::optional<BridgeFrame> recv_frame(int timeout_ms) {
    int flags = 0;
    if (timeout_ms <= 0) {
      flags = MSG_DONTWAIT;
    } else {
      timeval tv{};
      tv.tv_sec = timeout_ms / 1000;
      tv.tv_usec = (timeout_ms % 1000) * 1000;
      ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    }
    std::uint8_t buf[64];
    const ssize_t got = ::recv(fd_, buf, sizeof(buf), flags);
    if (got < 0) return std::nullopt;
    return decode_frame(buf, static_cast<std::size_t>(got));
  }

 private:
  int fd_;
};

// Wall-clock demo of the bridge over real datagrams: the station process
// logic and one thread per robot exchange the same frame bytes as the
// in-process transport. Timing depends on the host scheduler, so this mode
// is for demos only and is not exercised by the deterministic tests.
template <typename ActFn>
void run_bridge_udp_demo(const Env& env, ActFn&& policy,
                         const BridgeConfig& cfg, long duration_ticks,
                         std::uint64_t seed, std::uint16_t base_port) {
  cfg.validate();
  const int n = env.config().n_agents;
  const int ticks_per_sim =
      std::max(1, static_cast<int>(std::lround(env.config().dt / cfg.robot.dt)));

  Rng base(seed);
  WorldState sim = env.reset_with_rng(base.split(0));
  Rng policy_rng = base.split(1);

  std::atomic<bool> stop{false};
  std::vector<std::thread> threads;
  const std::uint16_t station_port = base_port;

  for (int i = 0; i < n; ++i) {
    const Pose start{sim.pos[static_cast<std::size_t>(i)].x * cfg.scale,
                     sim.pos[static_cast<std::size_t>(i)].y * cfg.scale, 0.0};
    threads.emplace_back([i, start, &cfg, &stop, station_port, base_port] {
      UdpSocket sock;
      sock.bind_port(static_cast<std::uint16_t>(base_port + 1 + i));
      RobotState r;
      r.pose = start;
      r.estimate = start;
      SeqGate gate;
      std::uint32_t report_seq = 0;
      while (!stop.load()) {
        const auto t0 = std::chrono::steady_clock::now();
        while (auto f = sock.recv_frame(0)) {
          if (f->msg_type == MsgType::Waypoint &&
              f->robot_id == static_cast<std::uint8_t>(i) &&
              gate.accept(f->seq)) {
            r.waypoint = Vec2{f->x_mm / 1000.0, f->y_mm / 1000.0};
            r.has_waypoint = true;
          }
        }
        drive_tick(r, cfg.robot, cfg.robot.dt);
        BridgeFrame rep;
        rep.msg_type = MsgType::PoseReport;
        rep.robot_id = static_cast<std::uint8_t>(i);
        rep.seq = ++report_seq;
        rep.x_mm = static_cast<std::int32_t>(std::lround(r.pose.x * 1000.0));
        rep.y_mm = static_cast<std::int32_t>(std::lround(r.pose.y * 1000.0));
        rep.theta_mrad =
            static_cast<std::int32_t>(std::lround(r.pose.theta * 1000.0));
        sock.send_frame(station_port, rep);
        std::this_thread::sleep_until(
            t0 + std::chrono::microseconds(
                     static_cast<long>(cfg.robot.dt * 1e6)));
      }
    });
  }

  UdpSocket station;
  station.bind_port(station_port);
  std::vector<std::uint32_t> waypoint_seq(static_cast<std::size_t>(n), 0);
  std::vector<Pose> last_report(static_cast<std::size_t>(n));
  long reports = 0;
  for (long tick = 0; tick < duration_ticks; ++tick) {
    const auto t0 = std::chrono::steady_clock::now();
    if (tick % ticks_per_sim == 0) {
      if (tick > 0) {
        const auto actions = policy(env, sim, policy_rng);
        env.step(sim, actions);
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
        station.send_frame(static_cast<std::uint16_t>(base_port + 1 + i), f);
      }
    }
    while (auto f = station.recv_frame(0)) {
      if (f->msg_type == MsgType::PoseReport && f->robot_id < n) {
        last_report[f->robot_id] =
            Pose{f->x_mm / 1000.0, f->y_mm / 1000.0, f->theta_mrad / 1000.0};
        ++reports;
      }
    }
    std::this_thread::sleep_until(
        t0 + std::chrono::microseconds(static_cast<long>(cfg.robot.dt * 1e6)));
  }
  stop.store(true);
  for (auto& t : threads) t.join();

  std::printf("udp demo: %ld ticks, %d robots, %ld pose reports received\n",
              duration_ticks, n, reports);
  for (int i = 0; i < n; ++i) {
    const double tx = sim.pos[static_cast<std::size_t>(i)].x * cfg.scale;
    const double ty = sim.pos[static_cast<std::size_t>(i)].y * cfg.scale;
    const auto& p = last_report[static_cast<std::size_t>(i)];
    std::printf("  robot %d: last reported pose (%.3f, %.3f), twin at (%.3f, %.3f)\n",
                i, p.x, p.y, tx, ty);
  }
}

}  // namespace abmt::bridge
