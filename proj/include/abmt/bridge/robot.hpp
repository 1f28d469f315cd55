#pragma once

#include <cmath>

#include "abmt/bridge/gray.hpp"
#include "abmt/common.hpp"

namespace abmt::bridge {

struct RobotParams {
  double wheel_base = 0.02;       // m
  double v_max = 0.1;             // m/s
  double omega_max = 6.0;         // rad/s
  double wheel_speed_max = 0.15;  // m/s per wheel
  double k_v = 2.0;
  double k_omega = 4.0;
  double deadband = 0.01;  // m; stop inside this radius of the waypoint
  double dt = 0.02;        // s per tick

  void validate() const {
    if (wheel_base <= 0.0 || v_max <= 0.0 || omega_max <= 0.0 ||
        wheel_speed_max <= 0.0 || dt <= 0.0)
      throw ConfigError("robot params must be positive");
  }
};

struct WheelCommand {
  double left = 0.0;
  double right = 0.0;
  double v = 0.0;
  double omega = 0.0;
};

struct RobotState {
  Pose pose;      // ground truth
  Pose estimate;  // localization output, dead-reckoned between fixes
  int estimate_age = 0;
  double wheel_left = 0.0;
  double wheel_right = 0.0;
  Vec2 waypoint;
  bool has_waypoint = false;
};

// Turn-then-drive proportional controller. Forward speed is gated by the
// bearing error (no reverse driving); wheel speeds are rescaled jointly when
// either exceeds the wheel limit so the v/omega ratio is preserved.
inline WheelCommand waypoint_controller(const Pose& pose, const Vec2& waypoint,
                                        const RobotParams& p) {
  WheelCommand cmd;
  const double dx = waypoint.x - pose.x;
  const double dy = waypoint.y - pose.y;
  const double d = std::sqrt(dx * dx + dy * dy);
  if (d < p.deadband) return cmd;  // stop
  const double alpha = wrap_angle(std::atan2(dy, dx) - pose.theta);
  double v = 0.0;
  if (std::abs(alpha) <= M_PI / 2.0)
    v = clamp(p.k_v * d * std::cos(alpha), 0.0, p.v_max);
  const double omega = clamp(p.k_omega * alpha, -p.omega_max, p.omega_max);
  double left = v - omega * p.wheel_base * 0.5;
  double right = v + omega * p.wheel_base * 0.5;
  const double mx = std::max(std::abs(left), std::abs(right));
  if (mx > p.wheel_speed_max) {
    const double s = p.wheel_speed_max / mx;
    left *= s;
    right *= s;
    v *= s;
  }
  cmd.left = left;
  cmd.right = right;
  cmd.v = v;
  cmd.omega = (right - left) / p.wheel_base;
  return cmd;
}

inline void integrate_unicycle(Pose& pose, double v, double omega, double dt) {
  pose.x += v * std::cos(pose.theta) * dt;
  pose.y += v * std::sin(pose.theta) * dt;
  pose.theta = wrap_angle(pose.theta + omega * dt);
}

// One control tick: command wheels from the pose estimate, integrate the
// true pose, and dead-reckon the estimate with the same commanded speeds.
inline void drive_tick(RobotState& r, const RobotParams& p, double dt) {
  if (dt <= 0.0) throw std::invalid_argument("drive_tick: dt must be > 0");
  WheelCommand cmd;
  if (r.has_waypoint) cmd = waypoint_controller(r.estimate, r.waypoint, p);
  r.wheel_left = cmd.left;
  r.wheel_right = cmd.right;
  integrate_unicycle(r.pose, cmd.v, cmd.omega, dt);
  integrate_unicycle(r.estimate, cmd.v, cmd.omega, dt);
}

}  // namespace abmt::bridge
