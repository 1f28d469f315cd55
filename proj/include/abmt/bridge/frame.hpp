#pragma once

#include <array>
#include <cstdint>
#include <cstring>

#include "abmt/common.hpp"

namespace abmt::bridge {

enum class MsgType : std::uint8_t { Waypoint = 0, PoseReport = 1 };

// Wire message between the ground station and robots. Fixed 22-byte
// little-endian layout:
//   offset 0  u8  msg_type (0 waypoint, 1 pose report)
//   offset 1  u8  robot_id
//   offset 2  u32 seq        (strictly increasing per (robot_id, msg_type))
//   offset 6  u32 t_sim_ms
//   offset 10 i32 x_mm
//   offset 14 i32 y_mm
//   offset 18 i32 theta_mrad (0 in waypoints)
struct BridgeFrame {
  MsgType msg_type = MsgType::Waypoint;
  std::uint8_t robot_id = 0;
  std::uint32_t seq = 0;
  std::uint32_t t_sim_ms = 0;
  std::int32_t x_mm = 0;
  std::int32_t y_mm = 0;
  std::int32_t theta_mrad = 0;

  bool operator==(const BridgeFrame& o) const {
    return msg_type == o.msg_type && robot_id == o.robot_id && seq == o.seq &&
           t_sim_ms == o.t_sim_ms && x_mm == o.x_mm && y_mm == o.y_mm &&
           theta_mrad == o.theta_mrad;
  }
};

inline constexpr std::size_t kFrameSize = 22;

namespace detail {

inline void put_le32(std::uint8_t* p, std::uint32_t v) {
  p[0] = static_cast<std::uint8_t>(v);
  p[1] = static_cast<std::uint8_t>(v >> 8);
  p[2] = static_cast<std::uint8_t>(v >> 16);
  p[3] = static_cast<std::uint8_t>(v >> 24);
}

inline std::uint32_t get_le32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::array<std::uint8_t, kFrameSize> encode_frame(const BridgeFrame& f) {
  std::array<std::uint8_t, kFrameSize> out{};
  out[0] = static_cast<std::uint8_t>(f.msg_type);
  out[1] = f.robot_id;
  detail::put_le32(out.data() + 2, f.seq);
  detail::put_le32(out.data() + 6, f.t_sim_ms);
  detail::put_le32(out.data() + 10, static_cast<std::uint32_t>(f.x_mm));
  detail::put_le32(out.data() + 14, static_cast<std::uint32_t>(f.y_mm));
  detail::put_le32(out.data() + 18, static_cast<std::uint32_t>(f.theta_mrad));
  return out;
}

inline BridgeFrame decode_frame(const std::uint8_t* data, std::size_t len) {
  if (len != kFrameSize)
    throw IoError("frame length " + std::to_string(len) + ", expected " +
                  std::to_string(kFrameSize));
  if (data[0] > 1)
    throw IoError("frame msg_type " + std::to_string(data[0]) + " invalid");
  BridgeFrame f;
  f.msg_type = static_cast<MsgType>(data[0]);
  f.robot_id = data[1];
  f.seq = detail::get_le32(data + 2);
  f.t_sim_ms = detail::get_le32(data + 6);
  f.x_mm = static_cast<std::int32_t>(detail::get_le32(data + 10));
  f.y_mm = static_cast<std::int32_t>(detail::get_le32(data + 14));
  f.theta_mrad = static_cast<std::int32_t>(detail::get_le32(data + 18));
  return f;
}

// Per-stream monotonic sequence filter; receivers drop stale frames.
struct SeqGate {
  std::uint32_t last = 0;
  bool any = false;

  bool accept(std::uint32_t seq) {
    if (any && seq <= last) return false;
    last = seq;
    any = true;
    return true;
  }
};

}  // namespace abmt::bridge
