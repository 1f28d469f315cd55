#pragma once

#include <cstdint>
#include <stdexcept>

#include "abmt/common.hpp"

namespace abmt::bridge {

// Reflected binary code: encode(n) = n XOR (n >> 1); adjacent values differ
// in exactly one bit.
inline std::uint32_t gray_encode(std::uint32_t n, int bits) {
  if (bits < 1 || bits > 31)
    throw std::invalid_argument("gray_encode: bits must be in [1, 31]");
  if (n >= (1u << bits))
    throw std::invalid_argument("gray_encode: value out of range");
  return n ^ (n >> 1);
}

inline std::uint32_t gray_decode(std::uint32_t code, int bits) {
  if (bits < 1 || bits > 31)
    throw std::invalid_argument("gray_decode: bits must be in [1, 31]");
  if (code >= (1u << bits))
    throw std::invalid_argument("gray_decode: code out of range");
  std::uint32_t n = code;
  for (int shift = 1; shift < bits; shift <<= 1) n ^= n >> shift;
  return n;
}

// Projection schedule: one bit-plane per frame, the b x-planes first, then
// the b y-planes, repeating. A complete position fix needs 2b frames.
struct GrayCodeSchedule {
  int bits = 10;
  int frame_period = 1;   // ticks per projected frame
  double arena_extent = 1.0;  // full width of the robot arena, meters

  void validate() const {
    if (bits < 1 || bits > 20)
      throw ConfigError("gray schedule: bits must be in [1, 20]");
    if (frame_period < 1)
      throw ConfigError("gray schedule: frame_period must be >= 1");
    if (arena_extent <= 0.0)
      throw ConfigError("gray schedule: arena_extent must be > 0");
  }

  int cells() const { return 1 << bits; }
  double cell_size() const { return arena_extent / cells(); }
  int frames_per_fix() const { return 2 * bits; }

  // Phase within the 2b-frame cycle at a given tick.
  int phase(long tick) const {
    return static_cast<int>((tick / frame_period) % frames_per_fix());
  }

  // Cell index along one axis for a coordinate in [-extent/2, extent/2].
  int cell_of(double coord) const {
    const double shifted = (coord + arena_extent * 0.5) / cell_size();
    int c = static_cast<int>(shifted);
    if (c < 0) c = 0;
    if (c >= cells()) c = cells() - 1;
    return c;
  }

  double cell_center(int cell) const {
    return -arena_extent * 0.5 + (cell + 0.5) * cell_size();
  }
};

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
};

// Per-robot decoder state for the projected pattern. Samples one bit-plane
// per tick from the robot's true position; after a full 2b-frame cycle the
// accumulated words decode to a cell fix. Between fixes the caller
// dead-reckons the estimate from commanded wheel speeds.
class GrayLocalizer {
 public:
  explicit GrayLocalizer(const GrayCodeSchedule& schedule)
      : sched_(schedule) {
    sched_.validate();
  }

  const GrayCodeSchedule& schedule() const { return sched_; }

  // Samples the scheduled bit at the robot's current true position. Returns
  // true when this tick completed a fix, in which case `estimate` x/y are
  // snapped to the decoded cell center.
  bool tick(long tick_index, const Pose& true_pose, Pose& estimate) {
    const int p = sched_.phase(tick_index);
    const int b = sched_.bits;
    if (p < b) {
      const std::uint32_t code =
          gray_encode(static_cast<std::uint32_t>(sched_.cell_of(true_pose.x)), b);
      set_bit(x_word_, b - 1 - p, (code >> (b - 1 - p)) & 1u);
    } else {
      const int q = p - b;
      const std::uint32_t code =
          gray_encode(static_cast<std::uint32_t>(sched_.cell_of(true_pose.y)), b);
      set_bit(y_word_, b - 1 - q, (code >> (b - 1 - q)) & 1u);
    }
    ++frames_seen_;
    if (p == sched_.frames_per_fix() - 1 &&
        frames_seen_ >= sched_.frames_per_fix()) {
      estimate.x = sched_.cell_center(
          static_cast<int>(gray_decode(x_word_, b)));
      estimate.y = sched_.cell_center(
          static_cast<int>(gray_decode(y_word_, b)));
      return true;
    }
    return false;
  }

 private:
  static void set_bit(std::uint32_t& word, int bit, std::uint32_t value) {
    if (value)
      word |= (1u << bit);
    else
      word &= ~(1u << bit);
  }

  GrayCodeSchedule sched_;
  std::uint32_t x_word_ = 0;
  std::uint32_t y_word_ = 0;
  long frames_seen_ = 0;
};

}  // namespace abmt::bridge
