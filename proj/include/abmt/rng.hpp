#pragma once

#include <cmath>
#include <cstdint>

namespace abmt {

// Philox4x32-10 counter-based generator (Salmon et al., "Parallel Random
// Numbers: As Easy as 1, 2, 3"). Chosen because it is seedable, splittable
// into independent streams, and produces the same sequence on every
// platform; replay determinism in the environment and trainers depends on
// that. State is a 64-bit key plus a (stream, position) counter pair.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : k0_(static_cast<std::uint32_t>(seed)),
        k1_(static_cast<std::uint32_t>(seed >> 32)),
        stream_(stream & kStreamMask),
        pos_(0),
        buf_{},
        buf_pos_(4),
        have_cached_normal_(false),
        cached_normal_(0.0) {}

  std::uint32_t next_u32() {
    if (buf_pos_ == 4) refill();
    return buf_[buf_pos_++];
  }

  std::uint64_t next_u64() {
    const std::uint64_t lo = next_u32();
    const std::uint64_t hi = next_u32();
    return (hi << 32) | lo;
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n). n must be > 0. Uses rejection to stay unbiased.
  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - ~std::uint64_t{0} % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r < limit) return r % n;
    }
  }

  // Standard normal via Box-Muller. The second draw of each pair is cached,
  // so draws stay deterministic per stream.
  double normal() {
    if (have_cached_normal_) {
      have_cached_normal_ = false;
      return cached_normal_;
    }
    // u1 in (0, 1] so that log(u1) is finite.
    const double u1 =
        static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    cached_normal_ = r * std::sin(a);
    have_cached_normal_ = true;
    return r * std::cos(a);
  }

  // Derives an independent child generator. Children with distinct ids are
  // distinct streams; derivation blocks live in a reserved counter region
  // (top stream bit set) that normal generation never touches.
  Rng split(std::uint64_t child_id) const {
    const std::uint64_t derive_stream = child_id | ~kStreamMask;
    std::uint32_t c[4] = {
        static_cast<std::uint32_t>(stream_),
        static_cast<std::uint32_t>(stream_ >> 32),
        static_cast<std::uint32_t>(derive_stream),
        static_cast<std::uint32_t>(derive_stream >> 32),
    };
    block(c, k0_, k1_);
    Rng child;
    child.k0_ = c[0];
    child.k1_ = c[1];
    child.stream_ =
        ((static_cast<std::uint64_t>(c[3]) << 32) | c[2]) & kStreamMask;
    return child;
  }

  bool operator==(const Rng& o) const {
    return k0_ == o.k0_ && k1_ == o.k1_ && stream_ == o.stream_ &&
           pos_ == o.pos_ && buf_pos_ == o.buf_pos_ &&
           have_cached_normal_ == o.have_cached_normal_;
  }

 private:
  static constexpr std::uint64_t kStreamMask = 0x7fffffffffffffffULL;

  static void block(std::uint32_t c[4], std::uint32_t k0, std::uint32_t k1) {
    constexpr std::uint32_t kMul0 = 0xD2511F53u;
    constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
      const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
      const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
      const std::uint32_t n0 = hi1 ^ c[1] ^ k0;
      const std::uint32_t n1 = lo1;
      const std::uint32_t n2 = hi0 ^ c[3] ^ k1;
      const std::uint32_t n3 = lo0;
      c[0] = n0;
      c[1] = n1;
      c[2] = n2;
      c[3] = n3;
      k0 += kWeyl0;
      k1 += kWeyl1;
    }
  }

  void refill() {
    std::uint32_t c[4] = {
        static_cast<std::uint32_t>(pos_),
        static_cast<std::uint32_t>(pos_ >> 32),
        static_cast<std::uint32_t>(stream_),
        static_cast<std::uint32_t>(stream_ >> 32),
    };
    block(c, k0_, k1_);
    buf_[0] = c[0];
    buf_[1] = c[1];
    buf_[2] = c[2];
    buf_[3] = c[3];
    buf_pos_ = 0;
    ++pos_;
  }

  std::uint32_t k0_, k1_;
  std::uint64_t stream_;
  std::uint64_t pos_;
  std::uint32_t buf_[4];
  int buf_pos_;
  bool have_cached_normal_;
  double cached_normal_;
};

}  // namespace abmt
