#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "abmt/policy.hpp"
#include "abmt/scenario.hpp"

namespace abmt {

// Binary checkpoint layout (all integers little-endian):
//   magic "ABMT" | u32 version | u32 variant | u64 scenario_fingerprint |
//   u32 n_tensors | n x { u32 name_len | name bytes | u32 rank |
//                         u32 dims[rank] | f32 values[numel] }
// Tensors are stored as 32-bit floats regardless of the training precision.
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

class Reader {
 public:
  Reader(const std::string& data, const std::string& path)
      : data_(data), path_(path) {}

  std::uint32_t u32(const char* field) {
    need(4, field);
    const unsigned char* p =
        reinterpret_cast<const unsigned char*>(data_.data()) + pos_;
    pos_ += 4;
    return static_cast<std::uint32_t>(p[0]) |
           (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
  }

  std::uint64_t u64(const char* field) {
    const std::uint64_t lo = u32(field);
    const std::uint64_t hi = u32(field);
    return (hi << 32) | lo;
  }

  std::string bytes(std::size_t n, const char* field) {
    need(n, field);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n, const char* field) {
    if (pos_ + n > data_.size())
      throw IoError("checkpoint truncated at field \"" + std::string(field) +
                    "\": " + path_);
  }
  const std::string& data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const PolicyBundle& bundle,
                                     std::uint64_t scenario_fp) {
  std::string out;
  out += "ABMT";
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(bundle.variant()));
  detail::put_u64(out, scenario_fp);
  const ParamSet& ps = bundle.params();
  detail::put_u32(out, static_cast<std::uint32_t>(ps.size()));
  for (int i = 0; i < ps.size(); ++i) {
    const std::string& name = ps.name(i);
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    const Tensor& t = ps.tensor(i);
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (double x : t.v)
      detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  }
  return out;
}

inline void save_checkpoint(const PolicyBundle& bundle,
                            std::uint64_t scenario_fp,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  const std::string data = encode_checkpoint(bundle, scenario_fp);
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed for checkpoint: " + path);
}

struct CheckpointHeader {
  EncoderVariant variant = EncoderVariant::FlatMlp;
  std::uint64_t scenario_fingerprint = 0;
};

// Reads just the header so callers can construct a matching bundle first.
inline CheckpointHeader read_checkpoint_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  detail::Reader rd(data, path);
  if (rd.bytes(4, "magic") != "ABMT")
    throw IoError("checkpoint magic mismatch in " + path);
  const std::uint32_t version = rd.u32("version");
  if (version != kCheckpointVersion)
    throw IoError("checkpoint version mismatch in " + path + " (got " +
                  std::to_string(version) + ")");
  const std::uint32_t variant = rd.u32("variant");
  if (variant > 1) throw IoError("checkpoint variant tag invalid in " + path);
  CheckpointHeader h;
  h.variant = static_cast<EncoderVariant>(variant);
  h.scenario_fingerprint = rd.u64("scenario_fingerprint");
  return h;
}

// Loads a checkpoint into a bundle built for `env`. The scenario fingerprint
// must match; every stored tensor must exist with the same shape.
inline PolicyBundle load_checkpoint(const std::string& path, const Env& env,
                                    const PolicyArch& arch) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  detail::Reader rd(data, path);
  if (rd.bytes(4, "magic") != "ABMT")
    throw IoError("checkpoint magic mismatch in " + path);
  const std::uint32_t version = rd.u32("version");
  if (version != kCheckpointVersion)
    throw IoError("checkpoint version mismatch in " + path + " (got " +
                  std::to_string(version) + ")");
  const std::uint32_t variant_tag = rd.u32("variant");
  if (variant_tag > 1)
    throw IoError("checkpoint variant tag invalid in " + path);
  const std::uint64_t fp = rd.u64("scenario_fingerprint");
  const std::uint64_t expect_fp = scenario_fingerprint(env.config());
  if (fp != expect_fp)
    throw IoError("checkpoint scenario_fingerprint mismatch in " + path +
                  " (checkpoint was trained on a different scenario)");

  PolicyBundle bundle = PolicyBundle::create_empty(
      env, static_cast<EncoderVariant>(variant_tag), arch);
  ParamSet& ps = bundle.params();
  const std::uint32_t n_tensors = rd.u32("n_tensors");
  std::set<std::string> seen;
  for (std::uint32_t k = 0; k < n_tensors; ++k) {
    const std::uint32_t name_len = rd.u32("name_len");
    const std::string name = rd.bytes(name_len, "name");
    if (!ps.has(name))
      throw IoError("checkpoint has unknown tensor name \"" + name + "\" in " +
                    path);
    const std::uint32_t rank = rd.u32("rank");
    std::vector<int> dims;
    for (std::uint32_t d = 0; d < rank; ++d)
      dims.push_back(static_cast<int>(rd.u32("dims")));
    Tensor& dst = ps.by_name(name);
    if (dst.shape != dims)
      throw IoError("checkpoint tensor \"" + name + "\" has shape " +
                    shape_str(dims) + ", expected " + shape_str(dst.shape) +
                    " in " + path);
    for (long i = 0; i < dst.numel(); ++i) {
      const std::uint32_t bits = rd.u32("values");
      dst.v[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    seen.insert(name);
  }
  if (static_cast<int>(seen.size()) != ps.size())
    throw IoError("checkpoint is missing tensors (" +
                  std::to_string(seen.size()) + " of " +
                  std::to_string(ps.size()) + ") in " + path);
  if (!rd.at_end())
    throw IoError("checkpoint has trailing bytes: " + path);
  return bundle;
}

}  // namespace abmt
