#pragma once
/**
 * @file checkpoint.hpp
 * @brief Binary policy checkpoints.
 *
 * Layout, all integers and floats little-endian:
 *
 *   char[8]  magic            "EVACPOL\0"
 *   u32      format_version   1
 *   u32      input_dim
 *   u32      num_individuals  N the policy was trained for
 *   f64      alpha            pseudo-gravitational exponent
 *   u8       encoder          0 = ff, 1 = grav
 *   u32      hidden_dim
 *   u32      hidden_layers
 *   u8       has_obs_norm
 *   u64      parameter_count
 *   f64[parameter_count]      PolicyParameters::blocks() order
 *   if has_obs_norm:
 *     f64 count, f64 clip, f64[input_dim] mean, f64[input_dim] var
 */

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "evac/policy.hpp"

namespace evac {

constexpr std::array<char, 8> kCheckpointMagic = {'E', 'V', 'A', 'C', 'P', 'O', 'L', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!is.read(reinterpret_cast<char*>(bytes.data()), sizeof(T)))
    throw CheckpointError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const PolicyParameters& p) {
  using detail::write_le;
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  write_le<std::uint32_t>(os, kCheckpointVersion);
  write_le<std::uint32_t>(os, p.spec.input_dim);
  write_le<std::uint32_t>(os, p.spec.num_individuals);
  write_le<double>(os, p.spec.alpha);
  write_le<std::uint8_t>(os, p.spec.encoder == EncoderKind::Gravity ? 1 : 0);
  write_le<std::uint32_t>(os, p.spec.hidden_dim);
  write_le<std::uint32_t>(os, p.spec.hidden_layers);
  write_le<std::uint8_t>(os, p.obs_norm.enabled() ? 1 : 0);
  write_le<std::uint64_t>(os, p.parameter_count());
  for (auto block : p.blocks())
    for (double v : block) write_le<double>(os, v);
  if (p.obs_norm.enabled()) {
    write_le<double>(os, p.obs_norm.count);
    write_le<double>(os, p.obs_norm.clip);
    for (double v : p.obs_norm.mean) write_le<double>(os, v);
    for (double v : p.obs_norm.var) write_le<double>(os, v);
  }
}

inline PolicyParameters read_checkpoint(std::istream& is) {
  using detail::read_le;
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic)
    throw CheckpointError("not a policy checkpoint (bad magic)");
  const auto version = read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  PolicySpec spec;
  spec.input_dim = read_le<std::uint32_t>(is);
  spec.num_individuals = read_le<std::uint32_t>(is);
  spec.alpha = read_le<double>(is);
  const auto encoder = read_le<std::uint8_t>(is);
  if (encoder > 1) throw CheckpointError("unknown encoder tag " + std::to_string(encoder));
  spec.encoder = encoder == 1 ? EncoderKind::Gravity : EncoderKind::FeedForward;
  spec.hidden_dim = read_le<std::uint32_t>(is);
  spec.hidden_layers = read_le<std::uint32_t>(is);
  const auto has_norm = read_le<std::uint8_t>(is);
  if (spec.input_dim == 0 || spec.input_dim > (1u << 20) || spec.hidden_dim == 0 ||
      spec.hidden_dim > 4096 || spec.hidden_layers == 0 || spec.hidden_layers > 64)
    throw CheckpointError("implausible checkpoint architecture");
  if (spec.input_dim != observation_size(spec.encoder, static_cast<int>(spec.num_individuals)))
    throw CheckpointError("checkpoint input_dim does not match its encoder and N");

  PolicyParameters p(spec);
  const auto count = read_le<std::uint64_t>(is);
  if (count != p.parameter_count())
    throw CheckpointError("checkpoint parameter count " + std::to_string(count) +
                          " does not match architecture (" +
                          std::to_string(p.parameter_count()) + ")");
  for (auto block : p.blocks())
    for (double& v : block) v = read_le<double>(is);
  if (has_norm != 0) {
    p.obs_norm.init(spec.input_dim);
    p.obs_norm.count = read_le<double>(is);
    p.obs_norm.clip = read_le<double>(is);
    for (double& v : p.obs_norm.mean) v = read_le<double>(is);
    for (double& v : p.obs_norm.var) v = read_le<double>(is);
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw CheckpointError("trailing bytes after checkpoint payload");
  return p;
}

inline void save_checkpoint(const std::filesystem::path& path, const PolicyParameters& p) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  write_checkpoint(os, p);
  os.flush();
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

inline PolicyParameters load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path.string());
  try {
    return read_checkpoint(is);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace evac
