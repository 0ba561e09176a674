#pragma once

// Checkpoint file format (little-endian):
//   "FSKP" | u32 version | u32 metadata length | UTF-8 JSON metadata |
//   u32 tensor count | per tensor: u16 name length, UTF-8 name, u8 rank,
//   rank x u32 dims, f32 payload.

#include <cstdint>
#include <string>
#include <vector>

#include "flatsurr/core/params.hpp"

namespace flatsurr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  int epoch = 0;
  std::uint64_t seed = 0;
  std::string optimizer;
  std::string config_hash;
};

struct Checkpoint {
  ParamSet<float> params;
  CheckpointMeta meta;
};

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
/// Throws BadMagic / Truncated on malformed input.
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);
/// Loads and verifies the architecture fingerprint and tensor shapes against
/// `graph`; throws FingerprintMismatch otherwise.
Checkpoint load_checkpoint(const std::string& path, const Graph& graph);

template <typename Scalar>
Checkpoint make_checkpoint(const ParamSet<Scalar>& params, CheckpointMeta meta) {
  return Checkpoint{params.template cast<float>(), std::move(meta)};
}

}  // namespace flatsurr
