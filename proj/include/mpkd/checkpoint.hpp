#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mpkd/alignment.hpp"
#include "mpkd/encoder.hpp"

namespace mpkd {

/// Sidecar metadata stored next to a checkpoint as `<path>.json`.
struct CheckpointMeta {
  std::size_t dim = 0;
  std::size_t neighbors = 8;
  std::size_t layers = 1;
  std::vector<std::string> entities;
  std::vector<std::string> relations;
  std::string config_digest;
  std::uint64_t seed = 0;
  /// FNV-1a of the binary file; filled by save_checkpoint.
  std::string payload_digest;
};

struct Checkpoint {
  NetworkParams student;
  AlignParams align;
  CheckpointMeta meta;
};

/// Binary layout: "MPKD1", then the blocks entity_emb, relation_emb, transform,
/// attn, time_freq, temporal_WQ, temporal_WK, temporal_WV, cross_WQ, cross_WK, each
/// as u32 rows, u32 cols and rows*cols float32 values, all little-endian.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string checkpoint_bytes(const Checkpoint& ckpt);
std::string checkpoint_meta_json(const CheckpointMeta& meta);

}  // namespace mpkd
