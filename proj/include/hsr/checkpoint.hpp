#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hsr/corpus.hpp"
#include "hsr/model.hpp"
#include "hsr/vocab.hpp"

namespace hsr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  EventConfig events;
  std::vector<std::string> items;  // external item ids in vocabulary order
  std::uint64_t seed = 0;
  int epoch = 0;
  ModelParams<float> params;
};

// Binary layout: magic "HSR1", u64 LE metadata length, UTF-8 JSON metadata
// (model config, events, dependencies, items, seed, epoch, version), u32 LE
// tensor count, then per tensor: u32 name length + name, u32 rank, u64
// extents, raw little-endian float32 data. The round trip is byte-exact.
void save_checkpoint(const ModelParams<float>& params, const EventConfig& events,
                     std::span<const std::string> items, std::uint64_t seed, int epoch,
                     const std::string& path);

// Rejects bad magic, truncation (with the failing byte offset), unsupported
// versions, and metadata whose vocabulary size disagrees with its tensors.
Checkpoint load_checkpoint(const std::string& path);

// The vocabulary a checkpoint was trained against, rebuilt from metadata.
Vocabulary checkpoint_vocab(const Checkpoint& ckpt);

}  // namespace hsr
