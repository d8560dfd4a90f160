#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   magic       8 bytes  "VLNCKPT\0"
//   version     u32      kCheckpointVersion
//   config_hash u64      hash of the model configuration text
//   count       u64      number of entries
//   entries, each:
//     name_len  u32, name bytes (UTF-8, no terminator)
//     rank      u32
//     extents   rank x i64
//     values    product(extents) x f32
//
// Double-precision tensors are stored rounded to f32.

#include <cstdint>
#include <string>
#include <vector>

#include "vln/autograd/parameter.hpp"
#include "vln/common/binary_io.hpp"

namespace vln {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t config_hash = 0;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

template <typename T>
void append_entries(Checkpoint& checkpoint, const std::vector<NamedTensor<T>>& tensors,
                    const std::string& prefix = "");

// Copies matching entries into the store's parameters and buffers. Every
// tensor in the store must be present with the same shape; the config hash
// must match.
template <typename T>
void restore_store(ParameterStore<T>& store, const Checkpoint& checkpoint,
                   std::uint64_t expected_config_hash);

template <typename T>
void copy_entry(const CheckpointEntry& entry, Tensor<T>& target);

}  // namespace vln
