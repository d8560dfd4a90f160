#include "vln/autograd/checkpoint.hpp"

#include <algorithm>
#include <cstring>

namespace vln {

namespace {
constexpr char kMagic[8] = {'V', 'L', 'N', 'C', 'K', 'P', 'T', '\0'};
}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.name == name; });
  return it == entries.end() ? nullptr : &*it;
}

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  std::string out(kMagic, sizeof(kMagic));
  binary::put_le<std::uint32_t>(out, checkpoint.version);
  binary::put_le<std::uint64_t>(out, checkpoint.config_hash);
  binary::put_le<std::uint64_t>(out, checkpoint.entries.size());
  for (const auto& e : checkpoint.entries) {
    if (shape_numel(e.shape) != static_cast<std::int64_t>(e.values.size())) {
      throw CheckpointError("entry " + e.name + ": shape " + shape_str(e.shape) +
                            " does not match value count");
    }
    binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    binary::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto extent : e.shape) binary::put_le<std::int64_t>(out, extent);
    for (float v : e.values) binary::put_le<float>(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  try {
    binary::Reader in(bytes);
    if (std::memcmp(in.bytes(sizeof(kMagic)).data(), kMagic, sizeof(kMagic)) != 0) {
      throw CheckpointError("not a checkpoint file (bad magic)");
    }
    Checkpoint ckpt;
    ckpt.version = in.le<std::uint32_t>();
    if (ckpt.version != kCheckpointVersion) {
      throw CheckpointError("unsupported checkpoint version " + std::to_string(ckpt.version));
    }
    ckpt.config_hash = in.le<std::uint64_t>();
    const auto count = in.le<std::uint64_t>();
    for (std::uint64_t i = 0; i < count; ++i) {
      CheckpointEntry e;
      const auto name_len = in.le<std::uint32_t>();
      e.name = std::string(in.bytes(name_len));
      const auto rank = in.le<std::uint32_t>();
      if (rank > 8) throw CheckpointError("entry " + e.name + ": implausible rank");
      for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(in.le<std::int64_t>());
      const auto n = shape_numel(e.shape);
      if (static_cast<std::uint64_t>(n) * 4 > in.remaining()) {
        throw CheckpointError("entry " + e.name + ": truncated values");
      }
      e.values.resize(static_cast<std::size_t>(n));
      for (auto& v : e.values) v = in.le<float>();
      ckpt.entries.push_back(std::move(e));
    }
    if (in.remaining() != 0) throw CheckpointError("trailing bytes after last entry");
    return ckpt;
  } catch (const binary::FormatError& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  } catch (const ShapeError& e) {
    throw CheckpointError(std::string("corrupt checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  binary::write_file(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::string& path) {
  try {
    return decode_checkpoint(binary::read_file(path));
  } catch (const CheckpointError& e) {
    throw CheckpointError(path + ": " + e.what());
  }
}

template <typename T>
void append_entries(Checkpoint& checkpoint, const std::vector<NamedTensor<T>>& tensors,
                    const std::string& prefix) {
  for (const auto& nt : tensors) {
    CheckpointEntry e;
    e.name = prefix + nt.name;
    e.shape = nt.tensor.shape();
    auto values = nt.tensor.values();
    e.values.assign(values.begin(), values.end());
    checkpoint.entries.push_back(std::move(e));
  }
}

template <typename T>
void copy_entry(const CheckpointEntry& entry, Tensor<T>& target) {
  if (entry.shape != target.shape()) {
    throw CheckpointError("entry " + entry.name + " has shape " + shape_str(entry.shape) +
                          ", expected " + shape_str(target.shape()));
  }
  auto dst = target.mutable_values();
  std::copy(entry.values.begin(), entry.values.end(), dst.begin());
}

template <typename T>
void restore_store(ParameterStore<T>& store, const Checkpoint& checkpoint,
                   std::uint64_t expected_config_hash) {
  if (checkpoint.config_hash != expected_config_hash) {
    throw CheckpointError("checkpoint was written for a different model configuration");
  }
  for (auto nt : store.all()) {
    const auto* entry = checkpoint.find(nt.name);
    if (!entry) throw CheckpointError("checkpoint is missing " + nt.name);
    copy_entry(*entry, nt.tensor);
  }
}

template void append_entries<float>(Checkpoint&, const std::vector<NamedTensor<float>>&, const std::string&);
template void append_entries<double>(Checkpoint&, const std::vector<NamedTensor<double>>&, const std::string&);
template void copy_entry<float>(const CheckpointEntry&, Tensor<float>&);
template void copy_entry<double>(const CheckpointEntry&, Tensor<double>&);
template void restore_store<float>(ParameterStore<float>&, const Checkpoint&, std::uint64_t);
template void restore_store<double>(ParameterStore<double>&, const Checkpoint&, std::uint64_t);

}  // namespace vln
