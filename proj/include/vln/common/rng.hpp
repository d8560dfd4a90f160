#pragma once

// Counter-based random streams.
//
// A stream is identified by a 64-bit key. Draw i (i = 1, 2, ...) of a stream is
// mix64(key + i * 0x9E3779B97F4A7C15), where mix64 is the SplitMix64 finalizer.
// Keys for sub-streams are derived with derive(parent, tag) =
// mix64(parent ^ mix64(tag + 0x9E3779B97F4A7C15)), so any (seed, kind, epoch,
// index) tuple maps to an independent stream that is reproducible without
// generating any earlier stream.

#include <cstdint>
#include <initializer_list>

namespace vln {

class CounterRng {
 public:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  explicit constexpr CounterRng(std::uint64_t key) : key_(key) {}

  static constexpr std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  static constexpr std::uint64_t derive(std::uint64_t parent, std::uint64_t tag) {
    return mix64(parent ^ mix64(tag + kGolden));
  }

  // Folds the tags left to right starting from `seed`.
  static constexpr std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t key = mix64(seed + kGolden);
    for (auto tag : tags) key = derive(key, tag);
    return key;
  }

  CounterRng split(std::uint64_t tag) const { return CounterRng(derive(key_, tag)); }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() { return mix64(key_ + (++counter_) * kGolden); }

  // 53-bit uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, bound) by rejection (no modulo bias).
  std::uint64_t below(std::uint64_t bound);

  // Box-Muller, one value per call (the partner value is discarded).
  double normal();

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// FNV-1a, 64 bit.
std::uint64_t fnv1a64(const void* data, std::size_t size);

}  // namespace vln
