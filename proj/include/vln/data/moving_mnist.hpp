#pragma once

// Moving MNIST: two digits bouncing inside a 64x64 frame for 20 frames.
//
// Motion model: each digit's top-left corner starts uniformly in [0, 36]^2,
// moves in a uniform random direction at a speed drawn from [2, 5] px/frame,
// and reflects off the walls (the offending velocity component is negated and
// the overshoot mirrored). Sprites are pasted at the rounded position and the
// two digits are combined with a pixel-wise maximum.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vln/common/rng.hpp"
#include "vln/data/mnist.hpp"

namespace vln::data {

inline constexpr int kFrameSize = 64;
inline constexpr int kFramePixels = kFrameSize * kFrameSize;
inline constexpr int kSequenceFrames = 20;
inline constexpr int kPastFrames = 10;
inline constexpr int kFutureFrames = kSequenceFrames - kPastFrames;
inline constexpr int kDigitsPerSequence = 2;
inline constexpr double kPositionLimit = kFrameSize - kDigitSize;  // 36

enum class SplitKind : std::uint64_t { kTrain = 0, kValidation = 1, kTest = 2 };

const char* split_name(SplitKind kind);
SplitKind parse_split(const std::string& name);

struct SeedProvenance {
  std::uint64_t global_seed = 0;
  SplitKind kind = SplitKind::kTrain;
  std::uint64_t epoch = 0;
  std::uint64_t index = 0;
};

struct VideoSequence {
  std::vector<float> pixels;  // kSequenceFrames x 64 x 64
  SeedProvenance provenance;

  std::span<const float> frame(int t) const {
    return std::span<const float>(pixels).subspan(std::size_t(t) * kFramePixels, kFramePixels);
  }
};

struct DigitTrajectory {
  double x = 0, y = 0;    // top-left corner, pixels
  double vx = 0, vy = 0;  // pixels per frame

  void advance(double limit = kPositionLimit);
  double speed() const;
};

struct GeneratorOptions {
  double min_speed = 2.0;
  double max_speed = 5.0;
};

// Per-frame trajectory states of both digits, for inspection in tests.
using SequenceTrace = std::array<std::array<DigitTrajectory, kSequenceFrames>, kDigitsPerSequence>;

VideoSequence generate_sequence(std::span<const DigitSprite> pool, CounterRng& rng,
                                const GeneratorOptions& options = {}, SequenceTrace* trace = nullptr);

// Stream key for sequence `index`; test streams ignore the epoch.
std::uint64_t sequence_key(const SeedProvenance& provenance);

struct StreamSizes {
  std::size_t train = 10000;
  std::size_t validation = 1000;
  std::size_t test = 10000;
};

// Random-access view of one epoch's sequences. Sequence i is a pure function
// of (global seed, kind, epoch, i), so order and parallelism do not matter.
class EpochStream {
 public:
  EpochStream(std::span<const DigitSprite> pool, SeedProvenance base, std::size_t size,
              GeneratorOptions options);

  std::size_t size() const { return size_; }
  VideoSequence at(std::size_t index) const;
  SplitKind kind() const { return base_.kind; }

 private:
  std::span<const DigitSprite> pool_;
  SeedProvenance base_;
  std::size_t size_;
  GeneratorOptions options_;
};

class MovingMnist {
 public:
  MovingMnist(std::vector<DigitSprite> train_pool, std::vector<DigitSprite> validation_pool,
              std::vector<DigitSprite> test_pool, std::uint64_t seed, StreamSizes sizes = {},
              GeneratorOptions options = {});

  // Reads the four IDX files from `dir` and holds out a stratified 20% of the
  // training digits for validation.
  static MovingMnist from_directory(const std::string& dir, std::uint64_t seed,
                                    StreamSizes sizes = {}, GeneratorOptions options = {});

  EpochStream stream(SplitKind kind, std::uint64_t epoch) const;

  const StreamSizes& sizes() const { return sizes_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<DigitSprite>& pool(SplitKind kind) const;

 private:
  std::vector<DigitSprite> train_, validation_, test_;
  std::uint64_t seed_;
  StreamSizes sizes_;
  GeneratorOptions options_;
};

inline constexpr const char* kTrainImagesFile = "train-images-idx3-ubyte";
inline constexpr const char* kTrainLabelsFile = "train-labels-idx1-ubyte";
inline constexpr const char* kTestImagesFile = "t10k-images-idx3-ubyte";
inline constexpr const char* kTestLabelsFile = "t10k-labels-idx1-ubyte";
inline constexpr double kValidationFraction = 0.2;

}  // namespace vln::data
