#include "vln/data/moving_mnist.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <stdexcept>

namespace vln::data {

const char* split_name(SplitKind kind) {
  switch (kind) {
    case SplitKind::kTrain: return "train";
    case SplitKind::kValidation: return "val";
    case SplitKind::kTest: return "test";
  }
  return "?";
}

SplitKind parse_split(const std::string& name) {
  if (name == "train") return SplitKind::kTrain;
  if (name == "val" || name == "validation") return SplitKind::kValidation;
  if (name == "test") return SplitKind::kTest;
  throw std::invalid_argument("unknown split '" + name + "' (expected train, val or test)");
}

namespace {
void reflect(double& pos, double& vel, double limit) {
  while (pos < 0.0 || pos > limit) {
    if (pos < 0.0) {
      pos = -pos;
      vel = -vel;
    } else {
      pos = 2.0 * limit - pos;
      vel = -vel;
    }
  }
}
}  // namespace

void DigitTrajectory::advance(double limit) {
  x += vx;
  y += vy;
  reflect(x, vx, limit);
  reflect(y, vy, limit);
}

double DigitTrajectory::speed() const { return std::hypot(vx, vy); }

VideoSequence generate_sequence(std::span<const DigitSprite> pool, CounterRng& rng,
                                const GeneratorOptions& options, SequenceTrace* trace) {
  if (pool.empty()) throw std::invalid_argument("generate_sequence: empty sprite pool");
  VideoSequence seq;
  seq.pixels.assign(std::size_t{kSequenceFrames} * kFramePixels, 0.0f);
  for (int d = 0; d < kDigitsPerSequence; ++d) {
    const DigitSprite& sprite = pool[rng.below(pool.size())];
    DigitTrajectory traj;
    traj.x = rng.uniform(0.0, kPositionLimit);
    traj.y = rng.uniform(0.0, kPositionLimit);
    const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double speed = rng.uniform(options.min_speed, options.max_speed);
    traj.vx = speed * std::cos(theta);
    traj.vy = speed * std::sin(theta);
    for (int t = 0; t < kSequenceFrames; ++t) {
      if (t > 0) traj.advance();
      if (trace) (*trace)[d][t] = traj;
      const long col = std::lround(traj.x), row = std::lround(traj.y);
      float* frame = seq.pixels.data() + std::size_t(t) * kFramePixels;
      for (int r = 0; r < kDigitSize; ++r) {
        float* dst = frame + (row + r) * kFrameSize + col;
        const float* src = sprite.pixels.data() + r * kDigitSize;
        for (int c = 0; c < kDigitSize; ++c) dst[c] = std::max(dst[c], src[c]);
      }
    }
  }
  return seq;
}

std::uint64_t sequence_key(const SeedProvenance& p) {
  const std::uint64_t epoch = p.kind == SplitKind::kTest ? 0 : p.epoch;
  return CounterRng::derive(p.global_seed, {static_cast<std::uint64_t>(p.kind), epoch, p.index});
}

EpochStream::EpochStream(std::span<const DigitSprite> pool, SeedProvenance base, std::size_t size,
                         GeneratorOptions options)
    : pool_(pool), base_(base), size_(size), options_(options) {
  if (base_.kind == SplitKind::kTest) base_.epoch = 0;
}

VideoSequence EpochStream::at(std::size_t index) const {
  if (index >= size_) throw std::out_of_range("sequence index beyond stream size");
  SeedProvenance p = base_;
  p.index = index;
  CounterRng rng(sequence_key(p));
  auto seq = generate_sequence(pool_, rng, options_);
  seq.provenance = p;
  return seq;
}

MovingMnist::MovingMnist(std::vector<DigitSprite> train_pool,
                         std::vector<DigitSprite> validation_pool,
                         std::vector<DigitSprite> test_pool, std::uint64_t seed,
                         StreamSizes sizes, GeneratorOptions options)
    : train_(std::move(train_pool)),
      validation_(std::move(validation_pool)),
      test_(std::move(test_pool)),
      seed_(seed),
      sizes_(sizes),
      options_(options) {}

MovingMnist MovingMnist::from_directory(const std::string& dir, std::uint64_t seed,
                                        StreamSizes sizes, GeneratorOptions options) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  auto train = load_mnist((root / kTrainImagesFile).string(), (root / kTrainLabelsFile).string());
  auto test = load_mnist((root / kTestImagesFile).string(), (root / kTestLabelsFile).string());
  auto split = stratified_split(train, kValidationFraction, seed);
  return MovingMnist(std::move(split.train), std::move(split.validation), std::move(test), seed,
                     sizes, options);
}

const std::vector<DigitSprite>& MovingMnist::pool(SplitKind kind) const {
  switch (kind) {
    case SplitKind::kTrain: return train_;
    case SplitKind::kValidation: return validation_;
    case SplitKind::kTest: return test_;
  }
  throw std::invalid_argument("unknown split kind");
}

EpochStream MovingMnist::stream(SplitKind kind, std::uint64_t epoch) const {
  const std::size_t size = kind == SplitKind::kTrain        ? sizes_.train
                           : kind == SplitKind::kValidation ? sizes_.validation
                                                            : sizes_.test;
  return EpochStream(pool(kind), SeedProvenance{seed_, kind, epoch, 0}, size, options_);
}

}  // namespace vln::data
