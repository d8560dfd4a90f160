#pragma once

// Epoch loop over a run directory:
//
//   <dir>/config.ini
//   <dir>/metrics.csv
//   <dir>/checkpoints/<run-id>-epoch0003.ckpt
//   <dir>/checkpoints/<run-id>-best.ckpt     lowest validation mean so far
//
// A checkpoint holds the model parameters and buffers, the RMSprop
// accumulators ("rmsprop.*") and trainer counters ("trainer.*"). Sequences
// are pure functions of (seed, split, epoch, index) and the batch order of an
// epoch is keyed the same way, so resuming from an epoch checkpoint replays
// the remaining epochs exactly.

#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>

#include "vln/data/moving_mnist.hpp"
#include "vln/model/ladder_net.hpp"
#include "vln/train/config.hpp"
#include "vln/train/metrics.hpp"
#include "vln/train/rmsprop.hpp"

namespace vln::train {

class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& message, std::optional<std::filesystem::path> last_good)
      : std::runtime_error(message), last_good_(std::move(last_good)) {}
  const std::optional<std::filesystem::path>& last_good_checkpoint() const { return last_good_; }

 private:
  std::optional<std::filesystem::path> last_good_;
};

// Shuffled training indices of one epoch.
std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t size);

Checkpoint load_model_checkpoint(const std::filesystem::path& path, model::VideoLadderNet<float>& net);

class Trainer {
 public:
  using Net = model::VideoLadderNet<float>;

  Trainer(RunConfig config, const data::MovingMnist& data, std::filesystem::path run_dir, std::string run_id);

  // Loads the newest epoch checkpoint in the run directory; returns the
  // number of completed epochs (0 when starting fresh).
  int resume();

  // Trains up to config.train.epochs.
  void run(std::ostream* log = nullptr);

  // One optimizer update; returns the loss before the update and adds the
  // per-frame batch losses to `per_frame` if given.
  double train_step(std::span<const data::VideoSequence> batch, std::vector<double>* per_frame = nullptr);

  Net& net() { return *net_; }
  const RunConfig& config() const { return config_; }
  const MetricsLog& metrics() const { return metrics_; }
  int epochs_done() const { return epochs_done_; }
  std::optional<int> best_epoch() const { return best_epoch_; }

  std::filesystem::path checkpoint_path(int epoch) const;
  std::filesystem::path best_path() const;
  std::filesystem::path metrics_path() const { return run_dir_ / "metrics.csv"; }

 private:
  void save(const std::filesystem::path& path) const;
  std::optional<std::filesystem::path> last_checkpoint() const;

  RunConfig config_;
  const data::MovingMnist* data_;
  std::filesystem::path run_dir_;
  std::string run_id_;
  std::unique_ptr<Net> net_;
  std::unique_ptr<RmsProp<float>> optimizer_;
  MetricsLog metrics_;
  int epochs_done_ = 0;
  std::optional<int> best_epoch_;
  std::uint64_t steps_ = 0;
};

}  // namespace vln::train
