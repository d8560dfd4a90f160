#pragma once

// Training and evaluation windows over 20-frame sequences.
//
// Training: x1..x10 are fed one per step with the lateral states carried
// along, then the last prediction is fed back for `horizon` steps, detached
// from the graph. The loss is the mean of the per-frame BCE sums over those
// predictions, averaged over the batch.
//
// Evaluation: for each t = 11..20 the states are reset and the current window
// (ground truth x_{n+1..10}, then the n fed-back predictions) is replayed from
// zero; the last output is the prediction of x_t.

#include <array>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "vln/data/moving_mnist.hpp"
#include "vln/model/ladder_net.hpp"
#include "vln/train/config.hpp"

namespace vln::train {

// N frames of 64x64, sample-major.
using FrameBatch = std::vector<float>;

FrameBatch gather_frames(std::span<const data::VideoSequence> batch, int t);

template <typename T>
Tensor<T> to_tensor(const FrameBatch& frames, std::int64_t n);

// Per-sample BCE sums (length N) of a batch of predicted frames.
std::vector<double> frame_bce(const FrameBatch& prediction, const FrameBatch& target, std::int64_t n);

// The last kPastFrames frames shown to the model and how many of them are
// its own predictions.
class Window {
 public:
  explicit Window(std::span<const data::VideoSequence> batch);

  const std::deque<FrameBatch>& frames() const { return frames_; }
  int fed_back() const { return fed_back_; }
  std::int64_t batch() const { return batch_; }
  // Drops the oldest frame and appends a prediction.
  void push(FrameBatch prediction);

 private:
  std::deque<FrameBatch> frames_;
  int fed_back_ = 0;
  std::int64_t batch_;
};

// Maps a window to the next frame.
using WindowPredictor = std::function<FrameBatch(const Window&)>;

template <typename T>
WindowPredictor model_predictor(const model::VideoLadderNet<T>& net);
WindowPredictor copy_last_predictor();
WindowPredictor constant_predictor(float value);

template <typename T>
struct TrainLoss {
  Tensor<T> loss;                  // scalar
  std::vector<double> per_frame;   // horizon values, batch means
  Tensor<T> first_prediction;      // prediction of x11
};

template <typename T>
TrainLoss<T> sequence_loss(const model::VideoLadderNet<T>& net, std::span<const data::VideoSequence> batch,
                           int horizon, BatchNormMode mode = BatchNormMode::kTrain);

using TimestepLosses = std::array<double, kEvalHorizon>;

// Per-sequence losses for t = 11..20. Runs without recording a graph.
std::vector<TimestepLosses> evaluate_batch(const WindowPredictor& predictor,
                                           std::span<const data::VideoSequence> batch);

struct EvalSummary {
  TimestepLosses per_timestep{};  // means over sequences
  double mean = 0;                // mean of per_timestep
  std::size_t sequences = 0;
};

// Mean over a stream, `batch_size` sequences at a time; the reduction order
// is fixed by sequence index.
EvalSummary evaluate_stream(const WindowPredictor& predictor, const data::EpochStream& stream,
                            std::size_t count, int batch_size);

}  // namespace vln::train
