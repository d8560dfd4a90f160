#include "vln/train/windowing.hpp"

#include <algorithm>
#include <cmath>

namespace vln::train {

using data::kFramePixels;
using data::kPastFrames;

FrameBatch gather_frames(std::span<const data::VideoSequence> batch, int t) {
  FrameBatch out(batch.size() * kFramePixels);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto frame = batch[i].frame(t);
    std::copy(frame.begin(), frame.end(), out.begin() + std::ptrdiff_t(i * kFramePixels));
  }
  return out;
}

template <typename T>
Tensor<T> to_tensor(const FrameBatch& frames, std::int64_t n) {
  if (frames.size() != std::size_t(n) * kFramePixels) {
    throw ShapeError("frame batch of " + std::to_string(frames.size()) + " values is not " + std::to_string(n) +
                     " frames of 64x64");
  }
  return Tensor<T>::from_values({n, 1, data::kFrameSize, data::kFrameSize},
                                std::vector<T>(frames.begin(), frames.end()));
}

std::vector<double> frame_bce(const FrameBatch& prediction, const FrameBatch& target, std::int64_t n) {
  if (prediction.size() != target.size() || prediction.size() != std::size_t(n) * kFramePixels) {
    throw ShapeError("frame_bce: prediction and target sizes differ");
  }
  std::vector<double> out(std::size_t(n), 0.0);
  const double lo = kBceClamp, hi = 1.0 - kBceClamp;
  for (std::int64_t i = 0; i < n; ++i) {
    double acc = 0;
    for (int j = 0; j < kFramePixels; ++j) {
      const double p = std::clamp<double>(prediction[std::size_t(i) * kFramePixels + j], lo, hi);
      const double t = target[std::size_t(i) * kFramePixels + j];
      acc -= t * std::log(p) + (1 - t) * std::log(1 - p);
    }
    out[std::size_t(i)] = acc;
  }
  return out;
}

Window::Window(std::span<const data::VideoSequence> batch) : batch_(std::int64_t(batch.size())) {
  if (batch.empty()) throw std::invalid_argument("window over an empty batch");
  for (int t = 0; t < kPastFrames; ++t) frames_.push_back(gather_frames(batch, t));
}

void Window::push(FrameBatch prediction) {
  if (prediction.size() != std::size_t(batch_) * kFramePixels) {
    throw ShapeError("window prediction has " + std::to_string(prediction.size()) + " values");
  }
  frames_.pop_front();
  frames_.push_back(std::move(prediction));
  fed_back_ = std::min(fed_back_ + 1, kPastFrames);
}

template <typename T>
WindowPredictor model_predictor(const model::VideoLadderNet<T>& net) {
  return [&net](const Window& window) {
    NoGradGuard no_grad;
    const auto n = window.batch();
    auto states = net.initial_states(n);
    const auto& frames = window.frames();
    for (std::size_t t = 0; t + 1 < frames.size(); ++t) {
      states = net.advance(to_tensor<T>(frames[t], n), states, BatchNormMode::kEval);
    }
    const auto out = net.step(to_tensor<T>(frames.back(), n), states, BatchNormMode::kEval).prediction;
    return FrameBatch(out.values().begin(), out.values().end());
  };
}

WindowPredictor copy_last_predictor() {
  return [](const Window& window) { return window.frames().back(); };
}

WindowPredictor constant_predictor(float value) {
  return [value](const Window& window) { return FrameBatch(window.frames().back().size(), value); };
}

template <typename T>
TrainLoss<T> sequence_loss(const model::VideoLadderNet<T>& net, std::span<const data::VideoSequence> batch,
                           int horizon, BatchNormMode mode) {
  if (horizon < 1 || horizon > kEvalHorizon) {
    throw std::invalid_argument("training horizon " + std::to_string(horizon) + " is outside [1, 10]");
  }
  if (batch.empty()) throw std::invalid_argument("sequence_loss: empty batch");
  const auto n = std::int64_t(batch.size());
  auto states = net.initial_states(n);
  for (int t = 0; t + 1 < kPastFrames; ++t) {
    states = net.advance(to_tensor<T>(gather_frames(batch, t), n), states, mode);
  }
  auto out = net.step(to_tensor<T>(gather_frames(batch, kPastFrames - 1), n), states, mode);

  TrainLoss<T> result;
  result.first_prediction = out.prediction;
  Tensor<T> total;
  for (int k = 0; k < horizon; ++k) {
    const auto target = to_tensor<T>(gather_frames(batch, kPastFrames + k), n);
    const auto frame_loss = mean(bce_loss(out.prediction, target));
    result.per_frame.push_back(double(frame_loss.item()));
    total = total.defined() ? add(total, frame_loss) : frame_loss;
    if (k + 1 < horizon) out = net.step(out.prediction.detach(), out.states, mode);
  }
  result.loss = scale(total, 1.0 / horizon);
  return result;
}

std::vector<TimestepLosses> evaluate_batch(const WindowPredictor& predictor,
                                           std::span<const data::VideoSequence> batch) {
  NoGradGuard no_grad;
  Window window(batch);
  const auto n = window.batch();
  std::vector<TimestepLosses> out(batch.size());
  for (int k = 0; k < kEvalHorizon; ++k) {
    auto prediction = predictor(window);
    const auto losses = frame_bce(prediction, gather_frames(batch, kPastFrames + k), n);
    for (std::size_t i = 0; i < batch.size(); ++i) out[i][std::size_t(k)] = losses[i];
    window.push(std::move(prediction));
  }
  return out;
}

EvalSummary evaluate_stream(const WindowPredictor& predictor, const data::EpochStream& stream,
                            std::size_t count, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("evaluate_stream: batch_size must be positive");
  count = std::min(count, stream.size());
  EvalSummary summary;
  for (std::size_t start = 0; start < count; start += std::size_t(batch_size)) {
    std::vector<data::VideoSequence> batch;
    for (std::size_t i = start; i < std::min(count, start + std::size_t(batch_size)); ++i) {
      batch.push_back(stream.at(i));
    }
    for (const auto& losses : evaluate_batch(predictor, batch)) {
      for (int k = 0; k < kEvalHorizon; ++k) summary.per_timestep[std::size_t(k)] += losses[std::size_t(k)];
    }
  }
  summary.sequences = count;
  if (count == 0) return summary;
  for (auto& v : summary.per_timestep) v /= double(count);
  for (double v : summary.per_timestep) summary.mean += v;
  summary.mean /= kEvalHorizon;
  return summary;
}

#define VLN_INSTANTIATE_WINDOWING(T)                                                                  \
  template Tensor<T> to_tensor<T>(const FrameBatch&, std::int64_t);                                 \
  template WindowPredictor model_predictor<T>(const model::VideoLadderNet<T>&);                     \
  template TrainLoss<T> sequence_loss<T>(const model::VideoLadderNet<T>&,                           \
                                         std::span<const data::VideoSequence>, int, BatchNormMode);
VLN_INSTANTIATE_WINDOWING(float)
VLN_INSTANTIATE_WINDOWING(double)

}  // namespace vln::train
