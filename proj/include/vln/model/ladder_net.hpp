#pragma once

// Video ladder network: a strided conv encoder, per-level lateral connections
// (conv-LSTM and/or direct) and a top-down decoder that merges the laterals
// and predicts the next frame.

#include <optional>
#include <string>
#include <vector>

#include "vln/model/config.hpp"
#include "vln/model/layers.hpp"

namespace vln::model {

struct ShapeRecord {
  std::string name;
  Shape shape;
};
using ShapeTrace = std::vector<ShapeRecord>;

template <typename T>
class VideoLadderNet {
 public:
  using State = ConvLstmState<T>;
  using States = std::vector<State>;

  struct StepResult {
    Tensor<T> prediction;  // [N, 1, S, S], in (0, 1)
    States states;
  };

  explicit VideoLadderNet(ModelConfig config);
  VideoLadderNet(const VideoLadderNet&) = delete;
  VideoLadderNet& operator=(const VideoLadderNet&) = delete;

  // Truncated normal kernels (std sqrt(2 / fan_in), cut at 2 std), zero
  // biases, forget-gate bias from the config, BN scale 1 and shift 0. Each
  // tensor draws from a stream keyed by (seed, name).
  void initialize(std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterStore<T>& store() { return store_; }
  const ParameterStore<T>& store() const { return store_; }
  std::int64_t parameter_count() const { return store_.parameter_count(); }

  // One zero state per recurrent level, bottom level first.
  States initial_states(std::int64_t batch) const;

  // Encoder features z^1 .. z^L.
  std::vector<Tensor<T>> encode(const Tensor<T>& frame, BatchNormMode mode,
                                ShapeTrace* trace = nullptr) const;

  StepResult step(const Tensor<T>& frame, const States& states, BatchNormMode mode,
                  ShapeTrace* trace = nullptr) const;

  // The state update of step() without decoding a prediction. Decoder BN
  // statistics are left untouched.
  States advance(const Tensor<T>& frame, const States& states, BatchNormMode mode) const;

  // One line per parameter ("name shape count"), then the total.
  std::string describe() const;

 private:
  struct EncoderLevel {
    std::vector<ConvBn<T>> convs;
    Tensor<T> skip_kernel, skip_bias;  // residual only; undefined for identity skips
    std::optional<ConvBn<T>> down;     // residual only
  };
  struct Lateral {
    std::optional<ConvLstmParams<T>> lstm;
    Tensor<T> proj_kernel, proj_bias;  // when the LSTM is wider than the level
    std::optional<MergeParams<T>> merge;
  };
  struct DecoderLevel {
    std::vector<ConvBn<T>> convs;
    Tensor<T> skip_kernel, skip_bias;
  };

  Tensor<T> run_encoder_level(int level, const Tensor<T>& x, BatchNormMode mode) const;
  Tensor<T> run_decoder_level(int level, const Tensor<T>& x, BatchNormMode mode) const;

  ModelConfig config_;
  BatchNormOptions bn_;
  ParameterStore<T> store_;
  std::vector<EncoderLevel> encoder_;
  std::vector<Lateral> laterals_;
  std::vector<DecoderLevel> decoder_;
  Tensor<T> output_kernel_, output_bias_;
};

extern template class VideoLadderNet<float>;
extern template class VideoLadderNet<double>;

}  // namespace vln::model
