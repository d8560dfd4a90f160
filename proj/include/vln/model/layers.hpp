#pragma once

// Building blocks shared by all ladder variants: conv + BN + leaky ReLU,
// the conv-LSTM lateral cell and the lateral merge block.

#include <array>
#include <string>

#include "vln/autograd/ops.hpp"
#include "vln/autograd/parameter.hpp"

namespace vln::model {

template <typename T>
struct ConvBn {
  Tensor<T> kernel;
  Tensor<T> scale, shift;
  BatchNormBuffers<T> buffers;
  Conv2dOptions options;

  // Registers <prefix>.kernel, <prefix>.bn.{scale,shift} and the BN buffers.
  static ConvBn create(ParameterStore<T>& store, const std::string& prefix, int in, int out,
                       int kernel_size, int stride, int dilation);

  // conv -> BN -> leaky ReLU. The conv has no bias; BN's shift plays that role.
  Tensor<T> forward(const Tensor<T>& x, BatchNormMode mode, const BatchNormOptions& bn,
                    double slope) const;
};

template <typename T>
struct ConvLstmState {
  Tensor<T> hidden;
  Tensor<T> cell;
  // Set for the all-zero start state; lets the step skip the hidden-path conv.
  bool zero = true;

  static ConvLstmState zeros(std::int64_t batch, std::int64_t channels, std::int64_t height,
                             std::int64_t width);
};

// Gate order everywhere: input, forget, output, candidate.
enum Gate { kInputGate = 0, kForgetGate = 1, kOutputGate = 2, kCandidate = 3 };

template <typename T>
struct ConvLstmParams {
  std::array<Tensor<T>, 4> w_z;  // [C, Cin, 3, 3]
  std::array<Tensor<T>, 4> w_h;  // [C, C, 3, 3]
  std::array<Tensor<T>, 4> bias;  // [C]

  // Names: <prefix>.w_zi, w_zf, w_zo, w_zc, w_hi, ..., b_i, b_f, b_o, b_c.
  static ConvLstmParams create(ParameterStore<T>& store, const std::string& prefix, int in,
                               int hidden);

  std::int64_t in_channels() const { return w_z[0].dim(1); }
  std::int64_t hidden_channels() const { return w_z[0].dim(0); }
};

// i = s(z*Wzi + h*Whi + bi), f and o likewise, c~ = tanh(z*Wzc + h*Whc + bc),
// c = c~ . i + c_prev . f, h = o . tanh(c).
template <typename T>
ConvLstmState<T> convlstm_step(const ConvLstmParams<T>& params, const Tensor<T>& z,
                               const ConvLstmState<T>& state);

template <typename T>
struct MergeParams {
  Tensor<T> w_h, b_h;  // [out, above + recurrent, 1, 1]
  Tensor<T> w_z, b_z;  // [out, out + feedforward, 1, 1]

  static MergeParams create(ParameterStore<T>& store, const std::string& prefix,
                            int above_channels, int recurrent_channels, int feedforward_channels,
                            int out);
};

// out = lrelu(concat(lrelu(concat(above, h) * W_h), z) * W_z). Undefined
// tensors are absent operands and contribute no channels.
template <typename T>
Tensor<T> lateral_merge(const MergeParams<T>& params, const Tensor<T>& above, const Tensor<T>& h,
                        const Tensor<T>& z, double slope);

}  // namespace vln::model
