#pragma once

// Differentiable operations. 4-D data is laid out (N, C, H, W), row-major.
// No implicit broadcasting: binary ops require identical shapes.

#include <array>
#include <span>
#include <vector>

#include "vln/autograd/tensor.hpp"

namespace vln {

struct Padding {
  bool same = true;
  int top = 0, bottom = 0, left = 0, right = 0;

  static Padding Same() { return {}; }
  static Padding Explicit(int top, int bottom, int left, int right) {
    return {false, top, bottom, left, right};
  }
};

struct Conv2dOptions {
  std::array<int, 2> stride{1, 1};
  std::array<int, 2> dilation{1, 1};
  Padding padding = Padding::Same();
};

// "Same" padding: output extent is ceil(in / stride); the odd pixel of total
// padding goes to the bottom/right.
struct ConvGeometry {
  int out_h, out_w;
  int pad_top, pad_left;
};
ConvGeometry conv_geometry(std::int64_t in_h, std::int64_t in_w, std::int64_t kernel_h,
                           std::int64_t kernel_w, const Conv2dOptions& options);

// Cross-correlation. `bias` may be an undefined tensor.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 const Conv2dOptions& options = {});

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& input, int factor);

enum class BatchNormMode { kTrain, kEval };

// Running statistics live in leaf tensors so they can be checkpointed.
// `batches_tracked` is a one-element counter; zero means no statistics yet.
template <typename T>
struct BatchNormBuffers {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  Tensor<T> batches_tracked;
};

struct BatchNormOptions {
  double epsilon = 1e-5;
  double momentum = 0.99;
};

// Per-channel normalization over (N, H, W). In train mode this also updates
// the running statistics: running = momentum * running + (1 - momentum) * batch,
// with the very first batch copied in directly.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& scale, const Tensor<T>& shift,
                     BatchNormBuffers<T>& buffers, BatchNormMode mode,
                     const BatchNormOptions& options = {});

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh(const Tensor<T>& x);
template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, double slope);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& x, double factor);

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis);
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::int64_t start, std::int64_t count);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

inline constexpr double kBceClamp = 1e-7;

// Pixel-summed binary cross-entropy per sample: returns shape (N).
// Predictions are clamped to [eps, 1 - eps]; the clamp passes no gradient.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& prediction, const Tensor<T>& target,
                   double epsilon = kBceClamp);

}  // namespace vln
