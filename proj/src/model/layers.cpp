#include "vln/model/layers.hpp"

#include <vector>

namespace vln::model {

template <typename T>
ConvBn<T> ConvBn<T>::create(ParameterStore<T>& store, const std::string& prefix, int in, int out,
                            int kernel_size, int stride, int dilation) {
  ConvBn layer;
  layer.kernel = store.add_parameter(prefix + ".kernel", {out, in, kernel_size, kernel_size});
  layer.scale = store.add_parameter(prefix + ".bn.scale", {out});
  layer.shift = store.add_parameter(prefix + ".bn.shift", {out});
  layer.buffers.running_mean = store.add_buffer(prefix + ".bn.running_mean", {out});
  layer.buffers.running_var = store.add_buffer(prefix + ".bn.running_var", {out}, T(1));
  layer.buffers.batches_tracked = store.add_buffer(prefix + ".bn.batches_tracked", {1});
  layer.options.stride = {stride, stride};
  layer.options.dilation = {dilation, dilation};
  return layer;
}

template <typename T>
Tensor<T> ConvBn<T>::forward(const Tensor<T>& x, BatchNormMode mode, const BatchNormOptions& bn,
                             double slope) const {
  auto buffers_copy = buffers;
  auto y = conv2d(x, kernel, Tensor<T>(), options);
  return leaky_relu(batch_norm(y, scale, shift, buffers_copy, mode, bn), slope);
}

template <typename T>
ConvLstmState<T> ConvLstmState<T>::zeros(std::int64_t batch, std::int64_t channels,
                                         std::int64_t height, std::int64_t width) {
  const Shape shape{batch, channels, height, width};
  return {Tensor<T>::zeros(shape), Tensor<T>::zeros(shape), true};
}

template <typename T>
ConvLstmParams<T> ConvLstmParams<T>::create(ParameterStore<T>& store, const std::string& prefix,
                                            int in, int hidden) {
  static constexpr const char* kSuffix[4] = {"i", "f", "o", "c"};
  ConvLstmParams p;
  for (int g = 0; g < 4; ++g) p.w_z[g] = store.add_parameter(prefix + ".w_z" + kSuffix[g], {hidden, in, 3, 3});
  for (int g = 0; g < 4; ++g) p.w_h[g] = store.add_parameter(prefix + ".w_h" + kSuffix[g], {hidden, hidden, 3, 3});
  for (int g = 0; g < 4; ++g) p.bias[g] = store.add_parameter(prefix + ".b_" + kSuffix[g], {hidden});
  return p;
}

template <typename T>
ConvLstmState<T> convlstm_step(const ConvLstmParams<T>& params, const Tensor<T>& z,
                               const ConvLstmState<T>& state) {
  const auto c = params.hidden_channels();
  if (z.rank() != 4 || z.dim(1) != params.in_channels()) {
    throw ShapeError("convlstm_step: input " + shape_str(z.shape()) + " does not have " +
                     std::to_string(params.in_channels()) + " channels");
  }
  const Shape expected{z.dim(0), c, z.dim(2), z.dim(3)};
  if (state.hidden.shape() != expected || state.cell.shape() != expected) {
    throw ShapeError("convlstm_step: state " + shape_str(state.hidden.shape()) + " / " +
                     shape_str(state.cell.shape()) + " does not match " + shape_str(expected));
  }
  // All four gates in one convolution per path.
  auto pre = conv2d(z, concat<T>(params.w_z, 0), concat<T>(params.bias, 0));
  if (!state.zero) pre = add(pre, conv2d(state.hidden, concat<T>(params.w_h, 0), Tensor<T>()));
  const auto input_gate = sigmoid(slice(pre, 1, kInputGate * c, c));
  const auto output_gate = sigmoid(slice(pre, 1, kOutputGate * c, c));
  const auto candidate = tanh(slice(pre, 1, kCandidate * c, c));
  auto cell = mul(candidate, input_gate);
  if (!state.zero) cell = add(cell, mul(state.cell, sigmoid(slice(pre, 1, kForgetGate * c, c))));
  return {mul(output_gate, tanh(cell)), cell, false};
}

template <typename T>
MergeParams<T> MergeParams<T>::create(ParameterStore<T>& store, const std::string& prefix,
                                      int above_channels, int recurrent_channels,
                                      int feedforward_channels, int out) {
  MergeParams p;
  p.w_h = store.add_parameter(prefix + ".w_h", {out, above_channels + recurrent_channels, 1, 1});
  p.b_h = store.add_parameter(prefix + ".b_h", {out});
  p.w_z = store.add_parameter(prefix + ".w_z", {out, out + feedforward_channels, 1, 1});
  p.b_z = store.add_parameter(prefix + ".b_z", {out});
  return p;
}

template <typename T>
Tensor<T> lateral_merge(const MergeParams<T>& params, const Tensor<T>& above, const Tensor<T>& h,
                        const Tensor<T>& z, double slope) {
  std::vector<Tensor<T>> first;
  for (const auto* t : {&above, &h}) {
    if (t->defined()) first.push_back(*t);
  }
  if (first.empty()) throw std::invalid_argument("lateral_merge: needs the decoder input or a recurrent lateral");
  const auto& ref = first.front();
  for (const auto* t : {&above, &h, &z}) {
    if (t->defined() && (t->rank() != 4 || t->dim(0) != ref.dim(0) || t->dim(2) != ref.dim(2) ||
                         t->dim(3) != ref.dim(3))) {
      throw ShapeError("lateral_merge: operands " + shape_str(t->shape()) + " and " +
                       shape_str(ref.shape()) + " are not aligned");
    }
  }
  auto a = first.size() == 1 ? first.front() : concat<T>(first, 1);
  a = leaky_relu(conv2d(a, params.w_h, params.b_h), slope);
  if (z.defined()) a = concat_channels(a, z);
  return leaky_relu(conv2d(a, params.w_z, params.b_z), slope);
}

#define VLN_INSTANTIATE(T)                                                                      \
  template struct ConvBn<T>;                                                                    \
  template struct ConvLstmState<T>;                                                             \
  template struct ConvLstmParams<T>;                                                            \
  template struct MergeParams<T>;                                                               \
  template ConvLstmState<T> convlstm_step(const ConvLstmParams<T>&, const Tensor<T>&,           \
                                          const ConvLstmState<T>&);                             \
  template Tensor<T> lateral_merge(const MergeParams<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                   const Tensor<T>&, double);
VLN_INSTANTIATE(float)
VLN_INSTANTIATE(double)
#undef VLN_INSTANTIATE

}  // namespace vln::model
