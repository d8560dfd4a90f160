#pragma once

#include <string>
#include <vector>

#include "vln/autograd/tensor.hpp"

namespace vln {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

// Owns the trainable parameters and non-trainable buffers of one model, in
// registration order. Names are hierarchical ("encoder.level1.conv.kernel")
// and unique across both lists.
template <typename T>
class ParameterStore {
 public:
  Tensor<T> add_parameter(const std::string& name, Shape shape);
  Tensor<T> add_buffer(const std::string& name, Shape shape, T fill = T(0));

  const std::vector<NamedTensor<T>>& parameters() const { return parameters_; }
  const std::vector<NamedTensor<T>>& buffers() const { return buffers_; }

  // Parameters followed by buffers.
  std::vector<NamedTensor<T>> all() const;

  // Sum over parameters of product(shape); buffers excluded.
  std::int64_t parameter_count() const;

  const Tensor<T>& parameter(const std::string& name) const;
  const Tensor<T>* find(const std::string& name) const;

  void zero_grads();

 private:
  void claim(const std::string& name);

  std::vector<NamedTensor<T>> parameters_;
  std::vector<NamedTensor<T>> buffers_;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

}  // namespace vln
