#include "vln/autograd/parameter.hpp"

#include <algorithm>

namespace vln {

template <typename T>
void ParameterStore<T>::claim(const std::string& name) {
  if (name.empty()) throw std::invalid_argument("parameter name must not be empty");
  if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
}

template <typename T>
Tensor<T> ParameterStore<T>::add_parameter(const std::string& name, Shape shape) {
  claim(name);
  auto t = Tensor<T>::zeros(std::move(shape), true);
  parameters_.push_back({name, t});
  return t;
}

template <typename T>
Tensor<T> ParameterStore<T>::add_buffer(const std::string& name, Shape shape, T fill) {
  claim(name);
  auto t = Tensor<T>::full(std::move(shape), fill, false);
  buffers_.push_back({name, t});
  return t;
}

template <typename T>
std::vector<NamedTensor<T>> ParameterStore<T>::all() const {
  std::vector<NamedTensor<T>> out = parameters_;
  out.insert(out.end(), buffers_.begin(), buffers_.end());
  return out;
}

template <typename T>
std::int64_t ParameterStore<T>::parameter_count() const {
  std::int64_t total = 0;
  for (const auto& p : parameters_) total += p.tensor.numel();
  return total;
}

template <typename T>
const Tensor<T>* ParameterStore<T>::find(const std::string& name) const {
  for (const auto* list : {&parameters_, &buffers_}) {
    auto it = std::find_if(list->begin(), list->end(), [&](const auto& p) { return p.name == name; });
    if (it != list->end()) return &it->tensor;
  }
  return nullptr;
}

template <typename T>
const Tensor<T>& ParameterStore<T>::parameter(const std::string& name) const {
  const auto* t = find(name);
  if (!t) throw std::out_of_range("no parameter named " + name);
  return *t;
}

template <typename T>
void ParameterStore<T>::zero_grads() {
  for (auto& p : parameters_) p.tensor.zero_grad();
}

template class ParameterStore<float>;
template class ParameterStore<double>;

}  // namespace vln
