#include "vln/train/rmsprop.hpp"

#include <cmath>
#include <stdexcept>

namespace vln::train {

template <typename T>
void rmsprop_update(std::span<T> params, std::span<const T> grads, std::span<T> accumulators,
                    const RmsPropOptions& options) {
  if (grads.size() != params.size() || accumulators.size() != params.size()) {
    throw ShapeError("rmsprop_update: " + std::to_string(params.size()) + " parameters, " +
                     std::to_string(grads.size()) + " gradients, " + std::to_string(accumulators.size()) +
                     " accumulators");
  }
  if (!(options.rho > 0 && options.rho < 1)) throw std::invalid_argument("rmsprop_update: rho must lie in (0, 1)");
  const T rho = T(options.rho), one_minus = T(1 - options.rho);
  const T lr = T(options.learning_rate), eps = T(options.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    accumulators[i] = rho * accumulators[i] + one_minus * g * g;
    // acc = 0 only when g = 0 throughout; skip to avoid 0/0 with eps = 0
    if (g != T(0)) params[i] -= lr * g / (std::sqrt(accumulators[i]) + eps);
  }
}

template <typename T>
RmsProp<T>::RmsProp(ParameterStore<T>& store, RmsPropOptions options) : store_(&store), options_(options) {
  for (const auto& p : store.parameters()) accumulators_.emplace_back(std::size_t(p.tensor.numel()), T(0));
}

template <typename T>
void RmsProp<T>::step() {
  const auto& params = store_->parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto tensor = params[i].tensor;
    auto grad = tensor.grad();
    const std::vector<T> zeros(grad.empty() ? accumulators_[i].size() : 0, T(0));
    rmsprop_update<T>(tensor.mutable_values(), grad.empty() ? std::span<const T>(zeros) : grad,
                      accumulators_[i], options_);
  }
}

template <typename T>
void RmsProp<T>::save(Checkpoint& checkpoint, const std::string& prefix) const {
  const auto& params = store_->parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    checkpoint.entries.push_back(
        {prefix + params[i].name, params[i].tensor.shape(),
         std::vector<float>(accumulators_[i].begin(), accumulators_[i].end())});
  }
}

template <typename T>
void RmsProp<T>::load(const Checkpoint& checkpoint, const std::string& prefix) {
  const auto& params = store_->parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* entry = checkpoint.find(prefix + params[i].name);
    if (!entry) throw CheckpointError("checkpoint has no optimizer state for " + params[i].name);
    if (entry->shape != params[i].tensor.shape()) {
      throw CheckpointError("optimizer state for " + params[i].name + " has shape " + shape_str(entry->shape));
    }
    accumulators_[i].assign(entry->values.begin(), entry->values.end());
  }
}

template void rmsprop_update<float>(std::span<float>, std::span<const float>, std::span<float>,
                                    const RmsPropOptions&);
template void rmsprop_update<double>(std::span<double>, std::span<const double>, std::span<double>,
                                     const RmsPropOptions&);
template class RmsProp<float>;
template class RmsProp<double>;

}  // namespace vln::train
