#pragma once

#include <span>
#include <string>
#include <vector>

#include "vln/autograd/checkpoint.hpp"
#include "vln/autograd/parameter.hpp"

namespace vln::train {

struct RmsPropOptions {
  double learning_rate = 1e-4;
  double rho = 0.9;
  double epsilon = 1e-8;
};

// acc = rho * acc + (1 - rho) * g^2;  p -= lr * g / (sqrt(acc) + eps)
template <typename T>
void rmsprop_update(std::span<T> params, std::span<const T> grads, std::span<T> accumulators,
                    const RmsPropOptions& options);

// One accumulator per parameter tensor of a store. Parameters without a
// gradient this step are treated as having a zero gradient.
template <typename T>
class RmsProp {
 public:
  RmsProp(ParameterStore<T>& store, RmsPropOptions options);

  void step();
  const RmsPropOptions& options() const { return options_; }
  const std::vector<std::vector<T>>& accumulators() const { return accumulators_; }

  // Stored as "<prefix><parameter name>" entries.
  void save(Checkpoint& checkpoint, const std::string& prefix = "rmsprop.") const;
  void load(const Checkpoint& checkpoint, const std::string& prefix = "rmsprop.");

 private:
  ParameterStore<T>* store_;
  RmsPropOptions options_;
  std::vector<std::vector<T>> accumulators_;
};

extern template class RmsProp<float>;
extern template class RmsProp<double>;

}  // namespace vln::train
