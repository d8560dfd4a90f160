#pragma once

// Finite-difference checks for every differentiable op, run in both
// precisions against a double-precision numeric derivative.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "support/gradcheck.hpp"
#include "vln/model/layers.hpp"

namespace vln::testing {

struct LeafSpec {
  Shape shape;
  double lo = -1, hi = 1;
  bool grad = true;
  double gap = 0;  // values are kept at least this far from zero
};

struct OpGradCheck {
  std::string name;
  double double_max_rel = 0;
  double float_max_rel = 0;
  std::size_t checked = 0;
};

template <typename T>
std::vector<Tensor<T>> leaves_from(const std::vector<LeafSpec>& specs,
                                   const std::vector<std::vector<double>>& values) {
  std::vector<Tensor<T>> out;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    out.push_back(Tensor<T>::from_values(specs[k].shape, std::vector<T>(values[k].begin(), values[k].end()),
                                         specs[k].grad));
  }
  return out;
}

// `build` maps the leaves to any output tensor; it must accept both
// std::vector<Tensor<double>>& and std::vector<Tensor<float>>&. The output is
// projected to a scalar with fixed random weights. Same kink rejection and
// per-tensor float floor as model_gradient_check.
template <typename Build>
OpGradCheck op_gradient_check(std::string name, const std::vector<LeafSpec>& specs, Build build,
                              std::uint64_t seed, std::size_t samples = 24, double step = 1e-4,
                              double kink_tol = 1e-6) {
  CounterRng rng(seed);
  std::vector<std::vector<double>> values;
  for (const auto& spec : specs) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(spec.shape)));
    for (auto& x : v) {
      do {
        x = rng.uniform(spec.lo, spec.hi);
      } while (std::abs(x) < spec.gap);
    }
    values.push_back(std::move(v));
  }
  auto leaves = leaves_from<double>(specs, values);
  auto leaves_f = leaves_from<float>(specs, values);
  const std::uint64_t projection = seed ^ 0x70726f6aULL;
  const std::function<Tensor<double>()> loss_fn = [&] { return random_projection(build(leaves), projection); };
  backward(loss_fn());
  backward(random_projection(build(leaves_f), projection));

  OpGradCheck result{std::move(name)};
  std::size_t grad_leaves = 0;
  for (const auto& s : specs) grad_leaves += s.grad;
  const std::size_t per_leaf = std::max<std::size_t>(2, (samples + grad_leaves - 1) / std::max<std::size_t>(grad_leaves, 1));
  for (std::size_t k = 0; k < specs.size(); ++k) {
    if (!specs[k].grad) continue;
    auto leaf = leaves[k];
    const auto grad = leaf.grad();
    const auto grad_f = leaves_f[k].grad();
    double scale = 0;
    for (double g : grad) scale = std::max(scale, std::abs(g));
    std::size_t accepted = 0;
    for (std::size_t attempt = 0; accepted < per_leaf && attempt < 20 * per_leaf; ++attempt) {
      const std::size_t i = rng.below(static_cast<std::uint64_t>(leaf.numel()));
      const double numeric = numeric_derivative(leaf, i, loss_fn, step);
      if (relative_error(numeric, numeric_derivative(leaf, i, loss_fn, step / 2)) > kink_tol) continue;
      const double analytic = grad.empty() ? 0.0 : grad[i];
      const double analytic_f = grad_f.empty() ? 0.0 : grad_f[i];
      result.double_max_rel = std::max(result.double_max_rel, relative_error(analytic, numeric));
      result.float_max_rel =
          std::max(result.float_max_rel, relative_error(analytic_f, numeric, std::max(1e-3, 1e-3 * scale)));
      ++result.checked;
      ++accepted;
    }
  }
  return result;
}

inline std::vector<OpGradCheck> all_op_gradient_checks(std::uint64_t seed) {
  std::vector<OpGradCheck> out;
  auto run = [&](std::string name, std::vector<LeafSpec> specs, auto build) {
    out.push_back(op_gradient_check(std::move(name), specs, build, seed + out.size()));
  };

  run("conv2d", {{{2, 3, 6, 5}}, {{4, 3, 3, 3}}, {{4}}}, [](auto& x) { return conv2d(x[0], x[1], x[2]); });
  run("conv2d stride 2", {{{2, 2, 7, 6}}, {{3, 2, 3, 3}}}, [](auto& x) {
    Conv2dOptions o;
    o.stride = {2, 2};
    return conv2d(x[0], x[1], std::decay_t<decltype(x[0])>(), o);
  });
  run("conv2d dilation 2", {{{1, 2, 8, 8}}, {{2, 2, 3, 3}}, {{2}}}, [](auto& x) {
    Conv2dOptions o;
    o.dilation = {2, 2};
    return conv2d(x[0], x[1], x[2], o);
  });
  run("conv2d explicit padding", {{{2, 2, 5, 4}}, {{3, 2, 2, 2}}}, [](auto& x) {
    Conv2dOptions o;
    o.padding = Padding::Explicit(0, 1, 1, 0);
    return conv2d(x[0], x[1], std::decay_t<decltype(x[0])>(), o);
  });
  run("batch_norm train", {{{3, 4, 3, 3}}, {{4}, 0.5, 1.5}, {{4}}}, [](auto& x) {
    using T = typename std::decay_t<decltype(x[0])>::value_type;
    BatchNormBuffers<T> b{Tensor<T>::zeros({4}), Tensor<T>::full({4}, T(1)), Tensor<T>::zeros({1})};
    return batch_norm(x[0], x[1], x[2], b, BatchNormMode::kTrain);
  });
  run("batch_norm eval", {{{3, 4, 3, 3}}, {{4}, 0.5, 1.5}, {{4}}}, [](auto& x) {
    using T = typename std::decay_t<decltype(x[0])>::value_type;
    BatchNormBuffers<T> b{Tensor<T>::from_values({4}, {T(0.1), T(-0.2), T(0.3), T(0)}),
                          Tensor<T>::from_values({4}, {T(0.5), T(2), T(1), T(0.8)}), Tensor<T>::full({1}, T(3))};
    return batch_norm(x[0], x[1], x[2], b, BatchNormMode::kEval);
  });
  run("sigmoid", {{{2, 3, 4, 4}, -3, 3}}, [](auto& x) { return sigmoid(x[0]); });
  run("tanh", {{{2, 3, 4, 4}, -2, 2}}, [](auto& x) { return tanh(x[0]); });
  run("leaky_relu", {{{2, 3, 4, 4}, -1, 1, true, 0.05}}, [](auto& x) { return leaky_relu(x[0], 0.2); });
  run("add", {{{2, 3, 4}}, {{2, 3, 4}}}, [](auto& x) { return add(x[0], x[1]); });
  run("mul", {{{2, 3, 4}}, {{2, 3, 4}}}, [](auto& x) { return mul(x[0], x[1]); });
  run("scale", {{{2, 3, 4}}}, [](auto& x) { return scale(x[0], -0.37); });
  run("concat axis 1", {{{2, 1, 3, 3}}, {{2, 3, 3, 3}}, {{2, 2, 3, 3}}},
      [](auto& x) { return concat(std::span<const std::decay_t<decltype(x[0])>>(x.data(), 3), 1); });
  run("concat axis 3", {{{2, 2, 3, 1}}, {{2, 2, 3, 2}}}, [](auto& x) { return concat(std::span<const std::decay_t<decltype(x[0])>>(x.data(), 2), 3); });
  run("concat_channels", {{{1, 2, 3, 3}}, {{1, 3, 3, 3}}}, [](auto& x) { return concat_channels(x[0], x[1]); });
  run("slice axis 1", {{{2, 5, 3, 3}}}, [](auto& x) { return slice(x[0], 1, 1, 3); });
  run("slice axis 3", {{{2, 2, 3, 6}}}, [](auto& x) { return slice(x[0], 3, 2, 4); });
  run("upsample_nearest", {{{2, 2, 3, 4}}}, [](auto& x) { return upsample_nearest(x[0], 2); });
  run("sum", {{{2, 3, 4}}}, [](auto& x) { return sum(x[0]); });
  run("mean", {{{2, 3, 4}}}, [](auto& x) { return mean(x[0]); });
  run("bce_loss", {{{3, 1, 4, 4}, 0.05, 0.95}, {{3, 1, 4, 4}, 0, 1, false}},
      [](auto& x) { return bce_loss(x[0], x[1]); });

  std::vector<LeafSpec> lstm;
  for (int g = 0; g < 4; ++g) lstm.push_back({{3, 2, 3, 3}, -0.5, 0.5});
  for (int g = 0; g < 4; ++g) lstm.push_back({{3, 3, 3, 3}, -0.5, 0.5});
  for (int g = 0; g < 4; ++g) lstm.push_back({{3}, -0.5, 0.5});
  lstm.push_back({{2, 2, 4, 4}});
  lstm.push_back({{2, 3, 4, 4}});
  lstm.push_back({{2, 3, 4, 4}});
  run("convlstm_step", lstm, [](auto& x) {
    using T = typename std::decay_t<decltype(x[0])>::value_type;
    model::ConvLstmParams<T> p;
    for (int g = 0; g < 4; ++g) {
      p.w_z[g] = x[g];
      p.w_h[g] = x[4 + g];
      p.bias[g] = x[8 + g];
    }
    auto next = model::convlstm_step(p, x[12], model::ConvLstmState<T>{x[13], x[14], false});
    return concat_channels(next.hidden, next.cell);
  });
  run("lateral_merge",
      {{{3, 5, 1, 1}}, {{3}}, {{3, 5, 1, 1}}, {{3}}, {{2, 2, 3, 3}}, {{2, 3, 3, 3}}, {{2, 2, 3, 3}}},
      [](auto& x) {
        using T = typename std::decay_t<decltype(x[0])>::value_type;
        model::MergeParams<T> p{x[0], x[1], x[2], x[3]};
        return model::lateral_merge(p, x[4], x[5], x[6], 0.2);
      });
  return out;
}

}  // namespace vln::testing
