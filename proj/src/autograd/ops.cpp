#include "vln/autograd/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace vln {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* what) {
  if (!t.defined()) throw ShapeError(std::string(what) + ": undefined tensor");
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_str(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

struct ConvDims {
  std::int64_t n, cin, h, w, cout, kh, kw;
  int sh, sw, dh, dw;
  ConvGeometry geo;

  std::int64_t patch() const { return cin * kh * kw; }
  std::int64_t pixels() const { return std::int64_t{geo.out_h} * geo.out_w; }
};

// Output columns [lo, hi) whose input column ox * stride - pad + offset lies
// inside [0, size).
inline std::pair<int, int> valid_range(int out, int stride, std::int64_t start, std::int64_t size) {
  int lo = 0;
  while (lo < out && std::int64_t{lo} * stride + start < 0) ++lo;
  int hi = out;
  while (hi > lo && std::int64_t{hi - 1} * stride + start >= size) --hi;
  return {lo, hi};
}

// cols is (cin*kh*kw) x (n*out_h*out_w).
template <typename T>
void im2col(const T* input, const ConvDims& d, T* cols) {
  const std::int64_t p = d.pixels();
  const std::int64_t width = d.n * p;
  const int ow = d.geo.out_w;
  for (std::int64_t c = 0; c < d.cin; ++c) {
    for (std::int64_t ki = 0; ki < d.kh; ++ki) {
      for (std::int64_t kj = 0; kj < d.kw; ++kj) {
        T* row = cols + ((c * d.kh + ki) * d.kw + kj) * width;
        const std::int64_t x0 = kj * d.dw - d.geo.pad_left;
        const auto [lo, hi] = valid_range(ow, d.sw, x0, d.w);
        for (std::int64_t n = 0; n < d.n; ++n) {
          const T* plane = input + (n * d.cin + c) * d.h * d.w;
          T* out = row + n * p;
          for (int oy = 0; oy < d.geo.out_h; ++oy) {
            const std::int64_t iy = std::int64_t{oy} * d.sh - d.geo.pad_top + ki * d.dh;
            T* out_row = out + std::int64_t{oy} * ow;
            if (iy < 0 || iy >= d.h) {
              std::fill(out_row, out_row + ow, T(0));
              continue;
            }
            const T* in_row = plane + iy * d.w + x0;
            std::fill(out_row, out_row + lo, T(0));
            if (d.sw == 1) {
              std::copy(in_row + lo, in_row + hi, out_row + lo);
            } else {
              for (int ox = lo; ox < hi; ++ox) out_row[ox] = in_row[std::int64_t{ox} * d.sw];
            }
            std::fill(out_row + hi, out_row + ow, T(0));
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvDims& d, T* input_grad) {
  const std::int64_t p = d.pixels();
  const std::int64_t width = d.n * p;
  const int ow = d.geo.out_w;
  for (std::int64_t c = 0; c < d.cin; ++c) {
    for (std::int64_t ki = 0; ki < d.kh; ++ki) {
      for (std::int64_t kj = 0; kj < d.kw; ++kj) {
        const T* row = cols + ((c * d.kh + ki) * d.kw + kj) * width;
        const std::int64_t x0 = kj * d.dw - d.geo.pad_left;
        const auto [lo, hi] = valid_range(ow, d.sw, x0, d.w);
        for (std::int64_t n = 0; n < d.n; ++n) {
          T* plane = input_grad + (n * d.cin + c) * d.h * d.w;
          const T* src = row + n * p;
          for (int oy = 0; oy < d.geo.out_h; ++oy) {
            const std::int64_t iy = std::int64_t{oy} * d.sh - d.geo.pad_top + ki * d.dh;
            if (iy < 0 || iy >= d.h) continue;
            T* in_row = plane + iy * d.w + x0;
            const T* src_row = src + std::int64_t{oy} * ow;
            if (d.sw == 1) {
              for (int ox = lo; ox < hi; ++ox) in_row[ox] += src_row[ox];
            } else {
              for (int ox = lo; ox < hi; ++ox) in_row[std::int64_t{ox} * d.sw] += src_row[ox];
            }
          }
        }
      }
    }
  }
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, std::string_view op, Fwd fwd, Deriv deriv) {
  auto xs = x.values();
  std::vector<T> out(xs.size());
  std::transform(xs.begin(), xs.end(), out.begin(), fwd);
  return Tensor<T>::make_result(x.shape(), std::move(out), op, {x}, [deriv](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    T* g = in.grad_data();
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      g[i] += self.grad[i] * deriv(in.value[i], self.value[i]);
    }
  });
}

}  // namespace

ConvGeometry conv_geometry(std::int64_t in_h, std::int64_t in_w, std::int64_t kernel_h,
                           std::int64_t kernel_w, const Conv2dOptions& options) {
  const auto [sh, sw] = options.stride;
  const auto [dh, dw] = options.dilation;
  if (sh < 1 || sw < 1 || dh < 1 || dw < 1) {
    throw ShapeError("conv2d: stride and dilation must be >= 1");
  }
  if (kernel_h < 1 || kernel_w < 1) throw ShapeError("conv2d: kernel extents must be >= 1");
  const std::int64_t span_h = (kernel_h - 1) * dh + 1;
  const std::int64_t span_w = (kernel_w - 1) * dw + 1;
  ConvGeometry geo{};
  if (options.padding.same) {
    geo.out_h = static_cast<int>((in_h + sh - 1) / sh);
    geo.out_w = static_cast<int>((in_w + sw - 1) / sw);
    const auto total_h = std::max<std::int64_t>((geo.out_h - 1) * std::int64_t{sh} + span_h - in_h, 0);
    const auto total_w = std::max<std::int64_t>((geo.out_w - 1) * std::int64_t{sw} + span_w - in_w, 0);
    geo.pad_top = static_cast<int>(total_h / 2);
    geo.pad_left = static_cast<int>(total_w / 2);
  } else {
    const auto& p = options.padding;
    if (p.top < 0 || p.bottom < 0 || p.left < 0 || p.right < 0) {
      throw ShapeError("conv2d: negative padding");
    }
    const std::int64_t padded_h = in_h + p.top + p.bottom;
    const std::int64_t padded_w = in_w + p.left + p.right;
    geo.out_h = padded_h >= span_h ? static_cast<int>((padded_h - span_h) / sh + 1) : 0;
    geo.out_w = padded_w >= span_w ? static_cast<int>((padded_w - span_w) / sw + 1) : 0;
    geo.pad_top = p.top;
    geo.pad_left = p.left;
  }
  if (geo.out_h <= 0 || geo.out_w <= 0) {
    std::ostringstream msg;
    msg << "conv2d: zero-size output for input " << in_h << "x" << in_w << " with kernel span "
        << span_h << "x" << span_w;
    throw ShapeError(msg.str());
  }
  return geo;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 const Conv2dOptions& options) {
  require_rank(input, 4, "conv2d input");
  require_rank(kernel, 4, "conv2d kernel");
  ConvDims d{};
  d.n = input.dim(0);
  d.cin = input.dim(1);
  d.h = input.dim(2);
  d.w = input.dim(3);
  d.cout = kernel.dim(0);
  d.kh = kernel.dim(2);
  d.kw = kernel.dim(3);
  if (kernel.dim(1) != d.cin) {
    throw ShapeError("conv2d: input has " + std::to_string(d.cin) + " channels but kernel " +
                     shape_str(kernel.shape()) + " expects " + std::to_string(kernel.dim(1)));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != d.cout)) {
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match " +
                     std::to_string(d.cout) + " output channels");
  }
  d.sh = options.stride[0];
  d.sw = options.stride[1];
  d.dh = options.dilation[0];
  d.dw = options.dilation[1];
  d.geo = conv_geometry(d.h, d.w, d.kh, d.kw, options);

  const std::int64_t k = d.patch();
  const std::int64_t p = d.pixels();
  const std::int64_t width = d.n * p;
  RowMatrix<T> out_mat(d.cout, width);
  {
    RowMatrix<T> cols(k, width);
    im2col(input.values().data(), d, cols.data());
    out_mat.noalias() = ConstMatrixMap<T>(kernel.values().data(), d.cout, k) * cols;
  }

  std::vector<T> out(static_cast<std::size_t>(d.n * d.cout * p));
  const T* bias_values = bias.defined() ? bias.values().data() : nullptr;
  for (std::int64_t n = 0; n < d.n; ++n) {
    for (std::int64_t co = 0; co < d.cout; ++co) {
      const T b = bias_values ? bias_values[co] : T(0);
      const T* src = out_mat.data() + co * width + n * p;
      T* dst = out.data() + (n * d.cout + co) * p;
      for (std::int64_t i = 0; i < p; ++i) dst[i] = src[i] + b;
    }
  }

  std::vector<Tensor<T>> inputs{input, kernel};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor<T>::make_result(
      {d.n, d.cout, d.geo.out_h, d.geo.out_w}, std::move(out), "conv2d", std::move(inputs),
      [d](Node<T>& self) {
        auto& in = *self.inputs[0];
        auto& ker = *self.inputs[1];
        Node<T>* b = self.inputs.size() > 2 ? self.inputs[2].get() : nullptr;
        const std::int64_t k = d.patch();
        const std::int64_t p = d.pixels();
        const std::int64_t width = d.n * p;

        RowMatrix<T> grad_mat(d.cout, width);
        for (std::int64_t n = 0; n < d.n; ++n) {
          for (std::int64_t co = 0; co < d.cout; ++co) {
            const T* src = self.grad.data() + (n * d.cout + co) * p;
            std::copy(src, src + p, grad_mat.data() + co * width + n * p);
          }
        }
        if (b && b->requires_grad) {
          T* gb = b->grad_data();
          for (std::int64_t co = 0; co < d.cout; ++co) {
            T acc = 0;
            const T* row = grad_mat.data() + co * width;
            for (std::int64_t i = 0; i < width; ++i) acc += row[i];
            gb[co] += acc;
          }
        }
        if (ker.requires_grad) {
          RowMatrix<T> cols(k, width);
          im2col(in.value.data(), d, cols.data());
          MatrixMap<T>(ker.grad_data(), d.cout, k).noalias() += grad_mat * cols.transpose();
        }
        if (in.requires_grad) {
          RowMatrix<T> grad_cols(k, width);
          grad_cols.noalias() =
              ConstMatrixMap<T>(ker.value.data(), d.cout, k).transpose() * grad_mat;
          col2im_add(grad_cols.data(), d, in.grad_data());
        }
      });
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& input, int factor) {
  require_rank(input, 4, "upsample_nearest");
  if (factor < 1) throw ShapeError("upsample_nearest: factor must be >= 1");
  const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::int64_t oh = h * factor, ow = w * factor;
  std::vector<T> out(static_cast<std::size_t>(n * c * oh * ow));
  auto xs = input.values();
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const T* src = xs.data() + plane * h * w;
    T* dst = out.data() + plane * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y) {
      for (std::int64_t x = 0; x < ow; ++x) dst[y * ow + x] = src[(y / factor) * w + x / factor];
    }
  }
  return Tensor<T>::make_result(
      {n, c, oh, ow}, std::move(out), "upsample_nearest", {input},
      [=](Node<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        T* g = in.grad_data();
        for (std::int64_t plane = 0; plane < n * c; ++plane) {
          const T* src = self.grad.data() + plane * oh * ow;
          T* dst = g + plane * h * w;
          for (std::int64_t y = 0; y < oh; ++y) {
            for (std::int64_t x = 0; x < ow; ++x) dst[(y / factor) * w + x / factor] += src[y * ow + x];
          }
        }
      });
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& scale, const Tensor<T>& shift,
                     BatchNormBuffers<T>& buffers, BatchNormMode mode,
                     const BatchNormOptions& options) {
  require_rank(input, 4, "batch_norm");
  const auto n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (scale.numel() != c || shift.numel() != c || buffers.running_mean.numel() != c ||
      buffers.running_var.numel() != c) {
    throw ShapeError("batch_norm: per-channel tensors do not match " + std::to_string(c) +
                     " channels of input " + shape_str(input.shape()));
  }
  const std::int64_t count = n * hw;
  const double eps = options.epsilon;
  auto xs = input.values();

  std::vector<T> mean(c), inv_std(c);
  if (mode == BatchNormMode::kTrain) {
    if (count < 2) {
      throw ShapeError("batch_norm: train mode needs N*H*W >= 2, got input " +
                       shape_str(input.shape()));
    }
    const bool first = buffers.batches_tracked.item() == T(0);
    auto rm = buffers.running_mean.mutable_values();
    auto rv = buffers.running_var.mutable_values();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double s = 0;
      for (std::int64_t i = 0; i < n; ++i) {
        const T* p = xs.data() + (i * c + ch) * hw;
        for (std::int64_t j = 0; j < hw; ++j) s += p[j];
      }
      const double mu = s / count;
      double v = 0;
      for (std::int64_t i = 0; i < n; ++i) {
        const T* p = xs.data() + (i * c + ch) * hw;
        for (std::int64_t j = 0; j < hw; ++j) v += (p[j] - mu) * (p[j] - mu);
      }
      v /= count;
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(v + eps));
      if (first) {
        rm[ch] = static_cast<T>(mu);
        rv[ch] = static_cast<T>(v);
      } else {
        rm[ch] = static_cast<T>(options.momentum * rm[ch] + (1.0 - options.momentum) * mu);
        rv[ch] = static_cast<T>(options.momentum * rv[ch] + (1.0 - options.momentum) * v);
      }
    }
    buffers.batches_tracked.mutable_values()[0] += T(1);
  } else {
    if (buffers.batches_tracked.item() == T(0)) {
      throw std::logic_error("batch_norm: eval mode requested before any running statistics exist");
    }
    auto rm = buffers.running_mean.values();
    auto rv = buffers.running_var.values();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rv[ch]) + eps));
    }
  }

  auto gamma = scale.values();
  auto beta = shift.values();
  std::vector<T> out(xs.size());
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* p = xs.data() + (i * c + ch) * hw;
      T* q = out.data() + (i * c + ch) * hw;
      for (std::int64_t j = 0; j < hw; ++j) q[j] = gamma[ch] * (p[j] - mean[ch]) * inv_std[ch] + beta[ch];
    }
  }

  const bool batch_stats = mode == BatchNormMode::kTrain;
  return Tensor<T>::make_result(
      input.shape(), std::move(out), "batch_norm", {input, scale, shift},
      [=, mean = std::move(mean), inv_std = std::move(inv_std)](Node<T>& self) {
        auto& in = *self.inputs[0];
        auto& g_node = *self.inputs[1];
        auto& b_node = *self.inputs[2];
        const T* x = in.value.data();
        const T* dy = self.grad.data();
        for (std::int64_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0, sum_dy_xhat = 0;
          for (std::int64_t i = 0; i < n; ++i) {
            const std::int64_t off = (i * c + ch) * hw;
            for (std::int64_t j = 0; j < hw; ++j) {
              const double xhat = (x[off + j] - mean[ch]) * inv_std[ch];
              sum_dy += dy[off + j];
              sum_dy_xhat += dy[off + j] * xhat;
            }
          }
          if (g_node.requires_grad) g_node.grad_data()[ch] += static_cast<T>(sum_dy_xhat);
          if (b_node.requires_grad) b_node.grad_data()[ch] += static_cast<T>(sum_dy);
          if (!in.requires_grad) continue;
          T* dx = in.grad_data();
          const double gamma_c = g_node.value[ch];
          const double k = gamma_c * inv_std[ch];
          for (std::int64_t i = 0; i < n; ++i) {
            const std::int64_t off = (i * c + ch) * hw;
            for (std::int64_t j = 0; j < hw; ++j) {
              if (batch_stats) {
                const double xhat = (x[off + j] - mean[ch]) * inv_std[ch];
                dx[off + j] += static_cast<T>(
                    k * (dy[off + j] - sum_dy / count - xhat * sum_dy_xhat / count));
              } else {
                dx[off + j] += static_cast<T>(k * dy[off + j]);
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary<T>(
      x, "sigmoid",
      [](T v) {
        if (v >= 0) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary<T>(
      x, "tanh", [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, double slope) {
  const T s = static_cast<T>(slope);
  return unary<T>(
      x, "leaky_relu", [s](T v) { return v > 0 ? v : s * v; },
      [s](T v, T) { return v > 0 ? T(1) : s; });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  auto as = a.values();
  auto bs = b.values();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] + bs[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), "add", {a, b}, [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      T* g = in->grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  auto as = a.values();
  auto bs = b.values();
  std::vector<T> out(as.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] * bs[i];
  return Tensor<T>::make_result(a.shape(), std::move(out), "mul", {a, b}, [](Node<T>& self) {
    auto& lhs = *self.inputs[0];
    auto& rhs = *self.inputs[1];
    if (lhs.requires_grad) {
      T* g = lhs.grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * rhs.value[i];
    }
    if (rhs.requires_grad) {
      T* g = rhs.grad_data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * lhs.value[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double factor) {
  const T f = static_cast<T>(factor);
  return unary<T>(x, "scale", [f](T v) { return f * v; }, [f](T, T) { return f; });
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::int64_t> extents;
  for (const auto& part : parts) {
    const Shape& s = part.shape();
    bool compatible = s.size() == first.size();
    for (std::size_t i = 0; compatible && i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) compatible = false;
    }
    if (!compatible) {
      throw ShapeError("concat: operand " + shape_str(s) + " incompatible with " +
                       shape_str(first) + " along axis " + std::to_string(axis));
    }
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  const std::int64_t total = out_shape[axis];

  std::vector<T> out(static_cast<std::size_t>(shape_numel(out_shape)));
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].values().data();
    const std::int64_t block = extents[k] * inner;
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy(src + o * block, src + (o + 1) * block, out.data() + (o * total + offset) * inner);
    }
    offset += extents[k];
  }
  std::vector<Tensor<T>> inputs(parts.begin(), parts.end());
  return Tensor<T>::make_result(
      std::move(out_shape), std::move(out), "concat", std::move(inputs),
      [outer, inner, total, extents](Node<T>& self) {
        std::int64_t offset = 0;
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
          auto& in = *self.inputs[k];
          const std::int64_t block = extents[k] * inner;
          if (in.requires_grad) {
            T* g = in.grad_data();
            for (std::int64_t o = 0; o < outer; ++o) {
              const T* src = self.grad.data() + (o * total + offset) * inner;
              for (std::int64_t i = 0; i < block; ++i) g[o * block + i] += src[i];
            }
          }
          offset += extents[k];
        }
      });
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  const Tensor<T> parts[] = {a, b};
  return concat<T>(parts, 1);
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::int64_t start, std::int64_t count) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("slice: axis out of range for " + shape_str(s));
  if (start < 0 || count < 1 || start + count > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") outside axis " + std::to_string(axis) +
                     " of " + shape_str(s));
  }
  std::int64_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::int64_t total = s[axis];
  Shape out_shape = s;
  out_shape[axis] = count;
  std::vector<T> out(static_cast<std::size_t>(outer * count * inner));
  const T* src = x.values().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    const T* from = src + (o * total + start) * inner;
    std::copy(from, from + count * inner, out.data() + o * count * inner);
  }
  return Tensor<T>::make_result(
      std::move(out_shape), std::move(out), "slice", {x},
      [outer, inner, total, start, count](Node<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        T* g = in.grad_data();
        for (std::int64_t o = 0; o < outer; ++o) {
          T* to = g + (o * total + start) * inner;
          const T* from = self.grad.data() + o * count * inner;
          for (std::int64_t i = 0; i < count * inner; ++i) to[i] += from[i];
        }
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0;
  for (T v : x.values()) acc += v;
  return Tensor<T>::make_result({}, {static_cast<T>(acc)}, "sum", {x}, [](Node<T>& self) {
    auto& in = *self.inputs[0];
    if (!in.requires_grad) return;
    T* g = in.grad_data();
    for (std::size_t i = 0; i < in.value.size(); ++i) g[i] += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& prediction, const Tensor<T>& target, double epsilon) {
  require_same_shape(prediction, target, "bce_loss");
  if (prediction.rank() < 1) throw ShapeError("bce_loss: needs a leading batch axis");
  for (T t : target.values()) {
    if (!(t >= T(0) && t <= T(1))) {
      throw std::invalid_argument("bce_loss: target value outside [0, 1]");
    }
  }
  const std::int64_t n = prediction.dim(0);
  const std::int64_t per = n ? prediction.numel() / n : 0;
  const double lo = epsilon, hi = 1.0 - epsilon;
  auto ps = prediction.values();
  auto ts = target.values();
  std::vector<T> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    double acc = 0;
    for (std::int64_t j = 0; j < per; ++j) {
      const double p = std::clamp<double>(ps[i * per + j], lo, hi);
      const double t = ts[i * per + j];
      acc -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
    out[i] = static_cast<T>(acc);
  }
  return Tensor<T>::make_result(
      {n}, std::move(out), "bce_loss", {prediction, target},
      [n, per, lo, hi](Node<T>& self) {
        auto& pred = *self.inputs[0];
        auto& tgt = *self.inputs[1];
        if (!pred.requires_grad) return;
        T* g = pred.grad_data();
        for (std::int64_t i = 0; i < n; ++i) {
          const double dy = self.grad[i];
          for (std::int64_t j = 0; j < per; ++j) {
            const double p = pred.value[i * per + j];
            if (p < lo || p > hi) continue;
            const double t = tgt.value[i * per + j];
            g[i * per + j] += static_cast<T>(dy * ((1.0 - t) / (1.0 - p) - t / p));
          }
        }
      });
}

#define VLN_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,               \
                            const Conv2dOptions&);                                              \
  template Tensor<T> upsample_nearest(const Tensor<T>&, int);                                   \
  template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                BatchNormBuffers<T>&, BatchNormMode, const BatchNormOptions&); \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                 \
  template Tensor<T> tanh(const Tensor<T>&);                                                    \
  template Tensor<T> leaky_relu(const Tensor<T>&, double);                                      \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> scale(const Tensor<T>&, double);                                           \
  template Tensor<T> concat(std::span<const Tensor<T>>, std::size_t);                           \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> slice(const Tensor<T>&, std::size_t, std::int64_t, std::int64_t);          \
  template Tensor<T> sum(const Tensor<T>&);                                                     \
  template Tensor<T> mean(const Tensor<T>&);                                                    \
  template Tensor<T> bce_loss(const Tensor<T>&, const Tensor<T>&, double);

VLN_INSTANTIATE_OPS(float)
VLN_INSTANTIATE_OPS(double)

#undef VLN_INSTANTIATE_OPS

}  // namespace vln
