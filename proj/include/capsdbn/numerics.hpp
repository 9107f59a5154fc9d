#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "capsdbn/error.hpp"
#include "capsdbn/random.hpp"
#include "capsdbn/tensor.hpp"

namespace capsdbn {

// Convolutions are cross-correlations (no kernel flip). Every routine
// accumulates in double in a fixed loop order, so results are bit-identical
// across runs.

namespace detail {

inline std::size_t strided_extent(std::size_t in, std::size_t k, std::size_t stride,
                                  const char* op) {
  if (k == 0 || k > in)
    throw ConfigError(std::string(op) + ": kernel extent " + std::to_string(k) +
                      " exceeds input extent " + std::to_string(in));
  if (stride == 0) throw ConfigError(std::string(op) + ": stride must be positive");
  return (in - k) / stride + 1;
}

}  // namespace detail

/// Valid cross-correlation of input [C,H,W] with kernels [G,C,k,k].
/// Output is [G, (H-k)/s+1, (W-k)/s+1]; `bias` is empty or has G entries.
template <typename T>
Tensor<T> conv2d_valid(const Tensor<T>& input, const Tensor<T>& kernels,
                       std::span<const T> bias = {}, std::size_t stride = 1) {
  if (input.rank() != 3 || kernels.rank() != 4)
    throw ConfigError("conv2d_valid: expected input [C,H,W] and kernels [G,C,k,k]");
  const std::size_t C = input.extent(0), H = input.extent(1), W = input.extent(2);
  const std::size_t G = kernels.extent(0), k = kernels.extent(2);
  if (kernels.extent(1) != C)
    throw ConfigError("conv2d_valid: kernel channels " + std::to_string(kernels.extent(1)) +
                      " != input channels " + std::to_string(C));
  if (kernels.extent(3) != k) throw ConfigError("conv2d_valid: kernels must be square");
  if (!bias.empty() && bias.size() != G)
    throw ConfigError("conv2d_valid: bias length must equal kernel groups");
  const std::size_t Ho = detail::strided_extent(H, k, stride, "conv2d_valid");
  const std::size_t Wo = detail::strided_extent(W, k, stride, "conv2d_valid");

  Tensor<T> out({G, Ho, Wo});
  std::vector<double> acc(Ho * Wo);
  const T* in = input.data().data();
  for (std::size_t g = 0; g < G; ++g) {
    std::fill(acc.begin(), acc.end(), bias.empty() ? 0.0 : static_cast<double>(bias[g]));
    for (std::size_t c = 0; c < C; ++c) {
      const T* plane = in + c * H * W;
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const double w = static_cast<double>(kernels(g, c, i, j));
          for (std::size_t y = 0; y < Ho; ++y) {
            const T* row = plane + (y * stride + i) * W + j;
            double* a = acc.data() + y * Wo;
            for (std::size_t x = 0; x < Wo; ++x) a[x] += w * static_cast<double>(row[x * stride]);
          }
        }
      }
    }
    std::span<T> dst = out.slice(g);
    for (std::size_t n = 0; n < acc.size(); ++n) dst[n] = static_cast<T>(acc[n]);
  }
  require_finite(out, "conv2d_valid");
  return out;
}

/// Transpose of conv2d_valid (without bias): input [G,h,w], kernels [G,C,k,k],
/// output [C, (h-1)s+k, (w-1)s+k]. For stride 1 this is the "full" convolution.
template <typename T>
Tensor<T> conv2d_full(const Tensor<T>& input, const Tensor<T>& kernels, std::size_t stride = 1) {
  if (input.rank() != 3 || kernels.rank() != 4)
    throw ConfigError("conv2d_full: expected input [G,h,w] and kernels [G,C,k,k]");
  const std::size_t G = input.extent(0), h = input.extent(1), w = input.extent(2);
  if (kernels.extent(0) != G)
    throw ConfigError("conv2d_full: kernel groups " + std::to_string(kernels.extent(0)) +
                      " != input groups " + std::to_string(G));
  if (stride == 0) throw ConfigError("conv2d_full: stride must be positive");
  const std::size_t C = kernels.extent(1), k = kernels.extent(2);
  if (kernels.extent(3) != k) throw ConfigError("conv2d_full: kernels must be square");
  const std::size_t Ho = (h - 1) * stride + k, Wo = (w - 1) * stride + k;

  std::vector<double> acc(C * Ho * Wo, 0.0);
  for (std::size_t g = 0; g < G; ++g) {
    std::span<const T> src = input.slice(g);
    for (std::size_t c = 0; c < C; ++c) {
      double* plane = acc.data() + c * Ho * Wo;
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const double kv = static_cast<double>(kernels(g, c, i, j));
          for (std::size_t y = 0; y < h; ++y) {
            double* row = plane + (y * stride + i) * Wo + j;
            const T* s = src.data() + y * w;
            for (std::size_t x = 0; x < w; ++x) row[x * stride] += kv * static_cast<double>(s[x]);
          }
        }
      }
    }
  }
  Tensor<T> out({C, Ho, Wo});
  for (std::size_t n = 0; n < acc.size(); ++n) out[n] = static_cast<T>(acc[n]);
  require_finite(out, "conv2d_full");
  return out;
}

/// Gradient of sum(grad_out * conv2d_valid(input, K)) with respect to K:
/// result [G,C,k,k] where G = grad_out groups and C = input channels.
template <typename T>
Tensor<T> conv2d_kernel_grad(const Tensor<T>& input, const Tensor<T>& grad_out,
                             std::size_t k, std::size_t stride = 1) {
  const std::size_t C = input.extent(0), H = input.extent(1), W = input.extent(2);
  const std::size_t G = grad_out.extent(0), Ho = grad_out.extent(1), Wo = grad_out.extent(2);
  if (detail::strided_extent(H, k, stride, "conv2d_kernel_grad") != Ho ||
      detail::strided_extent(W, k, stride, "conv2d_kernel_grad") != Wo)
    throw ConfigError("conv2d_kernel_grad: gradient extent does not match input/kernel");

  Tensor<T> out({G, C, k, k});
  for (std::size_t g = 0; g < G; ++g) {
    const T* go = grad_out.slice(g).data();
    for (std::size_t c = 0; c < C; ++c) {
      const T* plane = input.slice(c).data();
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          double acc = 0.0;
          for (std::size_t y = 0; y < Ho; ++y) {
            const T* row = plane + (y * stride + i) * W + j;
            const T* gr = go + y * Wo;
            for (std::size_t x = 0; x < Wo; ++x)
              acc += static_cast<double>(gr[x]) * static_cast<double>(row[x * stride]);
          }
          out(g, c, i, j) = static_cast<T>(acc);
        }
      }
    }
  }
  return out;
}

template <typename T>
T sigmoid(T x) noexcept {
  const double d = static_cast<double>(x);
  if (d >= 0.0) return static_cast<T>(1.0 / (1.0 + std::exp(-d)));
  const double e = std::exp(d);
  return static_cast<T>(e / (1.0 + e));
}

template <typename T>
Tensor<T> sigmoid(Tensor<T> x) {
  require_finite(x, "sigmoid");
  for (T& v : x.data()) v = sigmoid(v);
  return x;
}

/// Softmax along `axis`; each slice along that axis sums to one.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw ConfigError("softmax: axis out of range");
  require_finite(x, "softmax");
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t n = s[axis];

  Tensor<T> out(s);
  std::vector<double> e(n);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mx = static_cast<double>(x[base]);
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(x[base + j * inner]));
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        e[j] = std::exp(static_cast<double>(x[base + j * inner]) - mx);
        total += e[j];
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] = static_cast<T>(e[j] / total);
    }
  }
  return out;
}

/// Softmax of a flat vector, computed in double.
template <typename T>
std::vector<double> softmax(std::span<const T> x) {
  if (x.empty()) throw ConfigError("softmax: empty input");
  if (!all_finite(x)) throw NumericError("softmax: non-finite value");
  double mx = static_cast<double>(x[0]);
  for (T v : x) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> e(x.size());
  double total = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    e[j] = std::exp(static_cast<double>(x[j]) - mx);
    total += e[j];
  }
  for (double& v : e) v /= total;
  return e;
}

/// Central-difference gradient of scalar `f` at `x`, evaluated in double.
template <typename F>
Tensor<double> finite_diff_grad(F&& f, Tensor<double> x, double h) {
  Tensor<double> grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("finite_diff_grad: objective is non-finite");
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

/// Fills `t` with N(0, stddev^2) draws in storage order.
template <typename T>
void fill_normal(Tensor<T>& t, RandomStream& stream, double stddev) {
  for (T& v : t.data()) v = static_cast<T>(stream.normal(0.0, stddev));
}

}  // namespace capsdbn
