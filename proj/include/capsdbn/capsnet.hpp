#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "capsdbn/error.hpp"
#include "capsdbn/numerics.hpp"
#include "capsdbn/random.hpp"
#include "capsdbn/tensor.hpp"

namespace capsdbn {

enum class Activation : std::uint32_t { relu = 0, tanh = 1 };

inline Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw ConfigError("caps.activation: unknown nonlinearity '" + std::string(name) + "'");
}

inline const char* activation_name(Activation a) {
  return a == Activation::relu ? "relu" : "tanh";
}

/// Architecture of the capsule network.
///
///   input [C,H,W]
///   -> conv (conv_filters x conv_kernel^2) + activation       [F,H1,W1]
///   -> primary conv (groups*dim channels, kernel, stride)     [G*d1,H2,W2]
///   -> G*H2*W2 primary capsules of dimension d1, squashed
///   -> prediction vectors W_ij u_i for K category capsules of dimension d2
///   -> routing-by-agreement for `routing_iters` iterations
struct CapsNetSpec {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t conv_filters = 8;
  std::size_t conv_kernel = 5;
  std::size_t primary_groups = 4;
  std::size_t primary_dim = 4;
  std::size_t primary_kernel = 6;
  std::size_t primary_stride = 2;
  std::size_t category_count = 5;
  std::size_t category_dim = 8;
  std::size_t routing_iters = 3;
  Activation activation = Activation::relu;

  std::size_t conv_height() const { return height - conv_kernel + 1; }
  std::size_t conv_width() const { return width - conv_kernel + 1; }
  std::size_t primary_height() const { return (conv_height() - primary_kernel) / primary_stride + 1; }
  std::size_t primary_width() const { return (conv_width() - primary_kernel) / primary_stride + 1; }
  std::size_t primary_channels() const { return primary_groups * primary_dim; }
  std::size_t num_children() const { return primary_groups * primary_height() * primary_width(); }

  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("capsnet spec: " + msg); };
    if (channels == 0 || height == 0 || width == 0) fail("input extents must be positive");
    if (routing_iters < 1) fail("routing_iters must be >= 1");
    if (primary_dim < 2) fail("primary_dim must be >= 2");
    if (category_dim < 2) fail("category_dim must be >= 2");
    if (category_count < 2) fail("category_count must be >= 2");
    if (conv_filters < 1 || primary_groups < 1) fail("conv_filters and primary_groups must be >= 1");
    if (primary_stride < 1) fail("primary_stride must be >= 1");
    if (conv_kernel < 1 || conv_kernel > std::min(height, width))
      fail("conv_kernel " + std::to_string(conv_kernel) + " does not fit input " +
           std::to_string(height) + "x" + std::to_string(width));
    if (primary_kernel < 1 || primary_kernel > std::min(conv_height(), conv_width()))
      fail("primary_kernel " + std::to_string(primary_kernel) + " does not fit conv output " +
           std::to_string(conv_height()) + "x" + std::to_string(conv_width()));
    if ((conv_height() - primary_kernel) % primary_stride != 0 ||
        (conv_width() - primary_kernel) % primary_stride != 0)
      fail("primary_stride " + std::to_string(primary_stride) +
           " must divide (conv extent - primary_kernel)");
  }

  std::array<std::uint32_t, 13> to_dims() const {
    auto u = [](std::size_t v) { return static_cast<std::uint32_t>(v); };
    return {u(channels),       u(height),         u(width),          u(conv_filters),
            u(conv_kernel),    u(primary_groups), u(primary_dim),    u(primary_kernel),
            u(primary_stride), u(category_count), u(category_dim),   u(routing_iters),
            static_cast<std::uint32_t>(activation)};
  }

  static CapsNetSpec from_dims(std::span<const std::uint32_t> d) {
    if (d.size() != 13) throw IoError("capsnet spec: expected 13 dims, got " + std::to_string(d.size()));
    if (d[12] > 1) throw IoError("capsnet spec: unknown activation id");
    CapsNetSpec s{d[0], d[1], d[2], d[3], d[4], d[5], d[6], d[7], d[8], d[9], d[10], d[11],
                  static_cast<Activation>(d[12])};
    s.validate();
    return s;
  }

  bool operator==(const CapsNetSpec&) const = default;
};

template <typename T>
struct CapsNetParams {
  Tensor<T> conv_kernels;     // [F, C, k0, k0]
  Tensor<T> conv_bias;        // [F]
  Tensor<T> primary_kernels;  // [G*d1, F, k1, k1]
  Tensor<T> primary_bias;     // [G*d1]
  Tensor<T> weights;          // [children, K, d2, d1]
  std::uint64_t version = 0;  // bumped on every update; guards stale caches

  static constexpr std::array<std::string_view, 5> kNames = {
      "conv_kernels", "conv_bias", "primary_kernels", "primary_bias", "weights"};

  std::array<Tensor<T>*, 5> tensors() {
    return {&conv_kernels, &conv_bias, &primary_kernels, &primary_bias, &weights};
  }
  std::array<const Tensor<T>*, 5> tensors() const {
    return {&conv_kernels, &conv_bias, &primary_kernels, &primary_bias, &weights};
  }

  static CapsNetParams zeros(const CapsNetSpec& s) {
    s.validate();
    CapsNetParams p;
    p.conv_kernels = Tensor<T>({s.conv_filters, s.channels, s.conv_kernel, s.conv_kernel});
    p.conv_bias = Tensor<T>({s.conv_filters});
    p.primary_kernels =
        Tensor<T>({s.primary_channels(), s.conv_filters, s.primary_kernel, s.primary_kernel});
    p.primary_bias = Tensor<T>({s.primary_channels()});
    p.weights = Tensor<T>({s.num_children(), s.category_count, s.category_dim, s.primary_dim});
    return p;
  }

  template <typename U>
  CapsNetParams<U> cast() const {
    CapsNetParams<U> out;
    out.conv_kernels = conv_kernels.template cast<U>();
    out.conv_bias = conv_bias.template cast<U>();
    out.primary_kernels = primary_kernels.template cast<U>();
    out.primary_bias = primary_bias.template cast<U>();
    out.weights = weights.template cast<U>();
    out.version = version;
    return out;
  }

  void check_shapes(const CapsNetSpec& s) const {
    const CapsNetParams ref = zeros(s);
    auto mine = tensors();
    auto theirs = ref.tensors();
    for (std::size_t i = 0; i < mine.size(); ++i)
      if (mine[i]->shape() != theirs[i]->shape())
        throw ConfigError("capsnet params: " + std::string(kNames[i]) + " has shape " +
                          shape_str(mine[i]->shape()) + ", spec requires " +
                          shape_str(theirs[i]->shape()));
  }
};

/// He-style initialization for the convolutions. Prediction matrices are
/// scaled so that the summed prediction for a parent starts near unit norm.
template <typename T>
CapsNetParams<T> init_params(const CapsNetSpec& s, RandomStream& stream) {
  CapsNetParams<T> p = CapsNetParams<T>::zeros(s);
  fill_normal(p.conv_kernels, stream,
              std::sqrt(2.0 / static_cast<double>(s.channels * s.conv_kernel * s.conv_kernel)));
  fill_normal(p.primary_kernels, stream,
              std::sqrt(2.0 / static_cast<double>(s.conv_filters * s.primary_kernel * s.primary_kernel)));
  fill_normal(p.weights, stream,
              static_cast<double>(s.category_count) /
                  std::sqrt(static_cast<double>(s.num_children() * s.primary_dim)));
  return p;
}

// --- squash -----------------------------------------------------------------

/// v = (|s|^2 / (1 + |s|^2)) * s / |s|; the zero vector maps to zero.
template <typename T>
void squash(std::span<const T> s, std::span<T> out) {
  double n2 = 0.0;
  for (T v : s) n2 += static_cast<double>(v) * static_cast<double>(v);
  if (n2 == 0.0) {
    std::fill(out.begin(), out.end(), T{0});
    return;
  }
  const double n = std::sqrt(n2);
  const double scale = n / (1.0 + n2);
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = static_cast<T>(scale * static_cast<double>(s[i]));
}

template <typename T>
std::vector<T> squash(std::span<const T> s) {
  std::vector<T> out(s.size());
  squash(s, std::span<T>(out));
  return out;
}

/// Adds J_squash(s)^T g to `grad_s`. The Jacobian is symmetric:
/// J = f(n) I + f'(n)/n s s^T with f(n) = n / (1 + n^2).
template <typename T>
void squash_backward(std::span<const T> s, std::span<const T> g, std::span<T> grad_s) {
  double n2 = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    n2 += static_cast<double>(s[i]) * static_cast<double>(s[i]);
    sg += static_cast<double>(s[i]) * static_cast<double>(g[i]);
  }
  if (n2 == 0.0) return;
  const double n = std::sqrt(n2);
  const double f = n / (1.0 + n2);
  const double coef = (1.0 - n2) / ((1.0 + n2) * (1.0 + n2) * n);
  for (std::size_t i = 0; i < s.size(); ++i)
    grad_s[i] += static_cast<T>(f * static_cast<double>(g[i]) + coef * sg * static_cast<double>(s[i]));
}

// --- routing ----------------------------------------------------------------

template <typename T>
struct RoutingState {
  Tensor<T> logits;          // b_ij [children, K]
  Tensor<T> couplings;       // c_ij [children, K]
  Tensor<T> preactivations;  // s_j  [K, d2]
  Tensor<T> outputs;         // v_j  [K, d2]
};

/// Every iteration's state; the last entry is the routing result.
template <typename T>
using RoutingTrace = std::vector<RoutingState<T>>;

/// Routing-by-agreement over predictions [children, K, d2].
///
/// b starts at zero; each iteration computes c = softmax_j(b), s_j = sum_i
/// c_ij u_j|i, v_j = squash(s_j) and, except on the last iteration,
/// b_ij += <u_j|i, v_j>.
template <typename T>
RoutingTrace<T> route_trace(const Tensor<T>& predictions, std::size_t iterations) {
  if (iterations < 1) throw ConfigError("route: iterations must be >= 1");
  if (predictions.rank() != 3) throw ConfigError("route: predictions must be [children, K, d]");
  require_finite(predictions, "route");
  const std::size_t n = predictions.extent(0), K = predictions.extent(1), d = predictions.extent(2);

  RoutingTrace<T> trace;
  trace.reserve(iterations);
  Tensor<T> logits({n, K});
  std::vector<double> s(d);
  for (std::size_t t = 0; t < iterations; ++t) {
    RoutingState<T> st;
    st.logits = logits;
    st.couplings = softmax(logits, 1);
    st.preactivations = Tensor<T>({K, d});
    st.outputs = Tensor<T>({K, d});
    for (std::size_t j = 0; j < K; ++j) {
      std::fill(s.begin(), s.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double c = st.couplings(i, j);
        const T* u = &predictions(i, j, 0);
        for (std::size_t q = 0; q < d; ++q) s[q] += c * static_cast<double>(u[q]);
      }
      for (std::size_t q = 0; q < d; ++q) st.preactivations(j, q) = static_cast<T>(s[q]);
      squash<T>(st.preactivations.slice(j), st.outputs.slice(j));
    }
    if (t + 1 < iterations) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < K; ++j) {
          const double agreement =
              dot<T>(std::span<const T>(&predictions(i, j, 0), d), st.outputs.slice(j));
          logits(i, j) = static_cast<T>(static_cast<double>(logits(i, j)) + agreement);
        }
    }
    trace.push_back(std::move(st));
  }
  return trace;
}

template <typename T>
RoutingState<T> route(const Tensor<T>& predictions, std::size_t iterations) {
  return std::move(route_trace(predictions, iterations).back());
}

// --- forward ----------------------------------------------------------------

template <typename T>
struct ForwardCache {
  Tensor<T> input;
  Tensor<T> conv_pre;      // [F,H1,W1]
  Tensor<T> conv_act;      // [F,H1,W1]
  Tensor<T> primary_pre;   // [G*d1,H2,W2]
  Tensor<T> capsules_pre;  // [children, d1] before squash
  Tensor<T> capsules;      // [children, d1]
  Tensor<T> predictions;   // [children, K, d2]
  RoutingTrace<T> routing;
  std::uint64_t params_version = 0;
};

template <typename T>
struct ForwardResult {
  Tensor<T> class_vectors;  // [K, d2]
  std::vector<T> norms;     // [K]
  ForwardCache<T> cache;
};

namespace detail {

template <typename T>
T activate(T x, Activation a) {
  if (a == Activation::relu) return x > T{0} ? x : T{0};
  return static_cast<T>(std::tanh(static_cast<double>(x)));
}

// d activation / d pre, expressed through the pre- and post-activation values.
template <typename T>
T activate_grad(T pre, T post, Activation a) {
  if (a == Activation::relu) return pre > T{0} ? T{1} : T{0};
  return static_cast<T>(1.0 - static_cast<double>(post) * static_cast<double>(post));
}

// Capsule i = (g, y, x) reads channels g*d1 .. g*d1+d1-1 at position (y, x).
inline std::size_t capsule_channel(std::size_t i, std::size_t q, std::size_t d1, std::size_t plane) {
  return (i / plane) * d1 + q;
}

}  // namespace detail

template <typename T>
ForwardResult<T> forward(const Tensor<T>& input, const CapsNetParams<T>& params, const CapsNetSpec& spec) {
  const Shape expected{spec.channels, spec.height, spec.width};
  if (input.shape() != expected)
    throw ConfigError("capsnet forward: input shape " + shape_str(input.shape()) +
                      " != spec input " + shape_str(expected));
  const std::size_t n = spec.num_children(), K = spec.category_count;
  const std::size_t d1 = spec.primary_dim, d2 = spec.category_dim;
  const std::size_t plane = spec.primary_height() * spec.primary_width();

  ForwardResult<T> r;
  ForwardCache<T>& c = r.cache;
  c.params_version = params.version;
  c.input = input;
  c.conv_pre = conv2d_valid(input, params.conv_kernels, params.conv_bias.data());
  c.conv_act = c.conv_pre;
  for (T& v : c.conv_act.data()) v = detail::activate(v, spec.activation);
  c.primary_pre = conv2d_valid(c.conv_act, params.primary_kernels, params.primary_bias.data(),
                               spec.primary_stride);

  c.capsules_pre = Tensor<T>({n, d1});
  c.capsules = Tensor<T>({n, d1});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t pos = i % plane;
    for (std::size_t q = 0; q < d1; ++q)
      c.capsules_pre(i, q) = c.primary_pre[detail::capsule_channel(i, q, d1, plane) * plane + pos];
    squash<T>(c.capsules_pre.slice(i), c.capsules.slice(i));
  }

  c.predictions = Tensor<T>({n, K, d2});
  for (std::size_t i = 0; i < n; ++i) {
    const T* u = &c.capsules(i, 0);
    for (std::size_t j = 0; j < K; ++j)
      for (std::size_t p = 0; p < d2; ++p) {
        const T* w = &params.weights(i, j, p, 0);
        double acc = 0.0;
        for (std::size_t q = 0; q < d1; ++q) acc += static_cast<double>(w[q]) * static_cast<double>(u[q]);
        c.predictions(i, j, p) = static_cast<T>(acc);
      }
  }

  c.routing = route_trace(c.predictions, spec.routing_iters);
  r.class_vectors = c.routing.back().outputs;
  r.norms.resize(K);
  for (std::size_t j = 0; j < K; ++j) {
    std::span<const T> v = r.class_vectors.slice(j);
    r.norms[j] = static_cast<T>(std::sqrt(dot(v, v)));
  }
  return r;
}

// --- loss and prediction ----------------------------------------------------

struct MarginLossCfg {
  double m_plus = 0.9;
  double m_minus = 0.1;
  double lambda = 0.5;
};

/// L = sum_k T_k max(0, m+ - |v_k|)^2 + lambda (1 - T_k) max(0, |v_k| - m-)^2
template <typename T>
double margin_loss(std::span<const T> norms, std::size_t label, const MarginLossCfg& cfg = {}) {
  if (label >= norms.size())
    throw ConfigError("margin_loss: label " + std::to_string(label) + " out of range for " +
                      std::to_string(norms.size()) + " categories");
  double loss = 0.0;
  for (std::size_t k = 0; k < norms.size(); ++k) {
    const double n = static_cast<double>(norms[k]);
    if (k == label) {
      const double m = std::max(0.0, cfg.m_plus - n);
      loss += m * m;
    } else {
      const double m = std::max(0.0, n - cfg.m_minus);
      loss += cfg.lambda * m * m;
    }
  }
  return loss;
}

template <typename T>
std::vector<double> margin_loss_grad(std::span<const T> norms, std::size_t label,
                                     const MarginLossCfg& cfg = {}) {
  if (label >= norms.size()) throw ConfigError("margin_loss: label out of range");
  std::vector<double> g(norms.size());
  for (std::size_t k = 0; k < norms.size(); ++k) {
    const double n = static_cast<double>(norms[k]);
    g[k] = k == label ? -2.0 * std::max(0.0, cfg.m_plus - n)
                      : 2.0 * cfg.lambda * std::max(0.0, n - cfg.m_minus);
  }
  return g;
}

/// Argmax with ties broken toward the lowest id.
template <typename T>
std::size_t predict(std::span<const T> scores) {
  if (scores.empty()) throw ConfigError("predict: no categories");
  std::size_t best = 0;
  for (std::size_t k = 1; k < scores.size(); ++k)
    if (scores[k] > scores[best]) best = k;
  return best;
}

// --- backward ---------------------------------------------------------------

/// Accumulates the gradient of margin_loss(forward(input).norms, label) into
/// `grad` (same shapes as params) and returns the loss. Gradients flow through
/// every unrolled routing iteration, including the coupling softmax.
template <typename T>
double backward(const ForwardCache<T>& cache, std::size_t label, const CapsNetParams<T>& params,
                const CapsNetSpec& spec, CapsNetParams<T>& grad, const MarginLossCfg& loss_cfg = {}) {
  if (cache.params_version != params.version || cache.input.empty())
    throw UsageError("capsnet backward: cache does not belong to the current parameters");
  const std::size_t n = spec.num_children(), K = spec.category_count;
  const std::size_t d1 = spec.primary_dim, d2 = spec.category_dim;
  const std::size_t plane = spec.primary_height() * spec.primary_width();
  if (label >= K) throw UsageError("capsnet backward: label " + std::to_string(label) + " out of range");

  const RoutingTrace<T>& trace = cache.routing;
  const Tensor<T>& v_final = trace.back().outputs;
  std::vector<T> norms(K);
  for (std::size_t j = 0; j < K; ++j) norms[j] = static_cast<T>(std::sqrt(dot(v_final.slice(j), v_final.slice(j))));
  const double loss = margin_loss<T>(norms, label, loss_cfg);
  const std::vector<double> g_norm = margin_loss_grad<T>(norms, label, loss_cfg);

  // dL/dv for the last iteration.
  Tensor<T> g_v({K, d2});
  for (std::size_t j = 0; j < K; ++j) {
    if (norms[j] == T{0}) continue;
    for (std::size_t q = 0; q < d2; ++q)
      g_v(j, q) = static_cast<T>(g_norm[j] * static_cast<double>(v_final(j, q)) / static_cast<double>(norms[j]));
  }

  const Tensor<T>& u_hat = cache.predictions;
  Tensor<T> g_uhat({n, K, d2});
  Tensor<T> g_b_next({n, K});  // dL/db^{t+1}
  std::vector<double> g_c(K);
  for (std::size_t tt = trace.size(); tt-- > 0;) {
    const RoutingState<T>& st = trace[tt];
    if (tt + 1 < trace.size()) {
      // b^{t+1} = b^t + <u_hat, v^t>
      g_v.fill(T{0});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < K; ++j) {
          const double gb = g_b_next(i, j);
          if (gb == 0.0) continue;
          for (std::size_t q = 0; q < d2; ++q) {
            g_v(j, q) += static_cast<T>(gb * static_cast<double>(u_hat(i, j, q)));
            g_uhat(i, j, q) += static_cast<T>(gb * static_cast<double>(st.outputs(j, q)));
          }
        }
    }
    Tensor<T> g_s({K, d2});
    for (std::size_t j = 0; j < K; ++j)
      squash_backward<T>(st.preactivations.slice(j), g_v.slice(j), g_s.slice(j));

    // g_b_next becomes dL/db^t: carried term plus the softmax path.
    for (std::size_t i = 0; i < n; ++i) {
      double weighted = 0.0;
      for (std::size_t j = 0; j < K; ++j) {
        const double c = st.couplings(i, j);
        const T* u = &u_hat(i, j, 0);
        double gc = 0.0;
        for (std::size_t q = 0; q < d2; ++q) {
          gc += static_cast<double>(u[q]) * static_cast<double>(g_s(j, q));
          g_uhat(i, j, q) += static_cast<T>(c * static_cast<double>(g_s(j, q)));
        }
        g_c[j] = gc;
        weighted += c * gc;
      }
      for (std::size_t j = 0; j < K; ++j)
        g_b_next(i, j) = static_cast<T>(static_cast<double>(g_b_next(i, j)) +
                                        static_cast<double>(st.couplings(i, j)) * (g_c[j] - weighted));
    }
  }

  // u_hat_ij = W_ij u_i
  Tensor<T> g_u({n, d1});
  for (std::size_t i = 0; i < n; ++i) {
    const T* u = &cache.capsules(i, 0);
    for (std::size_t j = 0; j < K; ++j)
      for (std::size_t p = 0; p < d2; ++p) {
        const double gu = g_uhat(i, j, p);
        if (gu == 0.0) continue;
        T* gw = &grad.weights(i, j, p, 0);
        const T* w = &params.weights(i, j, p, 0);
        for (std::size_t q = 0; q < d1; ++q) {
          gw[q] += static_cast<T>(gu * static_cast<double>(u[q]));
          g_u(i, q) += static_cast<T>(gu * static_cast<double>(w[q]));
        }
      }
  }

  Tensor<T> g_primary(cache.primary_pre.shape());
  std::vector<T> g_pre(d1);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(g_pre.begin(), g_pre.end(), T{0});
    squash_backward<T>(cache.capsules_pre.slice(i), g_u.slice(i), g_pre);
    const std::size_t pos = i % plane;
    for (std::size_t q = 0; q < d1; ++q)
      g_primary[detail::capsule_channel(i, q, d1, plane) * plane + pos] = g_pre[q];
  }

  const Tensor<T> gk_primary =
      conv2d_kernel_grad(cache.conv_act, g_primary, spec.primary_kernel, spec.primary_stride);
  for (std::size_t i = 0; i < gk_primary.size(); ++i) grad.primary_kernels[i] += gk_primary[i];
  for (std::size_t ch = 0; ch < g_primary.extent(0); ++ch)
    grad.primary_bias[ch] += static_cast<T>(sum<T>(g_primary.slice(ch)));

  Tensor<T> g_act = conv2d_full(g_primary, params.primary_kernels, spec.primary_stride);
  for (std::size_t i = 0; i < g_act.size(); ++i)
    g_act[i] *= detail::activate_grad(cache.conv_pre[i], cache.conv_act[i], spec.activation);

  const Tensor<T> gk_conv = conv2d_kernel_grad(cache.input, g_act, spec.conv_kernel, 1);
  for (std::size_t i = 0; i < gk_conv.size(); ++i) grad.conv_kernels[i] += gk_conv[i];
  for (std::size_t f = 0; f < g_act.extent(0); ++f)
    grad.conv_bias[f] += static_cast<T>(sum<T>(g_act.slice(f)));
  return loss;
}

template <typename T>
CapsNetParams<T> gradient(const ForwardCache<T>& cache, std::size_t label, const CapsNetParams<T>& params,
                          const CapsNetSpec& spec, const MarginLossCfg& loss_cfg = {}) {
  CapsNetParams<T> grad = CapsNetParams<T>::zeros(spec);
  backward(cache, label, params, spec, grad, loss_cfg);
  return grad;
}

// --- optimizer --------------------------------------------------------------

struct AdamCfg {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over all capsule-network tensors. Single writer.
template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer(const CapsNetSpec& spec, AdamCfg cfg)
      : cfg_(cfg), m_(CapsNetParams<double>::zeros(spec)), v_(CapsNetParams<double>::zeros(spec)) {}

  /// Applies one step using `grad` scaled by `grad_scale` (e.g. 1/batch).
  void step(CapsNetParams<T>& params, const CapsNetParams<T>& grad, double grad_scale) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto ps = params.tensors();
    auto gs = grad.tensors();
    auto ms = m_.tensors();
    auto vs = v_.tensors();
    for (std::size_t k = 0; k < ps.size(); ++k) {
      Tensor<T>& p = *ps[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = static_cast<double>((*gs[k])[i]) * grad_scale;
        double& m = (*ms[k])[i];
        double& v = (*vs[k])[i];
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g * g;
        p[i] = static_cast<T>(static_cast<double>(p[i]) -
                              cfg_.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps));
      }
    }
    ++params.version;
  }

 private:
  AdamCfg cfg_;
  CapsNetParams<double> m_;
  CapsNetParams<double> v_;
  std::uint64_t t_ = 0;
};

}  // namespace capsdbn
