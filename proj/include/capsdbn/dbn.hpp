#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "capsdbn/error.hpp"
#include "capsdbn/numerics.hpp"
#include "capsdbn/random.hpp"
#include "capsdbn/tensor.hpp"

namespace capsdbn {

/// Geometry of one convolutional RBM layer.
///
/// Visible layer MR x MR with `visible_channels` channels; N hidden groups
/// of MQ x MQ units sharing MN x MN filters, MQ = MR - MN + 1; max-pooling
/// over disjoint Q x Q blocks gives N pooled maps of NP x NP, NP = MQ / Q.
/// The dimensionality-reduction factor C is the pooling window Q.
struct CrbmSpec {
  std::size_t visible_extent = 0;    // MR
  std::size_t visible_channels = 1;
  std::size_t groups = 1;            // N
  std::size_t filter_extent = 0;     // MN
  std::size_t pool_window = 1;       // Q

  std::size_t hidden_extent() const { return visible_extent - filter_extent + 1; }  // MQ
  std::size_t pool_extent() const { return hidden_extent() / pool_window; }          // NP
  std::size_t shrink_factor() const { return pool_window; }                          // C

  /// Validates the shape chain; `prefix` names config keys in diagnostics.
  void validate(const std::string& prefix = "") const {
    auto key = [&](const char* k) { return prefix + k; };
    if (visible_extent < 1 || visible_channels < 1 || groups < 1 || filter_extent < 1 || pool_window < 1)
      throw ConfigError(key("visible_extent") + ", " + key("visible_channels") + ", " + key("groups") +
                        ", " + key("filter_extent") + " and " + key("pool_window") + " must be positive");
    if (filter_extent > visible_extent)
      throw ConfigError(key("filter_extent") + " (MN=" + std::to_string(filter_extent) + ") exceeds " +
                        key("visible_extent") + " (MR=" + std::to_string(visible_extent) + ")");
    if (hidden_extent() % pool_window != 0)
      throw ConfigError(key("pool_window") + " (Q=" + std::to_string(pool_window) +
                        ") does not divide hidden extent MQ=" + std::to_string(hidden_extent()) + " = " +
                        key("visible_extent") + " - " + key("filter_extent") + " + 1");
  }

  /// Checks an explicitly configured MQ against MR - MN + 1.
  void check_hidden_extent(std::size_t declared, const std::string& prefix = "") const {
    if (declared != hidden_extent())
      throw ConfigError(prefix + "hidden_extent (MQ=" + std::to_string(declared) + ") must equal " + prefix +
                        "visible_extent - " + prefix + "filter_extent + 1 = " +
                        std::to_string(hidden_extent()));
  }

  std::array<std::uint32_t, 5> to_dims() const {
    auto u = [](std::size_t v) { return static_cast<std::uint32_t>(v); };
    return {u(visible_extent), u(visible_channels), u(groups), u(filter_extent), u(pool_window)};
  }

  static CrbmSpec from_dims(std::span<const std::uint32_t> d) {
    if (d.size() != 5) throw IoError("crbm spec: expected 5 dims");
    CrbmSpec s{d[0], d[1], d[2], d[3], d[4]};
    s.validate();
    return s;
  }

  bool operator==(const CrbmSpec&) const = default;
};

/// Weights shared by both conditionals: hidden_prob uses W as a valid
/// correlation, visible_prob uses the transpose of the same W.
template <typename T>
struct CrbmParams {
  Tensor<T> filters;       // [N, Cv, MN, MN]
  Tensor<T> hidden_bias;   // [N]
  Tensor<T> visible_bias;  // [Cv]

  static CrbmParams zeros(const CrbmSpec& s) {
    s.validate();
    return {Tensor<T>({s.groups, s.visible_channels, s.filter_extent, s.filter_extent}),
            Tensor<T>({s.groups}), Tensor<T>({s.visible_channels})};
  }

  bool operator==(const CrbmParams&) const = default;
};

template <typename T>
struct DbnLayer {
  CrbmSpec spec;
  CrbmParams<T> params;
};

template <typename T>
struct DbnStack {
  std::vector<DbnLayer<T>> layers;

  std::size_t feature_length() const {
    const CrbmSpec& top = layers.back().spec;
    return top.groups * top.pool_extent() * top.pool_extent();
  }
};

/// Checks that layer l+1 consumes layer l's pooled output.
inline void validate_chain(const std::vector<CrbmSpec>& specs) {
  if (specs.empty()) throw ConfigError("dbn: stack needs at least one layer");
  for (std::size_t l = 0; l < specs.size(); ++l) {
    const std::string prefix = "dbn.l" + std::to_string(l + 1) + ".";
    specs[l].validate(prefix);
    if (l == 0) continue;
    const CrbmSpec& below = specs[l - 1];
    const std::string prev = "dbn.l" + std::to_string(l) + ".";
    if (specs[l].visible_extent != below.pool_extent())
      throw ConfigError(prefix + "visible_extent (" + std::to_string(specs[l].visible_extent) +
                        ") must equal pooled extent NP=" + std::to_string(below.pool_extent()) + " of " +
                        prev + "*");
    if (specs[l].visible_channels != below.groups)
      throw ConfigError(prefix + "visible_channels (" + std::to_string(specs[l].visible_channels) +
                        ") must equal " + prev + "groups (" + std::to_string(below.groups) + ")");
  }
}

struct DbnTrainCfg {
  double learning_rate = 0.05;
  std::size_t mini_batch_size = 16;
  std::size_t epochs_per_layer = 5;
  std::size_t cd_steps = 1;
  double weight_decay = 1e-4;
  double init_stddev = 0.01;
  std::uint64_t seed = 0;

  void validate() const {
    if (learning_rate < 0.0 || weight_decay < 0.0)
      throw ConfigError("dbn.learning_rate and dbn.weight_decay must be non-negative");
    if (mini_batch_size < 1) throw ConfigError("mini_batch_size must be >= 1");
    if (cd_steps < 1) throw ConfigError("dbn.cd_steps must be >= 1");
  }
};

namespace detail {

template <typename T>
void check_visible(const Tensor<T>& v, const CrbmSpec& s, const char* op) {
  const Shape expected{s.visible_channels, s.visible_extent, s.visible_extent};
  if (v.shape() != expected)
    throw ConfigError(std::string(op) + ": visible shape " + shape_str(v.shape()) + " != " + shape_str(expected));
}

}  // namespace detail

/// P(h=1 | v) = sigmoid(corr(v, W_g) + b_g), shape [N, MQ, MQ].
template <typename T>
Tensor<T> hidden_prob(const Tensor<T>& v, const CrbmParams<T>& p, const CrbmSpec& s) {
  detail::check_visible(v, s, "hidden_prob");
  return sigmoid(conv2d_valid(v, p.filters, p.hidden_bias.data()));
}

/// P(v=1 | h) = sigmoid(sum_g conv_full(h_g, W_g) + c), shape [Cv, MR, MR].
template <typename T>
Tensor<T> visible_prob(const Tensor<T>& h, const CrbmParams<T>& p, const CrbmSpec& s) {
  const Shape expected{s.groups, s.hidden_extent(), s.hidden_extent()};
  if (h.shape() != expected)
    throw ConfigError("visible_prob: hidden shape " + shape_str(h.shape()) + " != " + shape_str(expected));
  Tensor<T> a = conv2d_full(h, p.filters);
  const std::size_t plane = s.visible_extent * s.visible_extent;
  for (std::size_t c = 0; c < s.visible_channels; ++c)
    for (std::size_t i = 0; i < plane; ++i) a[c * plane + i] += p.visible_bias[c];
  return sigmoid(std::move(a));
}

template <typename T>
Tensor<T> sample_bernoulli(const Tensor<T>& p, RandomStream& stream) {
  Tensor<T> out(p.shape());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = static_cast<double>(p[i]);
    if (!(q >= 0.0 && q <= 1.0)) throw NumericError("sample_bernoulli: probability outside [0,1]");
    out[i] = stream.uniform() < q ? T{1} : T{0};
  }
  return out;
}

/// Max over disjoint Q x Q blocks: [N, MQ, MQ] -> [N, MQ/Q, MQ/Q].
template <typename T>
Tensor<T> max_pool(const Tensor<T>& h, std::size_t q) {
  if (h.rank() != 3) throw ConfigError("max_pool: expected [N, MQ, MQ]");
  const std::size_t N = h.extent(0), H = h.extent(1), W = h.extent(2);
  if (q == 0 || H % q != 0 || W % q != 0)
    throw ConfigError("max_pool: window " + std::to_string(q) + " does not divide extent " + std::to_string(H));
  const std::size_t Ho = H / q, Wo = W / q;
  Tensor<T> out({N, Ho, Wo});
  for (std::size_t g = 0; g < N; ++g)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t x = 0; x < Wo; ++x) {
        T m = h(g, y * q, x * q);
        for (std::size_t i = 0; i < q; ++i)
          for (std::size_t j = 0; j < q; ++j) m = std::max(m, h(g, y * q + i, x * q + j));
        out(g, y, x) = m;
      }
  return out;
}

/// Sufficient statistics of one phase, averaged over hidden/visible positions.
template <typename T>
struct CrbmStats {
  Tensor<double> filters;
  std::vector<double> hidden;
  std::vector<double> visible;

  static CrbmStats zeros(const CrbmSpec& s) {
    return {Tensor<double>({s.groups, s.visible_channels, s.filter_extent, s.filter_extent}),
            std::vector<double>(s.groups, 0.0), std::vector<double>(s.visible_channels, 0.0)};
  }

  void accumulate(const Tensor<T>& v, const Tensor<T>& h, const CrbmSpec& s) {
    const double hidden_units = static_cast<double>(s.hidden_extent() * s.hidden_extent());
    const double visible_units = static_cast<double>(s.visible_extent * s.visible_extent);
    const Tensor<T> corr = conv2d_kernel_grad(v, h, s.filter_extent, 1);
    for (std::size_t i = 0; i < corr.size(); ++i) filters[i] += static_cast<double>(corr[i]) / hidden_units;
    for (std::size_t g = 0; g < s.groups; ++g) hidden[g] += sum(h.slice(g)) / hidden_units;
    for (std::size_t c = 0; c < s.visible_channels; ++c) visible[c] += sum(v.slice(c)) / visible_units;
  }
};

/// Contrastive-divergence update from positive and negative statistics summed
/// over `batch` examples: dW = lr (pos - neg) / batch - lr decay W.
template <typename T>
void apply_cd_update(CrbmParams<T>& p, const CrbmStats<T>& pos, const CrbmStats<T>& neg, std::size_t batch,
                     const DbnTrainCfg& cfg) {
  const double lr = cfg.learning_rate;
  const auto b = static_cast<double>(batch);
  for (std::size_t i = 0; i < p.filters.size(); ++i) {
    const double w = static_cast<double>(p.filters[i]);
    p.filters[i] = static_cast<T>(w + lr * (pos.filters[i] - neg.filters[i]) / b - lr * cfg.weight_decay * w);
  }
  for (std::size_t g = 0; g < p.hidden_bias.size(); ++g)
    p.hidden_bias[g] = static_cast<T>(static_cast<double>(p.hidden_bias[g]) + lr * (pos.hidden[g] - neg.hidden[g]) / b);
  for (std::size_t c = 0; c < p.visible_bias.size(); ++c)
    p.visible_bias[c] =
        static_cast<T>(static_cast<double>(p.visible_bias[c]) + lr * (pos.visible[c] - neg.visible[c]) / b);
}

/// One CD-k mini-batch update; returns the mean squared difference between the
/// batch and its one-step reconstruction. Hidden units are sampled inside the
/// Gibbs chain; visible units use their probabilities.
template <typename T>
double cd_step(const std::vector<Tensor<T>>& batch, CrbmParams<T>& p, const CrbmSpec& s,
               const DbnTrainCfg& cfg, RandomStream& stream) {
  if (batch.empty()) throw UsageError("cd_step: empty batch");
  cfg.validate();
  CrbmStats<T> pos = CrbmStats<T>::zeros(s), neg = CrbmStats<T>::zeros(s);
  double err = 0.0;
  std::size_t count = 0;
  for (const Tensor<T>& v0 : batch) {
    const Tensor<T> h0 = hidden_prob(v0, p, s);
    pos.accumulate(v0, h0, s);
    Tensor<T> h = sample_bernoulli(h0, stream);
    Tensor<T> v, hp;
    for (std::size_t step = 0; step < cfg.cd_steps; ++step) {
      v = visible_prob(h, p, s);
      if (step == 0) {
        for (std::size_t i = 0; i < v.size(); ++i) {
          const double d = static_cast<double>(v0[i]) - static_cast<double>(v[i]);
          err += d * d;
        }
        count += v.size();
      }
      hp = hidden_prob(v, p, s);
      if (step + 1 < cfg.cd_steps) h = sample_bernoulli(hp, stream);
    }
    neg.accumulate(v, hp, s);
  }
  apply_cd_update(p, pos, neg, batch.size(), cfg);
  for (const Tensor<T>* t : {&p.filters, &p.hidden_bias, &p.visible_bias}) require_finite(*t, "cd_step");
  return err / static_cast<double>(count);
}

template <typename T>
Tensor<T> pooled_hidden(const Tensor<T>& v, const DbnLayer<T>& layer) {
  return max_pool(hidden_prob(v, layer.params, layer.spec), layer.spec.pool_window);
}

template <typename T>
DbnStack<T> init_stack(const std::vector<CrbmSpec>& specs, double stddev, RandomStream& stream) {
  validate_chain(specs);
  DbnStack<T> stack;
  for (const CrbmSpec& s : specs) {
    DbnLayer<T> layer{s, CrbmParams<T>::zeros(s)};
    fill_normal(layer.params.filters, stream, stddev);
    stack.layers.push_back(std::move(layer));
  }
  return stack;
}

/// Per-layer, per-epoch mean reconstruction error.
using ErrorTraces = std::vector<std::vector<double>>;

/// Greedy layer-wise pretraining. Layer l trains by cd_step on the pooled
/// hidden probabilities of the (already trained, frozen) layer l-1. Each epoch
/// reshuffles the data into mini-batches.
template <typename T>
DbnStack<T> pretrain_greedy(const std::vector<Tensor<T>>& data, const std::vector<CrbmSpec>& specs,
                            const DbnTrainCfg& cfg, ErrorTraces* traces = nullptr) {
  cfg.validate();
  if (data.empty()) throw UsageError("pretrain_greedy: no training data");
  RandomStream root(cfg.seed);
  RandomStream init = root.fork("dbn-init");
  DbnStack<T> stack = init_stack<T>(specs, cfg.init_stddev, init);
  for (const Tensor<T>& v : data) detail::check_visible(v, specs.front(), "pretrain_greedy");
  if (traces) traces->assign(specs.size(), {});

  std::vector<Tensor<T>> layer_input = data;
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    DbnLayer<T>& layer = stack.layers[l];
    RandomStream stream = root.fork("dbn-layer-" + std::to_string(l));
    std::vector<std::size_t> order(layer_input.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t epoch = 0; epoch < cfg.epochs_per_layer; ++epoch) {
      stream.shuffle(order);
      double err = 0.0;
      for (std::size_t start = 0; start < order.size(); start += cfg.mini_batch_size) {
        const std::size_t stop = std::min(order.size(), start + cfg.mini_batch_size);
        std::vector<Tensor<T>> batch;
        batch.reserve(stop - start);
        for (std::size_t i = start; i < stop; ++i) batch.push_back(layer_input[order[i]]);
        err += cd_step(batch, layer.params, layer.spec, cfg, stream) * static_cast<double>(stop - start);
      }
      if (traces) (*traces)[l].push_back(err / static_cast<double>(order.size()));
    }
    if (l + 1 < stack.layers.size())
      for (Tensor<T>& v : layer_input) v = pooled_hidden(v, layer);
  }
  return stack;
}

/// Deterministic upward pass of pooled hidden probabilities; flattened top
/// pooling layer of length N3 * NP3^2.
template <typename T>
std::vector<T> extract_features(const Tensor<T>& input, const DbnStack<T>& stack) {
  if (stack.layers.empty()) throw ConfigError("extract_features: empty stack");
  Tensor<T> v = input;
  for (const DbnLayer<T>& layer : stack.layers) v = pooled_hidden(v, layer);
  return v.storage();
}

}  // namespace capsdbn
