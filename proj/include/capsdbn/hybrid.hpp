#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "capsdbn/capsnet.hpp"
#include "capsdbn/dbn.hpp"
#include "capsdbn/error.hpp"
#include "capsdbn/eval.hpp"
#include "capsdbn/numerics.hpp"
#include "capsdbn/random.hpp"
#include "capsdbn/tensor.hpp"

namespace capsdbn {

/// Late-fusion softmax head over [capsule norms || DBN features].
template <typename T>
struct FusionHead {
  Tensor<T> weights;  // [K, d_fused]
  Tensor<T> bias;     // [K]

  static FusionHead zeros(std::size_t K, std::size_t d) { return {Tensor<T>({K, d}), Tensor<T>({K})}; }
  std::size_t categories() const { return weights.extent(0); }
  std::size_t input_dim() const { return weights.extent(1); }
  bool operator==(const FusionHead&) const = default;
};

/// Categories whose prediction triggers a specialist referral.
struct ReferralPolicy {
  std::set<std::size_t> referral_categories{3, 4};  // Low / High Risk of Cancer

  void validate(std::size_t K) const {
    for (std::size_t c : referral_categories)
      if (c >= K) throw ConfigError("referral.categories: id " + std::to_string(c) + " out of range");
  }
};

template <typename T>
std::vector<T> fuse_features(std::span<const T> norms, std::span<const T> dbn_features, std::size_t K,
                             std::size_t dbn_length) {
  if (norms.size() != K || dbn_features.size() != dbn_length)
    throw ConfigError("fuse_features: expected " + std::to_string(K) + " norms and " + std::to_string(dbn_length) +
                      " DBN features, got " + std::to_string(norms.size()) + " and " +
                      std::to_string(dbn_features.size()));
  std::vector<T> out;
  out.reserve(K + dbn_length);
  out.insert(out.end(), norms.begin(), norms.end());
  out.insert(out.end(), dbn_features.begin(), dbn_features.end());
  return out;
}

/// softmax(W x + b) in double.
template <typename T>
std::vector<double> head_probabilities(const FusionHead<T>& head, std::span<const T> x) {
  if (x.size() != head.input_dim())
    throw ConfigError("fusion head: input length " + std::to_string(x.size()) + " != " +
                      std::to_string(head.input_dim()));
  const std::size_t K = head.categories();
  std::vector<double> logits(K);
  for (std::size_t k = 0; k < K; ++k)
    logits[k] = static_cast<double>(head.bias[k]) + dot<T>(head.weights.slice(k), x);
  return softmax<double>(logits);
}

/// Mean cross-entropy over the examples and its gradient w.r.t. the head.
template <typename T>
double fusion_loss_and_grad(const FusionHead<T>& head, const std::vector<std::vector<T>>& xs,
                            std::span<const std::size_t> labels, FusionHead<T>* grad) {
  const std::size_t K = head.categories(), d = head.input_dim();
  if (xs.empty()) throw UsageError("fusion loss: no examples");
  std::vector<double> gw(grad ? K * d : 0, 0.0), gb(grad ? K : 0, 0.0);
  double loss = 0.0;
  for (std::size_t n = 0; n < xs.size(); ++n) {
    const std::vector<double> p = head_probabilities<T>(head, xs[n]);
    loss -= std::log(std::max(p[labels[n]], 1e-300));
    if (!grad) continue;
    for (std::size_t k = 0; k < K; ++k) {
      const double delta = p[k] - (k == labels[n] ? 1.0 : 0.0);
      gb[k] += delta;
      for (std::size_t i = 0; i < d; ++i) gw[k * d + i] += delta * static_cast<double>(xs[n][i]);
    }
  }
  const auto count = static_cast<double>(xs.size());
  if (grad) {
    *grad = FusionHead<T>::zeros(K, d);
    for (std::size_t i = 0; i < gw.size(); ++i) grad->weights[i] = static_cast<T>(gw[i] / count);
    for (std::size_t k = 0; k < K; ++k) grad->bias[k] = static_cast<T>(gb[k] / count);
  }
  return loss / count;
}

struct FusionTrainCfg {
  double learning_rate = 0.1;
  std::size_t epochs = 500;
  std::size_t batch_size = 0;  // 0 = full batch
  std::uint64_t seed = 0;
  std::optional<EarlyStopCfg> early_stop;  // needs validation data
};

struct LabeledFeatures {
  std::vector<std::vector<float>> features;
  std::vector<std::size_t> labels;
};

struct FusionTrainResult {
  FusionHead<float> head;
  std::vector<EpochTrace> trace;
  std::size_t best_epoch = 0;
};

namespace detail {

inline std::pair<double, double> fusion_loss_accuracy(const FusionHead<float>& head, const LabeledFeatures& data) {
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t n = 0; n < data.features.size(); ++n) {
    const std::vector<double> p = head_probabilities<float>(head, data.features[n]);
    loss -= std::log(std::max(p[data.labels[n]], 1e-300));
    correct += predict<double>(p) == data.labels[n];
  }
  const auto count = static_cast<double>(data.features.size());
  return {loss / count, static_cast<double>(correct) / count};
}

}  // namespace detail

/// Multinomial logistic regression by (mini-batch) gradient descent on mean
/// cross-entropy, starting from a zero head. With validation data and an
/// early-stop config, the head from the best validation epoch is returned.
inline FusionTrainResult train_fusion(const LabeledFeatures& train, std::size_t K, const FusionTrainCfg& cfg,
                                      const LabeledFeatures* validation = nullptr) {
  if (train.features.empty() || train.features.size() != train.labels.size())
    throw ConfigError("train_fusion: features and labels must be non-empty and aligned");
  std::vector<std::size_t> per_category(K, 0);
  for (std::size_t y : train.labels) {
    if (y >= K) throw ConfigError("train_fusion: label " + std::to_string(y) + " out of range");
    ++per_category[y];
  }
  for (std::size_t k = 0; k < K; ++k)
    if (per_category[k] == 0) throw ConfigError("train_fusion: category " + std::to_string(k) + " has no examples");
  const std::size_t d = train.features.front().size();

  FusionTrainResult result;
  result.head = FusionHead<float>::zeros(K, d);
  FusionHead<float> best = result.head;
  RandomStream stream(cfg.seed);
  std::vector<std::size_t> order(train.features.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t batch = cfg.batch_size == 0 ? order.size() : cfg.batch_size;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (batch < order.size()) stream.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      std::vector<std::vector<float>> xs;
      std::vector<std::size_t> ys;
      for (std::size_t i = start; i < stop; ++i) {
        xs.push_back(train.features[order[i]]);
        ys.push_back(train.labels[order[i]]);
      }
      FusionHead<float> g;
      fusion_loss_and_grad<float>(result.head, xs, ys, &g);
      for (std::size_t i = 0; i < g.weights.size(); ++i)
        result.head.weights[i] -= static_cast<float>(cfg.learning_rate * g.weights[i]);
      for (std::size_t k = 0; k < K; ++k) result.head.bias[k] -= static_cast<float>(cfg.learning_rate * g.bias[k]);
    }
    EpochTrace row{epoch, 0, 0, 0, 0};
    std::tie(row.train_loss, row.train_accuracy) = detail::fusion_loss_accuracy(result.head, train);
    if (validation) std::tie(row.val_loss, row.val_accuracy) = detail::fusion_loss_accuracy(result.head, *validation);
    result.trace.push_back(row);
    if (validation && cfg.early_stop) {
      const EarlyStopDecision dec = early_stop(result.trace, *cfg.early_stop);
      if (dec.best_epoch == epoch) best = result.head;
      result.best_epoch = dec.best_epoch;
      if (dec.stop) break;
    }
  }
  if (validation && cfg.early_stop) result.head = best;
  else result.best_epoch = result.trace.empty() ? 0 : result.trace.back().epoch;
  return result;
}

struct HybridPrediction {
  std::size_t category = 0;
  std::vector<double> probabilities;
};

/// Runs both frozen branches and the fusion head. `caps_input` is the
/// standardized patch; `dbn_input` is the whitened, [0,1]-mapped patch.
template <typename T>
HybridPrediction predict_hybrid(const Tensor<T>& caps_input, const Tensor<T>& dbn_input, const CapsNetSpec& spec,
                                const CapsNetParams<T>& caps, const DbnStack<T>& stack, const FusionHead<T>& head) {
  const ForwardResult<T> fwd = forward(caps_input, caps, spec);
  const std::vector<T> feats = extract_features(dbn_input, stack);
  const std::vector<T> fused = fuse_features<T>(fwd.norms, feats, spec.category_count, stack.feature_length());
  if (head.categories() != spec.category_count)
    throw ConfigError("predict_hybrid: fusion head categories do not match the capsule network");
  HybridPrediction out;
  out.probabilities = head_probabilities<T>(head, fused);
  out.category = predict<double>(out.probabilities);
  return out;
}

inline bool referral_decision(std::size_t category, const ReferralPolicy& policy, std::size_t K) {
  if (category >= K) throw UsageError("referral_decision: category " + std::to_string(category) + " out of range");
  return policy.referral_categories.contains(category);
}

}  // namespace capsdbn
