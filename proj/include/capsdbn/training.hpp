#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "capsdbn/capsnet.hpp"
#include "capsdbn/eval.hpp"
#include "capsdbn/preprocess.hpp"
#include "capsdbn/random.hpp"

namespace capsdbn {

struct CapsTrainCfg {
  AdamCfg adam;
  MarginLossCfg margin;
  std::size_t mini_batch_size = 16;
  EarlyStopCfg early_stop;
  std::uint64_t seed = 0;
};

struct CapsTrainResult {
  CapsNetParams<float> params;  // parameters from the best validation epoch
  std::vector<EpochTrace> trace;
  std::size_t best_epoch = 0;
};

struct LossAccuracy {
  double loss = 0.0;
  double accuracy = 0.0;
};

inline LossAccuracy evaluate_capsnet(const std::vector<ImagePatch>& data, const CapsNetParams<float>& params,
                                     const CapsNetSpec& spec, const MarginLossCfg& margin = {}) {
  LossAccuracy out;
  if (data.empty()) return out;
  std::size_t correct = 0;
  for (const ImagePatch& p : data) {
    const ForwardResult<float> r = forward(p.pixels, params, spec);
    out.loss += margin_loss<float>(r.norms, p.label.value(), margin);
    correct += predict<float>(r.norms) == *p.label;
  }
  out.loss /= static_cast<double>(data.size());
  out.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return out;
}

/// Mini-batch Adam on the margin loss. Per-example gradients are summed in
/// batch order, so a fixed seed reproduces every epoch bit for bit. Training
/// loss/accuracy are averaged over the forward passes made during the epoch.
inline CapsTrainResult train_capsnet(const std::vector<ImagePatch>& train, const std::vector<ImagePatch>& val,
                                     const CapsNetSpec& spec, const CapsTrainCfg& cfg) {
  spec.validate();
  cfg.early_stop.validate();
  if (train.empty()) throw UsageError("train_capsnet: no training data");
  for (const ImagePatch& p : train)
    if (!p.label || *p.label >= spec.category_count) throw UsageError("train_capsnet: unlabeled or out-of-range example " + p.source_id);

  RandomStream root(cfg.seed);
  RandomStream init = root.fork("caps-init");
  RandomStream order_stream = root.fork("caps-order");
  CapsTrainResult result;
  CapsNetParams<float> params = init_params<float>(spec, init);
  result.params = params;
  AdamOptimizer<float> adam(spec, cfg.adam);
  CapsNetParams<float> grad = CapsNetParams<float>::zeros(spec);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t epoch = 1; epoch <= cfg.early_stop.max_epochs; ++epoch) {
    order_stream.shuffle(order);
    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.mini_batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.mini_batch_size);
      for (Tensor<float>* t : grad.tensors()) t->fill(0.0f);
      for (std::size_t i = start; i < stop; ++i) {
        const ImagePatch& p = train[order[i]];
        const ForwardResult<float> r = forward(p.pixels, params, spec);
        correct += predict<float>(r.norms) == *p.label;
        loss += backward(r.cache, *p.label, params, spec, grad, cfg.margin);
      }
      adam.step(params, grad, 1.0 / static_cast<double>(stop - start));
    }
    EpochTrace row;
    row.epoch = epoch;
    row.train_loss = loss / static_cast<double>(train.size());
    row.train_accuracy = static_cast<double>(correct) / static_cast<double>(train.size());
    const LossAccuracy v = evaluate_capsnet(val, params, spec, cfg.margin);
    row.val_loss = v.loss;
    row.val_accuracy = v.accuracy;
    result.trace.push_back(row);
    const EarlyStopDecision dec = early_stop(result.trace, cfg.early_stop);
    if (dec.best_epoch == epoch) result.params = params;
    result.best_epoch = dec.best_epoch;
    if (dec.stop) break;
  }
  return result;
}

}  // namespace capsdbn
