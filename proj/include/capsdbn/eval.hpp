#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "capsdbn/error.hpp"

namespace capsdbn {

/// K x K counts, rows = true category, columns = predicted category.
struct ConfusionMatrix {
  std::size_t categories = 0;
  std::vector<std::uint64_t> counts;

  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * categories + pred]; }
  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion(std::span<const std::size_t> truths, std::span<const std::size_t> predictions,
                                 std::size_t K) {
  if (truths.size() != predictions.size()) throw UsageError("confusion: label sequences differ in length");
  ConfusionMatrix cm{K, std::vector<std::uint64_t>(K * K, 0)};
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (truths[i] >= K || predictions[i] >= K)
      throw UsageError("confusion: label out of range at position " + std::to_string(i));
    ++cm.counts[truths[i] * K + predictions[i]];
  }
  return cm;
}

struct CategoryMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;  // number of true examples
  bool degenerate = false;    // some denominator was zero; affected values are 0
};

struct MetricsReport {
  std::vector<CategoryMetrics> categories;
  double accuracy = 0.0;
};

inline double f1_score(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

inline MetricsReport precision_recall_f1(const ConfusionMatrix& cm) {
  const std::size_t K = cm.categories;
  MetricsReport report;
  std::uint64_t correct = 0;
  for (std::size_t k = 0; k < K; ++k) {
    std::uint64_t tp = cm.at(k, k), fp = 0, fn = 0;
    for (std::size_t o = 0; o < K; ++o) {
      if (o == k) continue;
      fp += cm.at(o, k);
      fn += cm.at(k, o);
    }
    correct += tp;
    CategoryMetrics m;
    m.support = tp + fn;
    if (tp + fp > 0) m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    else m.degenerate = true;
    if (tp + fn > 0) m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    else m.degenerate = true;
    if (m.precision + m.recall > 0.0) m.f1 = f1_score(m.precision, m.recall);
    else m.degenerate = true;
    report.categories.push_back(m);
  }
  const std::uint64_t total = cm.total();
  report.accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return report;
}

struct AucReport {
  std::vector<std::optional<double>> per_category;  // nullopt: skipped (no positives or no negatives)
  double macro = 0.0;
  std::size_t evaluated = 0;
};

/// One-vs-rest ROC AUC per category, macro-averaged over evaluable categories.
/// Uses the tie-corrected rank sum, which equals the pairwise count
/// (pos > neg scores 1, ties score 1/2) divided by P*N.
inline AucReport roc_auc_ovr(const std::vector<std::vector<double>>& scores, std::span<const std::size_t> truths,
                             std::size_t K) {
  if (scores.size() != truths.size()) throw UsageError("roc_auc_ovr: scores and labels differ in length");
  AucReport report;
  report.per_category.assign(K, std::nullopt);
  const std::size_t n = truths.size();
  std::vector<std::size_t> order(n);
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    std::uint64_t pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (truths[i] >= K || scores[i].size() != K) throw UsageError("roc_auc_ovr: malformed example " + std::to_string(i));
      pos += truths[i] == k;
    }
    const std::uint64_t neg = n - pos;
    if (pos == 0 || neg == 0) continue;
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a][k] < scores[b][k]; });
    // Sum of doubled ranks of positives; tied runs share their average rank.
    std::uint64_t doubled_rank_sum = 0;
    for (std::size_t lo = 0; lo < n;) {
      std::size_t hi = lo;
      while (hi + 1 < n && scores[order[hi + 1]][k] == scores[order[lo]][k]) ++hi;
      const std::uint64_t doubled_avg = (lo + 1) + (hi + 1);
      for (std::size_t r = lo; r <= hi; ++r)
        if (truths[order[r]] == k) doubled_rank_sum += doubled_avg;
      lo = hi + 1;
    }
    // 2 * (pairs won + ties / 2) = doubled rank sum - P(P+1)
    const std::uint64_t doubled_wins = doubled_rank_sum - pos * (pos + 1);
    const double auc = (static_cast<double>(doubled_wins) / 2.0) / (static_cast<double>(pos) * static_cast<double>(neg));
    report.per_category[k] = auc;
    total += auc;
    ++report.evaluated;
  }
  report.macro = report.evaluated ? total / static_cast<double>(report.evaluated) : 0.0;
  return report;
}

struct EpochTrace {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct EarlyStopCfg {
  std::size_t patience = 4;
  std::size_t max_epochs = 30;
  double min_delta = 0.0;

  void validate() const {
    if (patience < 1) throw ConfigError("early_stop.patience must be >= 1");
    if (max_epochs < 1) throw ConfigError("early_stop.max_epochs must be >= 1");
  }
};

struct EarlyStopDecision {
  bool stop = false;
  std::size_t best_epoch = 0;  // epoch number of the earliest maximum val_accuracy
};

/// Stops once `patience` epochs pass without a val_accuracy gain larger than
/// min_delta over the running best, or when max_epochs is reached.
inline EarlyStopDecision early_stop(std::span<const EpochTrace> trace, const EarlyStopCfg& cfg) {
  if (trace.empty()) throw UsageError("early_stop: empty trace");
  EarlyStopDecision d;
  std::size_t best = 0, anchor = 0;
  for (std::size_t i = 1; i < trace.size(); ++i) {
    if (trace[i].val_accuracy > trace[best].val_accuracy) best = i;
    if (trace[i].val_accuracy > trace[anchor].val_accuracy + cfg.min_delta) anchor = i;
  }
  d.best_epoch = trace[best].epoch;
  d.stop = trace.size() >= cfg.max_epochs || (trace.size() - 1 - anchor) >= cfg.patience;
  return d;
}

}  // namespace capsdbn
