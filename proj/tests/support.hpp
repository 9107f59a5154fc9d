#pragma once

// Independent oracles shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "capsdbn/capsdbn.hpp"

namespace capsdbn::testing {

/// 8x8x1 input, F=4, G=2, d1=4, d2=4, K=3, r=2.
inline CapsNetSpec tiny_caps_spec(Activation act = Activation::relu) {
  CapsNetSpec s;
  s.channels = 1;
  s.height = 8;
  s.width = 8;
  s.conv_filters = 4;
  s.conv_kernel = 3;
  s.primary_groups = 2;
  s.primary_dim = 4;
  s.primary_kernel = 2;
  s.primary_stride = 2;
  s.category_count = 3;
  s.category_dim = 4;
  s.routing_iters = 2;
  s.activation = act;
  return s;
}

inline Tensor<double> random_input(const CapsNetSpec& s, RandomStream& rs) {
  Tensor<double> x({s.channels, s.height, s.width});
  for (double& v : x.data()) v = rs.uniform(-1.0, 1.0);
  return x;
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Compares backward() against central differences of margin_loss(forward()).
/// Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheck check_caps_gradient(const CapsNetSpec& spec, const CapsNetParams<double>& params,
                                     const Tensor<double>& input, std::size_t label, double h = 1e-4,
                                     double floor = 1e-8) {
  const ForwardResult<double> fwd = forward(input, params, spec);
  const CapsNetParams<double> analytic = gradient(fwd.cache, label, params, spec);
  GradCheck out;
  CapsNetParams<double> probe = params;
  auto probe_tensors = probe.tensors();
  auto grad_tensors = analytic.tensors();
  for (std::size_t t = 0; t < probe_tensors.size(); ++t) {
    Tensor<double>& p = *probe_tensors[t];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + h;
      const double fp = margin_loss<double>(forward(input, probe, spec).norms, label);
      p[i] = orig - h;
      const double fm = margin_loss<double>(forward(input, probe, spec).norms, label);
      p[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = (*grad_tensors[t])[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      out.max_rel_error = std::max(out.max_rel_error, std::abs(a - numeric) / denom);
      ++out.checked;
    }
  }
  return out;
}

/// Sort-based median over the replicate-padded k x k window.
inline Tensor<float> naive_median(const Tensor<float>& src, std::size_t k) {
  const std::size_t C = src.extent(0), H = src.extent(1), W = src.extent(2);
  const long r = static_cast<long>(k / 2);
  Tensor<float> out(src.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        std::vector<float> w;
        for (long dy = -r; dy <= r; ++dy)
          for (long dx = -r; dx <= r; ++dx) {
            const long yy = std::clamp<long>(static_cast<long>(y) + dy, 0, static_cast<long>(H) - 1);
            const long xx = std::clamp<long>(static_cast<long>(x) + dx, 0, static_cast<long>(W) - 1);
            w.push_back(src(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)));
          }
        std::sort(w.begin(), w.end());
        out(c, y, x) = w[w.size() / 2];
      }
  return out;
}

/// Counts pos > neg as 1 and ties as 1/2 over every positive/negative pair.
inline std::vector<std::optional<double>> pairwise_auc(const std::vector<std::vector<double>>& scores,
                                                       const std::vector<std::size_t>& truths, std::size_t K) {
  std::vector<std::optional<double>> out(K);
  for (std::size_t k = 0; k < K; ++k) {
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < truths.size(); ++i) {
      if (truths[i] != k) continue;
      for (std::size_t j = 0; j < truths.size(); ++j) {
        if (truths[j] == k) continue;
        pairs += 1.0;
        if (scores[i][k] > scores[j][k]) wins += 1.0;
        else if (scores[i][k] == scores[j][k]) wins += 0.5;
      }
    }
    if (pairs > 0) out[k] = wins / pairs;
  }
  return out;
}

/// Two binary 12x12 patterns: a vertical bar and a horizontal bar.
inline std::vector<Tensor<float>> two_pattern_dataset(std::size_t copies) {
  Tensor<float> a({1, 12, 12}), b({1, 12, 12});
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 4; j < 8; ++j) {
      a(0, i, j) = 1.0f;
      b(0, j, i) = 1.0f;
    }
  std::vector<Tensor<float>> out;
  for (std::size_t n = 0; n < copies; ++n) {
    out.push_back(a);
    out.push_back(b);
  }
  return out;
}

inline CrbmSpec two_pattern_spec() { return CrbmSpec{12, 1, 4, 5, 2}; }

}  // namespace capsdbn::testing
