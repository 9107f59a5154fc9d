#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "capsdbn/capsnet.hpp"
#include "capsdbn/dbn.hpp"
#include "capsdbn/error.hpp"
#include "capsdbn/hybrid.hpp"
#include "capsdbn/io/checkpoint.hpp"
#include "capsdbn/io/dataset.hpp"
#include "capsdbn/preprocess.hpp"

namespace capsdbn::io {

// Model checkpoints are CBLF containers with a "kind" text section, the
// resolved run configuration under "config", and self-describing spec dims.

namespace detail {

inline void expect_kind(const Checkpoint& ck, const std::string& kind) {
  if (!ck.has("kind") || ck.text("kind") != kind)
    throw IoError("checkpoint is not a " + kind + " checkpoint");
}

template <std::size_t N>
std::vector<std::uint32_t> to_vec(const std::array<std::uint32_t, N>& a) {
  return {a.begin(), a.end()};
}

}  // namespace detail

struct CapsNetCheckpoint {
  CapsNetSpec spec;
  CapsNetParams<float> params;
  std::string config_text;
};

inline Checkpoint to_checkpoint(const CapsNetCheckpoint& m) {
  Checkpoint ck;
  ck.add_text("kind", "capsnet");
  ck.add_text("config", m.config_text);
  ck.add_u32("capsnet.spec", detail::to_vec(m.spec.to_dims()));
  const auto tensors = m.params.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i)
    ck.add_tensor("capsnet." + std::string(CapsNetParams<float>::kNames[i]), *tensors[i]);
  return ck;
}

inline CapsNetCheckpoint capsnet_from(const Checkpoint& ck) {
  detail::expect_kind(ck, "capsnet");
  CapsNetCheckpoint m;
  m.spec = CapsNetSpec::from_dims(ck.u32("capsnet.spec"));
  m.config_text = ck.text("config");
  auto tensors = m.params.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i)
    *tensors[i] = ck.tensor("capsnet." + std::string(CapsNetParams<float>::kNames[i]));
  m.params.check_shapes(m.spec);
  return m;
}

struct DbnCheckpoint {
  DbnStack<float> stack;
  WhiteningStats whitening;
  std::string config_text;
};

inline Checkpoint to_checkpoint(const DbnCheckpoint& m) {
  Checkpoint ck;
  ck.add_text("kind", "dbn");
  ck.add_text("config", m.config_text);
  ck.add_u32("dbn.layers", {static_cast<std::uint32_t>(m.stack.layers.size())});
  for (std::size_t l = 0; l < m.stack.layers.size(); ++l) {
    const std::string p = "dbn.l" + std::to_string(l + 1) + ".";
    const DbnLayer<float>& layer = m.stack.layers[l];
    ck.add_u32(p + "spec", detail::to_vec(layer.spec.to_dims()));
    ck.add_tensor(p + "filters", layer.params.filters);
    ck.add_tensor(p + "hidden_bias", layer.params.hidden_bias);
    ck.add_tensor(p + "visible_bias", layer.params.visible_bias);
  }
  ck.add_tensor("whiten.mean", m.whitening.mean);
  ck.add_tensor("whiten.std", m.whitening.stddev);
  ck.add_tensor("whiten.eps", Tensor<float>({1}, {static_cast<float>(m.whitening.eps)}));
  return ck;
}

inline DbnCheckpoint dbn_from(const Checkpoint& ck) {
  detail::expect_kind(ck, "dbn");
  DbnCheckpoint m;
  m.config_text = ck.text("config");
  const auto& count = ck.u32("dbn.layers");
  if (count.size() != 1 || count[0] == 0) throw IoError("dbn checkpoint: bad layer count");
  std::vector<CrbmSpec> specs;
  for (std::uint32_t l = 0; l < count[0]; ++l) {
    const std::string p = "dbn.l" + std::to_string(l + 1) + ".";
    DbnLayer<float> layer{CrbmSpec::from_dims(ck.u32(p + "spec")), {}};
    layer.params.filters = ck.tensor(p + "filters");
    layer.params.hidden_bias = ck.tensor(p + "hidden_bias");
    layer.params.visible_bias = ck.tensor(p + "visible_bias");
    if (layer.params.filters.shape() != CrbmParams<float>::zeros(layer.spec).filters.shape())
      throw IoError("dbn checkpoint: " + p + "filters do not match the layer spec");
    specs.push_back(layer.spec);
    m.stack.layers.push_back(std::move(layer));
  }
  validate_chain(specs);
  m.whitening = whitening_from(ck);
  return m;
}

struct FusionCheckpoint {
  FusionHead<float> head;
  std::vector<std::string> categories;
  ReferralPolicy referral;
  std::string config_text;
};

inline Checkpoint to_checkpoint(const FusionCheckpoint& m) {
  Checkpoint ck;
  ck.add_text("kind", "fusion");
  ck.add_text("config", m.config_text);
  std::string names;
  for (const std::string& c : m.categories) names += c + "\n";
  ck.add_text("categories", names);
  std::vector<std::uint32_t> referral(m.referral.referral_categories.begin(), m.referral.referral_categories.end());
  referral.insert(referral.begin(), static_cast<std::uint32_t>(referral.size()));
  ck.add_u32("referral", referral);
  ck.add_tensor("fusion.weights", m.head.weights);
  ck.add_tensor("fusion.bias", m.head.bias);
  return ck;
}

inline FusionCheckpoint fusion_from(const Checkpoint& ck) {
  detail::expect_kind(ck, "fusion");
  FusionCheckpoint m;
  m.config_text = ck.text("config");
  std::istringstream names(ck.text("categories"));
  for (std::string line; std::getline(names, line);) m.categories.push_back(line);
  const auto& referral = ck.u32("referral");
  if (referral.empty() || referral[0] + 1 != referral.size()) throw IoError("fusion checkpoint: malformed referral section");
  m.referral.referral_categories = std::set<std::size_t>(referral.begin() + 1, referral.end());
  m.head.weights = ck.tensor("fusion.weights");
  m.head.bias = ck.tensor("fusion.bias");
  if (m.head.weights.rank() != 2 || m.head.weights.extent(0) != m.categories.size() ||
      m.head.bias.size() != m.categories.size())
    throw IoError("fusion checkpoint: head shape does not match the category list");
  m.referral.validate(m.categories.size());
  return m;
}

}  // namespace capsdbn::io
