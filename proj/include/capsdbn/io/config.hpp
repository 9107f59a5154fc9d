#pragma once

#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "capsdbn/capsnet.hpp"
#include "capsdbn/dbn.hpp"
#include "capsdbn/error.hpp"
#include "capsdbn/eval.hpp"
#include "capsdbn/hybrid.hpp"
#include "capsdbn/io/files.hpp"
#include "capsdbn/preprocess.hpp"
#include "capsdbn/synth.hpp"

namespace capsdbn::io {

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    std::string part = trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (!part.empty()) parts.push_back(std::move(part));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Resolved run configuration. Parsed from flat `key = value` text with `#`
/// comments; every key is optional and unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 42;
  std::vector<std::string> categories = default_category_names();
  std::vector<std::string> referral_categories = {"Low Risk of Cancer", "High Risk of Cancer"};
  double train_fraction = 0.8;

  std::size_t synth_per_category = 120;
  std::size_t synth_extent = 32;

  std::size_t median_window = 3;
  AugmentSpec augment{true, true, {90, 180, 270}, std::nullopt, 3, 0};
  std::size_t mini_batch_size = 16;
  EarlyStopCfg early_stop;

  // Capsule network; input extents come from the data.
  CapsNetSpec caps;
  double caps_learning_rate = 1e-3;
  MarginLossCfg margin;

  std::vector<CrbmSpec> dbn_layers = {{32, 3, 8, 5, 2}, {14, 8, 12, 5, 2}, {5, 12, 16, 2, 2}};
  DbnTrainCfg dbn;

  double fusion_learning_rate = 0.5;
  std::size_t fusion_epochs = 30;
  std::size_t fusion_batch_size = 16;

  std::size_t category_count() const { return categories.size(); }

  std::size_t category_id(std::string_view name) const {
    for (std::size_t k = 0; k < categories.size(); ++k)
      if (categories[k] == name) return k;
    throw ConfigError("unknown category '" + std::string(name) + "'");
  }

  ReferralPolicy referral_policy() const {
    ReferralPolicy p;
    p.referral_categories.clear();
    for (const std::string& name : referral_categories) p.referral_categories.insert(category_id(name));
    return p;
  }

  DbnTrainCfg dbn_train_cfg() const {
    DbnTrainCfg c = dbn;
    c.mini_batch_size = mini_batch_size;
    c.seed = seed;
    return c;
  }

  /// Cross-field validation; diagnostics name the offending keys.
  void validate() const {
    if (categories.size() < 2) throw ConfigError("categories: at least two categories are required");
    std::set<std::string> uniq(categories.begin(), categories.end());
    if (uniq.size() != categories.size()) throw ConfigError("categories: duplicate names");
    for (const std::string& r : referral_categories)
      if (!uniq.contains(r)) throw ConfigError("referral.categories: '" + r + "' is not in categories");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
      throw ConfigError("split.train_fraction must lie strictly between 0 and 1");
    if (median_window % 2 == 0) throw ConfigError("preprocess.median_window must be odd");
    if (mini_batch_size < 1) throw ConfigError("mini_batch_size must be >= 1");
    if (fusion_batch_size < 1 || fusion_epochs < 1) throw ConfigError("fusion.batch_size and fusion.epochs must be >= 1");
    augment.validate();
    early_stop.validate();
    dbn.validate();
    validate_chain(dbn_layers);
  }

  /// Canonical text: every key, sorted, fixed formatting.
  std::string to_text() const {
    std::map<std::string, std::string> kv;
    auto join = [](const std::vector<std::string>& xs) {
      std::string s;
      for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? ";" : "") + xs[i];
      return s;
    };
    auto num = [](auto v) { return std::to_string(v); };
    kv["seed"] = num(seed);
    kv["categories"] = join(categories);
    kv["referral.categories"] = join(referral_categories);
    kv["split.train_fraction"] = detail::format_double(train_fraction);
    kv["synth.per_category"] = num(synth_per_category);
    kv["synth.extent"] = num(synth_extent);
    kv["preprocess.median_window"] = num(median_window);
    kv["augment.hflip"] = augment.horizontal_flip ? "true" : "false";
    kv["augment.vflip"] = augment.vertical_flip ? "true" : "false";
    std::string rot;
    for (std::size_t i = 0; i < augment.rotations.size(); ++i) rot += (i ? "," : "") + num(augment.rotations[i]);
    kv["augment.rotations"] = rot;
    kv["augment.crop"] = num(augment.crop_extent.value_or(0));
    kv["augment.multiplier"] = num(augment.multiplier);
    kv["mini_batch_size"] = num(mini_batch_size);
    kv["early_stop.patience"] = num(early_stop.patience);
    kv["early_stop.max_epochs"] = num(early_stop.max_epochs);
    kv["early_stop.min_delta"] = detail::format_double(early_stop.min_delta);
    kv["caps.conv_filters"] = num(caps.conv_filters);
    kv["caps.conv_kernel"] = num(caps.conv_kernel);
    kv["caps.primary_groups"] = num(caps.primary_groups);
    kv["caps.primary_dim"] = num(caps.primary_dim);
    kv["caps.primary_kernel"] = num(caps.primary_kernel);
    kv["caps.primary_stride"] = num(caps.primary_stride);
    kv["caps.category_dim"] = num(caps.category_dim);
    kv["caps.routing_iters"] = num(caps.routing_iters);
    kv["caps.activation"] = activation_name(caps.activation);
    kv["caps.learning_rate"] = detail::format_double(caps_learning_rate);
    kv["caps.m_plus"] = detail::format_double(margin.m_plus);
    kv["caps.m_minus"] = detail::format_double(margin.m_minus);
    kv["caps.lambda"] = detail::format_double(margin.lambda);
    kv["dbn.layers"] = num(dbn_layers.size());
    for (std::size_t l = 0; l < dbn_layers.size(); ++l) {
      const std::string p = "dbn.l" + std::to_string(l + 1) + ".";
      kv[p + "visible_extent"] = num(dbn_layers[l].visible_extent);
      kv[p + "visible_channels"] = num(dbn_layers[l].visible_channels);
      kv[p + "groups"] = num(dbn_layers[l].groups);
      kv[p + "filter_extent"] = num(dbn_layers[l].filter_extent);
      kv[p + "pool_window"] = num(dbn_layers[l].pool_window);
    }
    kv["dbn.learning_rate"] = detail::format_double(dbn.learning_rate);
    kv["dbn.epochs_per_layer"] = num(dbn.epochs_per_layer);
    kv["dbn.cd_steps"] = num(dbn.cd_steps);
    kv["dbn.weight_decay"] = detail::format_double(dbn.weight_decay);
    kv["dbn.init_stddev"] = detail::format_double(dbn.init_stddev);
    kv["fusion.learning_rate"] = detail::format_double(fusion_learning_rate);
    kv["fusion.epochs"] = num(fusion_epochs);
    kv["fusion.batch_size"] = num(fusion_batch_size);
    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
  }
};

namespace detail {

class KeyValues {
 public:
  explicit KeyValues(std::map<std::string, std::pair<std::string, std::size_t>> kv) : kv_(std::move(kv)) {}

  bool has(const std::string& key) const { return kv_.contains(key); }

  template <typename Fn>
  void take(const std::string& key, Fn&& apply) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return;
    try {
      apply(it->second.first);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(it->second.second) + ": " + key + ": " + e.what());
    }
    kv_.erase(it);
  }

  void reject_leftovers() const {
    if (!kv_.empty()) {
      const auto& [key, val] = *kv_.begin();
      throw ConfigError("line " + std::to_string(val.second) + ": unknown key '" + key + "'");
    }
  }

 private:
  std::map<std::string, std::pair<std::string, std::size_t>> kv_;
};

template <typename T>
T parse_number(const std::string& s) {
  T v{};
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("invalid number '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("invalid boolean '" + s + "'");
}

}  // namespace detail

inline RunConfig parse_config(std::string_view text) {
  std::map<std::string, std::pair<std::string, std::size_t>> raw;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = detail::trim(std::string_view(t).substr(0, eq));
    if (raw.contains(key)) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    raw[key] = {detail::trim(std::string_view(t).substr(eq + 1)), line_no};
  }

  RunConfig c;
  detail::KeyValues kv(std::move(raw));
  using detail::parse_bool;
  using detail::parse_number;
  auto size = [](std::size_t& dst) { return [&dst](const std::string& v) { dst = parse_number<std::size_t>(v); }; };
  auto real = [](double& dst) { return [&dst](const std::string& v) { dst = parse_number<double>(v); }; };

  kv.take("seed", [&](const std::string& v) { c.seed = parse_number<std::uint64_t>(v); });
  kv.take("categories", [&](const std::string& v) { c.categories = detail::split(v, ';'); });
  kv.take("referral.categories", [&](const std::string& v) { c.referral_categories = detail::split(v, ';'); });
  kv.take("split.train_fraction", real(c.train_fraction));
  kv.take("synth.per_category", size(c.synth_per_category));
  kv.take("synth.extent", size(c.synth_extent));
  kv.take("preprocess.median_window", size(c.median_window));
  kv.take("augment.hflip", [&](const std::string& v) { c.augment.horizontal_flip = parse_bool(v); });
  kv.take("augment.vflip", [&](const std::string& v) { c.augment.vertical_flip = parse_bool(v); });
  kv.take("augment.rotations", [&](const std::string& v) {
    c.augment.rotations.clear();
    for (const std::string& r : detail::split(v, ',')) c.augment.rotations.push_back(parse_number<int>(r));
  });
  kv.take("augment.crop", [&](const std::string& v) {
    const auto e = parse_number<std::size_t>(v);
    c.augment.crop_extent = e == 0 ? std::nullopt : std::optional<std::size_t>(e);
  });
  kv.take("augment.multiplier", size(c.augment.multiplier));
  kv.take("mini_batch_size", size(c.mini_batch_size));
  kv.take("early_stop.patience", size(c.early_stop.patience));
  kv.take("early_stop.max_epochs", size(c.early_stop.max_epochs));
  kv.take("early_stop.min_delta", real(c.early_stop.min_delta));
  kv.take("caps.conv_filters", size(c.caps.conv_filters));
  kv.take("caps.conv_kernel", size(c.caps.conv_kernel));
  kv.take("caps.primary_groups", size(c.caps.primary_groups));
  kv.take("caps.primary_dim", size(c.caps.primary_dim));
  kv.take("caps.primary_kernel", size(c.caps.primary_kernel));
  kv.take("caps.primary_stride", size(c.caps.primary_stride));
  kv.take("caps.category_dim", size(c.caps.category_dim));
  kv.take("caps.routing_iters", size(c.caps.routing_iters));
  kv.take("caps.activation", [&](const std::string& v) { c.caps.activation = parse_activation(v); });
  kv.take("caps.learning_rate", real(c.caps_learning_rate));
  kv.take("caps.m_plus", real(c.margin.m_plus));
  kv.take("caps.m_minus", real(c.margin.m_minus));
  kv.take("caps.lambda", real(c.margin.lambda));

  std::size_t layers = c.dbn_layers.size();
  kv.take("dbn.layers", size(layers));
  if (layers < 1) throw ConfigError("dbn.layers must be >= 1");
  c.dbn_layers.resize(layers, CrbmSpec{1, 1, 1, 1, 1});
  std::vector<std::optional<std::size_t>> declared_hidden(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string p = "dbn.l" + std::to_string(l + 1) + ".";
    CrbmSpec& s = c.dbn_layers[l];
    // Channels and visible extent default to whatever the layer below emits.
    if (l > 0) {
      s.visible_channels = c.dbn_layers[l - 1].groups;
      if (c.dbn_layers[l - 1].pool_window > 0 && c.dbn_layers[l - 1].filter_extent <= c.dbn_layers[l - 1].visible_extent)
        s.visible_extent = c.dbn_layers[l - 1].pool_extent();
    }
    kv.take(p + "visible_extent", size(s.visible_extent));
    kv.take(p + "visible_channels", size(s.visible_channels));
    kv.take(p + "groups", size(s.groups));
    kv.take(p + "filter_extent", size(s.filter_extent));
    kv.take(p + "pool_window", size(s.pool_window));
    kv.take(p + "hidden_extent", [&](const std::string& v) { declared_hidden[l] = parse_number<std::size_t>(v); });
    if (declared_hidden[l]) {
      if (s.filter_extent > s.visible_extent) s.validate(p);
      s.check_hidden_extent(*declared_hidden[l], p);
    }
  }
  kv.take("dbn.learning_rate", real(c.dbn.learning_rate));
  kv.take("dbn.epochs_per_layer", size(c.dbn.epochs_per_layer));
  kv.take("dbn.cd_steps", size(c.dbn.cd_steps));
  kv.take("dbn.weight_decay", real(c.dbn.weight_decay));
  kv.take("dbn.init_stddev", real(c.dbn.init_stddev));
  kv.take("fusion.learning_rate", real(c.fusion_learning_rate));
  kv.take("fusion.epochs", size(c.fusion_epochs));
  kv.take("fusion.batch_size", size(c.fusion_batch_size));
  kv.reject_leftovers();
  c.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) { return parse_config(read_file(path)); }

}  // namespace capsdbn::io
