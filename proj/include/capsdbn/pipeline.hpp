#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "capsdbn/capsnet.hpp"
#include "capsdbn/dbn.hpp"
#include "capsdbn/eval.hpp"
#include "capsdbn/hybrid.hpp"
#include "capsdbn/io/checkpoint.hpp"
#include "capsdbn/io/config.hpp"
#include "capsdbn/io/dataset.hpp"
#include "capsdbn/io/files.hpp"
#include "capsdbn/io/models.hpp"
#include "capsdbn/io/png.hpp"
#include "capsdbn/preprocess.hpp"
#include "capsdbn/synth.hpp"
#include "capsdbn/training.hpp"

// Batch commands behind the CLI. Every command is a deterministic function
// of its inputs and the configuration seed.

namespace capsdbn::pipeline {

namespace fs = std::filesystem;
using io::RunConfig;

/// DBN visible layer: whitened pixels mapped into (0,1) by the logistic
/// function so layer-1 units can be read as Bernoulli probabilities.
inline Tensor<float> dbn_visible(const ImagePatch& p, const WhiteningStats& w) {
  return sigmoid(w.apply(p).pixels);
}

/// Per-image cleanup shared by training and inference: channel
/// standardization followed by median filtering.
inline ImagePatch clean_patch(ImagePatch p, const RunConfig& cfg) {
  return median_filter(standardize_channels(std::move(p)), cfg.median_window);
}

inline std::string curves_csv(const std::vector<EpochTrace>& trace) {
  std::string out = "epoch,train_loss,train_acc,val_loss,val_acc\n";
  for (const EpochTrace& e : trace)
    out += std::to_string(e.epoch) + "," + io::fixed6(e.train_loss) + "," + io::fixed6(e.train_accuracy) + "," +
           io::fixed6(e.val_loss) + "," + io::fixed6(e.val_accuracy) + "\n";
  return out;
}

// --- synth --------------------------------------------------------------------

/// Writes images/c<k>_<i>.png and manifest.csv; returns the manifest path.
inline fs::path cmd_synth(const fs::path& out_dir, const RunConfig& cfg) {
  cfg.validate();
  const std::vector<ImagePatch> data =
      synth_dataset(cfg.category_count(), cfg.synth_per_category, cfg.synth_extent, cfg.seed);
  std::string manifest = "path,label\n";
  std::map<std::size_t, std::size_t> seen;
  for (const ImagePatch& p : data) {
    char name[64];
    std::snprintf(name, sizeof name, "images/c%zu_%05zu.png", *p.label, seen[*p.label]++);
    io::write_png(out_dir / name, p.pixels);
    manifest += io::csv_field(name) + "," + io::csv_field(cfg.categories[*p.label]) + "\n";
  }
  io::write_atomic(out_dir / "manifest.csv", manifest);
  return out_dir / "manifest.csv";
}

// --- preprocess -------------------------------------------------------------

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Stratified seeded split: each category is shuffled and cut at
/// round(fraction * n), keeping at least one example on each side when n >= 2.
inline SplitIndices stratified_split(const std::vector<std::size_t>& labels, std::size_t K, double fraction,
                                     RandomStream stream) {
  std::vector<std::vector<std::size_t>> by_label(K);
  for (std::size_t i = 0; i < labels.size(); ++i) by_label.at(labels[i]).push_back(i);
  SplitIndices s;
  for (auto& idx : by_label) {
    stream.shuffle(idx);
    auto cut = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    if (idx.size() >= 2) cut = std::clamp<std::size_t>(cut, 1, idx.size() - 1);
    s.train.insert(s.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cut));
    s.val.insert(s.val.end(), idx.begin() + static_cast<std::ptrdiff_t>(cut), idx.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  return s;
}

/// Builds the archive from already-loaded patches: split, clean, augment the
/// training split and fit whitening on it. Validation data never feeds any
/// fitted statistic.
inline io::Archive build_archive(const std::vector<ImagePatch>& patches, const RunConfig& cfg) {
  cfg.validate();
  if (patches.empty()) throw ConfigError("preprocess: no images");
  const Shape& shape = patches.front().pixels.shape();
  std::vector<std::size_t> labels;
  for (const ImagePatch& p : patches) {
    if (p.pixels.shape() != shape)
      throw ConfigError("preprocess: " + p.source_id + " has shape " + shape_str(p.pixels.shape()) + ", expected " +
                        shape_str(shape));
    labels.push_back(p.label.value());
  }
  const RandomStream root(cfg.seed);
  const SplitIndices split = stratified_split(labels, cfg.category_count(), cfg.train_fraction, root.fork("split"));

  std::vector<ImagePatch> train;
  for (std::size_t i : split.train) train.push_back(clean_patch(patches[i], cfg));
  AugmentSpec aug = cfg.augment;
  aug.seed = root.fork("augment").seed();
  io::Archive a;
  a.train = augment(train, aug);
  for (std::size_t i : split.val) {
    ImagePatch p = clean_patch(patches[i], cfg);
    if (cfg.augment.crop_extent) p.pixels = center_crop(p.pixels, *cfg.augment.crop_extent);
    a.val.push_back(std::move(p));
  }
  a.whitening = whiten_for_dbn(a.train).stats;
  return a;
}

inline void cmd_preprocess(const fs::path& manifest, const RunConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  std::vector<ImagePatch> patches;
  for (const io::ManifestRow& row : io::read_manifest(manifest, cfg)) {
    Tensor<float> px;
    try {
      px = io::read_png(row.path);
    } catch (const IoError& e) {
      throw IoError("manifest " + manifest.string() + " line " + std::to_string(row.line) + ": " + e.what());
    }
    patches.push_back(ImagePatch{std::move(px), row.label, row.raw_path});
  }
  io::write_archive(out_dir, build_archive(patches, cfg), cfg);
}

// --- stage 1: DBN -------------------------------------------------------------

inline void check_dbn_input(const RunConfig& cfg, const Shape& shape) {
  const CrbmSpec& l1 = cfg.dbn_layers.front();
  if (l1.visible_channels != shape[0] || l1.visible_extent != shape[1] || shape[1] != shape[2])
    throw ConfigError("dbn.l1.visible_extent / dbn.l1.visible_channels (" + std::to_string(l1.visible_extent) + ", " +
                      std::to_string(l1.visible_channels) + ") do not match processed patches " + shape_str(shape));
}

inline io::DbnCheckpoint pretrain_dbn(const io::Archive& a, const RunConfig& cfg, ErrorTraces* traces) {
  cfg.validate();
  if (a.train.empty()) throw UsageError("pretrain: archive has no training patches");
  check_dbn_input(cfg, a.train.front().pixels.shape());
  std::vector<Tensor<float>> visible;
  visible.reserve(a.train.size());
  for (const ImagePatch& p : a.train) visible.push_back(dbn_visible(p, a.whitening));
  io::DbnCheckpoint m;
  m.stack = pretrain_greedy(visible, cfg.dbn_layers, cfg.dbn_train_cfg(), traces);
  m.whitening = a.whitening;
  m.config_text = cfg.to_text();
  return m;
}

inline void cmd_pretrain_dbn(const fs::path& archive, const RunConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  ErrorTraces traces;
  const io::DbnCheckpoint m = pretrain_dbn(io::read_archive(archive), cfg, &traces);
  io::to_checkpoint(m).save(out_dir / "dbn.cblf");
  std::string csv = "layer,epoch,reconstruction_error\n";
  for (std::size_t l = 0; l < traces.size(); ++l)
    for (std::size_t e = 0; e < traces[l].size(); ++e)
      csv += std::to_string(l + 1) + "," + std::to_string(e + 1) + "," + io::fixed6(traces[l][e]) + "\n";
  io::write_atomic(out_dir / "dbn_errors.csv", csv);
}

// --- stage 2: CapsNet ---------------------------------------------------------

inline CapsNetSpec caps_spec_for(const RunConfig& cfg, const Shape& input) {
  CapsNetSpec s = cfg.caps;
  s.channels = input[0];
  s.height = input[1];
  s.width = input[2];
  s.category_count = cfg.category_count();
  s.validate();
  return s;
}

inline CapsTrainCfg caps_train_cfg(const RunConfig& cfg) {
  CapsTrainCfg t;
  t.adam.learning_rate = cfg.caps_learning_rate;
  t.margin = cfg.margin;
  t.mini_batch_size = cfg.mini_batch_size;
  t.early_stop = cfg.early_stop;
  t.seed = cfg.seed;
  return t;
}

inline std::pair<io::CapsNetCheckpoint, std::vector<EpochTrace>> train_caps(const io::Archive& a,
                                                                             const RunConfig& cfg) {
  cfg.validate();
  if (a.train.empty()) throw UsageError("train-caps: archive has no training patches");
  const CapsNetSpec spec = caps_spec_for(cfg, a.train.front().pixels.shape());
  CapsTrainResult r = train_capsnet(a.train, a.val, spec, caps_train_cfg(cfg));
  return {io::CapsNetCheckpoint{spec, std::move(r.params), cfg.to_text()}, std::move(r.trace)};
}

inline void cmd_train_caps(const fs::path& archive, const RunConfig& cfg, const fs::path& out_dir) {
  auto [model, trace] = train_caps(io::read_archive(archive), cfg);
  io::to_checkpoint(model).save(out_dir / "caps.cblf");
  io::write_atomic(out_dir / "curves.csv", curves_csv(trace));
}

// --- stage 3: fusion -----------------------------------------------------------

/// Both frozen branches plus (optionally) the fusion head.
struct HybridModels {
  io::CapsNetCheckpoint caps;
  io::DbnCheckpoint dbn;
  std::optional<io::FusionCheckpoint> fusion;

  std::size_t fused_dim() const { return caps.spec.category_count + dbn.stack.feature_length(); }

  void check_compatible() const {
    const Shape caps_in{caps.spec.channels, caps.spec.height, caps.spec.width};
    const CrbmSpec& l1 = dbn.stack.layers.front().spec;
    const Shape dbn_in{l1.visible_channels, l1.visible_extent, l1.visible_extent};
    if (caps_in != dbn_in)
      throw ConfigError("checkpoints incompatible: capsnet input " + shape_str(caps_in) + " vs dbn input " +
                        shape_str(dbn_in));
    if (dbn.whitening.mean.shape() != dbn_in)
      throw ConfigError("checkpoints incompatible: whitening statistics do not match the dbn input");
    if (fusion) {
      if (fusion->head.categories() != caps.spec.category_count || fusion->head.input_dim() != fused_dim())
        throw ConfigError("checkpoints incompatible: fusion head is " + shape_str(fusion->head.weights.shape()) +
                          ", expected (" + std::to_string(caps.spec.category_count) + "," +
                          std::to_string(fused_dim()) + ")");
    }
  }

  std::vector<float> features(const ImagePatch& cleaned) const {
    const ForwardResult<float> r = forward(cleaned.pixels, caps.params, caps.spec);
    const std::vector<float> feats = extract_features(dbn_visible(cleaned, dbn.whitening), dbn.stack);
    return fuse_features<float>(r.norms, feats, caps.spec.category_count, dbn.stack.feature_length());
  }

  HybridPrediction predict(const ImagePatch& cleaned) const {
    return predict_hybrid(cleaned.pixels, dbn_visible(cleaned, dbn.whitening), caps.spec,
                          caps.params, dbn.stack, fusion.value().head);
  }
};

inline HybridModels load_models(const fs::path& caps_ckpt, const fs::path& dbn_ckpt,
                                std::optional<fs::path> fusion_ckpt = std::nullopt) {
  HybridModels m{io::capsnet_from(io::Checkpoint::load(caps_ckpt)), io::dbn_from(io::Checkpoint::load(dbn_ckpt)),
                 std::nullopt};
  if (fusion_ckpt) m.fusion = io::fusion_from(io::Checkpoint::load(*fusion_ckpt));
  m.check_compatible();
  return m;
}

inline LabeledFeatures labeled_features(const std::vector<ImagePatch>& data, const HybridModels& m) {
  LabeledFeatures out;
  for (const ImagePatch& p : data) {
    out.features.push_back(m.features(p));
    out.labels.push_back(p.label.value());
  }
  return out;
}

inline FusionTrainCfg fusion_train_cfg(const RunConfig& cfg) {
  FusionTrainCfg f;
  f.learning_rate = cfg.fusion_learning_rate;
  f.epochs = std::min(cfg.fusion_epochs, cfg.early_stop.max_epochs);
  f.batch_size = cfg.fusion_batch_size;
  f.seed = RandomStream(cfg.seed).fork("fusion").seed();
  f.early_stop = cfg.early_stop;
  f.early_stop->max_epochs = f.epochs;
  return f;
}

inline std::pair<io::FusionCheckpoint, std::vector<EpochTrace>> train_fusion_stage(const io::Archive& a,
                                                                                    const HybridModels& m,
                                                                                    const RunConfig& cfg) {
  cfg.validate();
  if (m.caps.spec.category_count != cfg.category_count())
    throw ConfigError("categories: config declares " + std::to_string(cfg.category_count()) +
                      " categories but the capsule network has " + std::to_string(m.caps.spec.category_count));
  const LabeledFeatures train = labeled_features(a.train, m);
  const LabeledFeatures val = labeled_features(a.val, m);
  FusionTrainResult r = train_fusion(train, cfg.category_count(), fusion_train_cfg(cfg), val.features.empty() ? nullptr : &val);
  io::FusionCheckpoint ck{std::move(r.head), cfg.categories, cfg.referral_policy(), cfg.to_text()};
  return {std::move(ck), std::move(r.trace)};
}

inline void cmd_train_fusion(const fs::path& archive, const fs::path& caps_ckpt, const fs::path& dbn_ckpt,
                             const RunConfig& cfg, const fs::path& out_dir) {
  const HybridModels m = load_models(caps_ckpt, dbn_ckpt);
  auto [model, trace] = train_fusion_stage(io::read_archive(archive), m, cfg);
  io::to_checkpoint(model).save(out_dir / "fusion.cblf");
  io::write_atomic(out_dir / "curves.csv", curves_csv(trace));
}

// --- evaluation -----------------------------------------------------------------

struct EvaluationReport {
  ConfusionMatrix confusion;
  MetricsReport metrics;
  ConfusionMatrix referral_confusion;  // 0 = no referral, 1 = referral
  MetricsReport referral;
  AucReport val_auc;
  AucReport train_auc;
};

inline EvaluationReport evaluate_predictions(std::span<const std::size_t> truths, std::span<const std::size_t> preds,
                                             std::size_t K, const ReferralPolicy& policy) {
  EvaluationReport r;
  r.confusion = confusion(truths, preds, K);
  r.metrics = precision_recall_f1(r.confusion);
  std::vector<std::size_t> rt, rp;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    rt.push_back(referral_decision(truths[i], policy, K));
    rp.push_back(referral_decision(preds[i], policy, K));
  }
  r.referral_confusion = confusion(rt, rp, 2);
  r.referral = precision_recall_f1(r.referral_confusion);
  return r;
}

/// Writes metrics.csv, confusion.csv and referral.csv (plus auc.csv when AUC
/// reports are available).
inline void write_reports(const fs::path& out_dir, const EvaluationReport& r, const std::vector<std::string>& names,
                          bool with_auc) {
  std::string metrics = "category,precision,recall,f1,support\n";
  for (std::size_t k = 0; k < names.size(); ++k) {
    const CategoryMetrics& m = r.metrics.categories[k];
    metrics += io::csv_field(names[k]) + "," + io::fixed6(m.precision) + "," + io::fixed6(m.recall) + "," +
               io::fixed6(m.f1) + "," + std::to_string(m.support) + "\n";
  }
  io::write_atomic(out_dir / "metrics.csv", metrics);

  std::string cm = "true\\predicted";
  for (const std::string& n : names) cm += "," + io::csv_field(n);
  cm += "\n";
  for (std::size_t t = 0; t < names.size(); ++t) {
    cm += io::csv_field(names[t]);
    for (std::size_t p = 0; p < names.size(); ++p) cm += "," + std::to_string(r.confusion.at(t, p));
    cm += "\n";
  }
  io::write_atomic(out_dir / "confusion.csv", cm);

  const CategoryMetrics& ref = r.referral.categories[1];
  io::write_atomic(out_dir / "referral.csv", "precision,recall,f1,support\n" + io::fixed6(ref.precision) + "," +
                                                 io::fixed6(ref.recall) + "," + io::fixed6(ref.f1) + "," +
                                                 std::to_string(ref.support) + "\n");
  if (!with_auc) return;
  std::string auc = "split,category,auc\n";
  for (const auto& [split, rep] : {std::pair<const char*, const AucReport*>{"val", &r.val_auc}, {"train", &r.train_auc}}) {
    for (std::size_t k = 0; k < names.size(); ++k)
      auc += std::string(split) + "," + io::csv_field(names[k]) + "," +
             (rep->per_category[k] ? io::fixed6(*rep->per_category[k]) : std::string("skipped")) + "\n";
    auc += std::string(split) + ",macro," + io::fixed6(rep->macro) + "\n";
  }
  io::write_atomic(out_dir / "auc.csv", auc);
}

inline EvaluationReport evaluate_models(const io::Archive& a, const HybridModels& m) {
  const std::size_t K = m.caps.spec.category_count;
  auto run = [&](const std::vector<ImagePatch>& data, std::vector<std::size_t>& truths, std::vector<std::size_t>& preds,
                 std::vector<std::vector<double>>& scores) {
    for (const ImagePatch& p : data) {
      const HybridPrediction h = m.predict(p);
      truths.push_back(p.label.value());
      preds.push_back(h.category);
      scores.push_back(h.probabilities);
    }
  };
  std::vector<std::size_t> vt, vp, tt, tp;
  std::vector<std::vector<double>> vs, ts;
  run(a.val, vt, vp, vs);
  run(a.train, tt, tp, ts);
  EvaluationReport r = evaluate_predictions(vt, vp, K, m.fusion->referral);
  r.val_auc = roc_auc_ovr(vs, vt, K);
  r.train_auc = roc_auc_ovr(ts, tt, K);
  return r;
}

inline EvaluationReport cmd_evaluate(const fs::path& archive, const fs::path& caps_ckpt, const fs::path& dbn_ckpt,
                                     const fs::path& fusion_ckpt, const fs::path& out_dir) {
  const HybridModels m = load_models(caps_ckpt, dbn_ckpt, fusion_ckpt);
  const io::Archive a = io::read_archive(archive);
  if (a.val.empty()) throw UsageError("evaluate: archive has no validation patches");
  const EvaluationReport r = evaluate_models(a, m);
  write_reports(out_dir, r, m.fusion->categories, true);
  return r;
}

// --- prediction -------------------------------------------------------------------

/// Prints `path,category,probabilities,referral` rows (probabilities joined
/// by ';') for each image.
inline void cmd_predict(const std::vector<fs::path>& images, const fs::path& caps_ckpt, const fs::path& dbn_ckpt,
                        const fs::path& fusion_ckpt, std::ostream& out) {
  const HybridModels m = load_models(caps_ckpt, dbn_ckpt, fusion_ckpt);
  const RunConfig cfg = io::parse_config(m.caps.config_text);
  const std::size_t K = m.caps.spec.category_count;
  out << "path,category,probabilities,referral\n";
  for (const fs::path& path : images) {
    ImagePatch p = clean_patch(ImagePatch{io::read_png(path), std::nullopt, path.string()}, cfg);
    if (cfg.augment.crop_extent) p.pixels = center_crop(p.pixels, *cfg.augment.crop_extent);
    const HybridPrediction h = m.predict(p);
    std::string probs;
    for (std::size_t k = 0; k < K; ++k) probs += (k ? ";" : "") + io::fixed6(h.probabilities[k]);
    out << io::csv_field(path.string()) << "," << io::csv_field(m.fusion->categories[h.category]) << "," << probs
        << "," << (referral_decision(h.category, m.fusion->referral, K) ? "true" : "false") << "\n";
  }
}

}  // namespace capsdbn::pipeline
