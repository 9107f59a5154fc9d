// capsdbn: batch command-line surface for the hybrid capsule / DBN classifier.
//
//   capsdbn synth        --out DIR [--config F] [--seed N]
//   capsdbn preprocess   --manifest CSV --out DIR [--config F] [--seed N]
//   capsdbn pretrain-dbn --archive DIR --out DIR [--config F] [--seed N]
//   capsdbn train-caps   --archive DIR --out DIR [--config F] [--seed N]
//   capsdbn train-fusion --archive DIR --caps CK --dbn CK --out DIR [--config F] [--seed N]
//   capsdbn evaluate     --archive DIR --caps CK --dbn CK --fusion CK --out DIR
//   capsdbn predict      --caps CK --dbn CK --fusion CK IMAGE...
//
// Failures print one line `error kind=<kind> message="<text>"` to stderr.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "capsdbn/error.hpp"
#include "capsdbn/io/config.hpp"
#include "capsdbn/pipeline.hpp"

namespace fs = std::filesystem;
namespace pl = capsdbn::pipeline;

namespace {

struct CommonArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

capsdbn::io::RunConfig resolve_config(const CommonArgs& a) {
  capsdbn::io::RunConfig cfg = a.config.empty() ? capsdbn::io::RunConfig{} : capsdbn::io::load_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  return cfg;
}

int exit_code(const capsdbn::Error& e) {
  const std::string kind = e.kind();
  if (kind == "config") return 2;
  if (kind == "io") return 3;
  if (kind == "usage") return 4;
  if (kind == "numeric") return 5;
  return 1;
}

void report(const char* kind, std::string message) {
  for (char& c : message)
    if (c == '\n' || c == '\r') c = ' ';
  std::string escaped;
  for (char c : message) escaped += c == '"' ? std::string("\\\"") : std::string(1, c);
  std::cerr << "error kind=" << kind << " message=\"" << escaped << "\"\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid capsule network / convolutional DBN lesion classifier"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string manifest, archive, caps, dbn, fusion;
  std::vector<std::string> images;

  auto add_common = [&](CLI::App* cmd, bool needs_out = true) {
    cmd->add_option("--config", common.config, "Run configuration (key = value)")->check(CLI::ExistingFile);
    cmd->add_option("--seed", common.seed, "Overrides the configured seed");
    if (needs_out) cmd->add_option("--out", common.out, "Output directory")->required();
  };

  auto* synth = app.add_subcommand("synth", "Generate the synthetic dataset and its manifest");
  add_common(synth);

  auto* prep = app.add_subcommand("preprocess", "Split, standardize, filter and augment a manifest");
  add_common(prep);
  prep->add_option("--manifest", manifest, "CSV with header path,label")->required();

  auto* pre_dbn = app.add_subcommand("pretrain-dbn", "Greedy CRBM pretraining of the DBN");
  add_common(pre_dbn);
  pre_dbn->add_option("--archive", archive, "Processed patch archive")->required();

  auto* tr_caps = app.add_subcommand("train-caps", "Supervised capsule network training");
  add_common(tr_caps);
  tr_caps->add_option("--archive", archive, "Processed patch archive")->required();

  auto* tr_fusion = app.add_subcommand("train-fusion", "Train the fusion head on frozen branches");
  add_common(tr_fusion);
  tr_fusion->add_option("--archive", archive, "Processed patch archive")->required();
  tr_fusion->add_option("--caps", caps, "CapsNet checkpoint")->required();
  tr_fusion->add_option("--dbn", dbn, "DBN checkpoint")->required();

  auto* eval = app.add_subcommand("evaluate", "Metrics, confusion matrix, referral summary, AUC");
  eval->add_option("--out", common.out, "Output directory")->required();
  eval->add_option("--archive", archive, "Processed patch archive")->required();
  eval->add_option("--caps", caps, "CapsNet checkpoint")->required();
  eval->add_option("--dbn", dbn, "DBN checkpoint")->required();
  eval->add_option("--fusion", fusion, "Fusion checkpoint")->required();

  auto* pred = app.add_subcommand("predict", "Classify PNG images");
  pred->add_option("--caps", caps, "CapsNet checkpoint")->required();
  pred->add_option("--dbn", dbn, "DBN checkpoint")->required();
  pred->add_option("--fusion", fusion, "Fusion checkpoint")->required();
  pred->add_option("images", images, "PNG files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report("usage", e.what());
    return 4;
  }

  try {
    if (synth->parsed()) {
      const fs::path m = pl::cmd_synth(common.out, resolve_config(common));
      std::cout << "manifest " << m.string() << "\n";
    } else if (prep->parsed()) {
      pl::cmd_preprocess(manifest, resolve_config(common), common.out);
    } else if (pre_dbn->parsed()) {
      pl::cmd_pretrain_dbn(archive, resolve_config(common), common.out);
    } else if (tr_caps->parsed()) {
      pl::cmd_train_caps(archive, resolve_config(common), common.out);
    } else if (tr_fusion->parsed()) {
      pl::cmd_train_fusion(archive, caps, dbn, resolve_config(common), common.out);
    } else if (eval->parsed()) {
      const auto r = pl::cmd_evaluate(archive, caps, dbn, fusion, common.out);
      std::cout << "accuracy " << capsdbn::io::fixed6(r.metrics.accuracy) << " macro_auc "
                << capsdbn::io::fixed6(r.val_auc.macro) << "\n";
    } else if (pred->parsed()) {
      std::vector<fs::path> paths(images.begin(), images.end());
      pl::cmd_predict(paths, caps, dbn, fusion, std::cout);
    }
  } catch (const capsdbn::Error& e) {
    report(e.kind(), e.what());
    return exit_code(e);
  } catch (const std::exception& e) {
    report("internal", e.what());
    return 1;
  }
  return 0;
}
