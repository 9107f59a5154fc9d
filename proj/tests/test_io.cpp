#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "capsdbn/io/checkpoint.hpp"
#include "capsdbn/io/config.hpp"
#include "capsdbn/io/dataset.hpp"
#include "capsdbn/io/models.hpp"
#include "capsdbn/io/png.hpp"
#include "support.hpp"

namespace capsdbn {
namespace {

namespace fs = std::filesystem;

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("capsdbn_io_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

std::string error_of(const std::string& text) {
  try {
    io::parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, DefaultsRoundTripThroughText) {
  const io::RunConfig a;
  EXPECT_NO_THROW(a.validate());
  const io::RunConfig b = io::parse_config(a.to_text());
  EXPECT_EQ(a.to_text(), b.to_text());
  EXPECT_EQ(b.augment.multiplier, 3u);
  EXPECT_EQ(b.augment.rotations, (std::vector<int>{90, 180, 270}));
}

TEST(Config, OverridesCommentsAndEmptyRotations) {
  const io::RunConfig c = io::parse_config(
      "# comment\nseed = 7\naugment.rotations =\naugment.crop = 28  # trailing\ncaps.activation = tanh\n");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_TRUE(c.augment.rotations.empty());
  EXPECT_EQ(c.augment.crop_extent, 28u);
  EXPECT_EQ(c.caps.activation, Activation::tanh);
  EXPECT_EQ(io::parse_config(c.to_text()).to_text(), c.to_text());
}

TEST(Config, DiagnosticsNameTheKey) {
  EXPECT_NE(error_of("bogus.key = 1\n").find("bogus.key"), std::string::npos);
  EXPECT_NE(error_of("seed = 1\nseed = 2\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of("seed\n").find("line 1"), std::string::npos);
  EXPECT_NE(error_of("dbn.l1.pool_window = 3\n").find("dbn.l1.pool_window"), std::string::npos);
  EXPECT_NE(error_of("dbn.l2.visible_extent = 13\n").find("dbn.l2.visible_extent"), std::string::npos);
  EXPECT_NE(error_of("dbn.l1.hidden_extent = 27\n").find("dbn.l1.hidden_extent"), std::string::npos);
  EXPECT_NE(error_of("caps.activation = sigmoid\n").find("caps.activation"), std::string::npos);
  EXPECT_NE(error_of("referral.categories = Nope\n").find("referral.categories"), std::string::npos);
  EXPECT_NO_THROW(io::parse_config("dbn.l1.hidden_extent = 28\n"));
}

TEST(Checkpoint, SectionsRoundTrip) {
  io::Checkpoint ck;
  ck.add_tensor("t", Tensor<float>({2, 3}, {1.5f, -0.0f, 3e-39f, 1e30f, -2.25f, 0.1f}));
  ck.add_u32("u", {1, 2, 0xFFFFFFFFu});
  ck.add_text("s", "hello\nworld");
  const io::Checkpoint back = io::Checkpoint::parse(ck.serialize());
  EXPECT_EQ(back.tensor("t"), ck.tensor("t"));
  EXPECT_TRUE(std::signbit(back.tensor("t")[1]));
  EXPECT_EQ(back.u32("u"), ck.u32("u"));
  EXPECT_EQ(back.text("s"), "hello\nworld");
  EXPECT_EQ(back.serialize(), ck.serialize());
  EXPECT_THROW(back.tensor("missing"), IoError);
  EXPECT_THROW(back.u32("t"), IoError);
}

TEST(Checkpoint, VersionMismatchAndCorruption) {
  io::Checkpoint ck;
  ck.add_text("kind", "x");
  std::string bytes = ck.serialize();
  bytes[4] = 2;
  try {
    io::Checkpoint::parse(bytes);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("version mismatch"), std::string::npos);
  }
  EXPECT_THROW(io::Checkpoint::parse("NOPE"), IoError);
  EXPECT_THROW(io::Checkpoint::parse(ck.serialize().substr(0, 20)), IoError);
}

TEST_F(TempDir, ModelCheckpointsSaveLoadSaveByteIdentical) {
  const CapsNetSpec spec = testing::tiny_caps_spec();
  RandomStream rs(3);
  io::CapsNetCheckpoint caps{spec, init_params<float>(spec, rs), "seed = 1\n"};
  io::to_checkpoint(caps).save(dir_ / "caps.cblf");
  const io::CapsNetCheckpoint caps2 = io::capsnet_from(io::Checkpoint::load(dir_ / "caps.cblf"));
  EXPECT_EQ(caps2.spec, spec);
  for (std::size_t t = 0; t < 5; ++t) EXPECT_EQ(*caps2.params.tensors()[t], *caps.params.tensors()[t]);
  io::to_checkpoint(caps2).save(dir_ / "caps2.cblf");
  EXPECT_EQ(io::read_file(dir_ / "caps.cblf"), io::read_file(dir_ / "caps2.cblf"));

  const std::vector<CrbmSpec> specs{{8, 1, 2, 3, 2}, {3, 2, 2, 2, 2}};
  ImagePatch a{Tensor<float>({1, 8, 8}, 0.2f), 0, "a"}, b{Tensor<float>({1, 8, 8}, 0.6f), 1, "b"};
  io::DbnCheckpoint dbn{init_stack<float>(specs, 0.1, rs), whiten_for_dbn({a, b}).stats, "x"};
  io::to_checkpoint(dbn).save(dir_ / "dbn.cblf");
  const io::DbnCheckpoint dbn2 = io::dbn_from(io::Checkpoint::load(dir_ / "dbn.cblf"));
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_EQ(dbn2.stack.layers[l].spec, specs[l]);
    EXPECT_EQ(dbn2.stack.layers[l].params, dbn.stack.layers[l].params);
  }
  EXPECT_EQ(dbn2.whitening.mean, dbn.whitening.mean);
  io::to_checkpoint(dbn2).save(dir_ / "dbn2.cblf");
  EXPECT_EQ(io::read_file(dir_ / "dbn.cblf"), io::read_file(dir_ / "dbn2.cblf"));

  io::FusionCheckpoint fusion{FusionHead<float>::zeros(3, 5), {"a", "b", "c"}, ReferralPolicy{{2}}, "y"};
  fill_normal(fusion.head.weights, rs, 1.0);
  io::to_checkpoint(fusion).save(dir_ / "fusion.cblf");
  const io::FusionCheckpoint fusion2 = io::fusion_from(io::Checkpoint::load(dir_ / "fusion.cblf"));
  EXPECT_EQ(fusion2.head, fusion.head);
  EXPECT_EQ(fusion2.categories, fusion.categories);
  EXPECT_EQ(fusion2.referral.referral_categories, fusion.referral.referral_categories);
  EXPECT_THROW(io::capsnet_from(io::Checkpoint::load(dir_ / "fusion.cblf")), IoError);
}

TEST_F(TempDir, PngRoundTripIsLossless) {
  RandomStream rs(4);
  Tensor<float> px({3, 5, 7});
  for (float& v : px.data()) v = static_cast<float>(rs.below(256) / 255.0);
  io::write_png(dir_ / "x.png", px);
  EXPECT_EQ(io::read_png(dir_ / "x.png"), px);
  Tensor<float> gray({1, 4, 4}, static_cast<float>(128 / 255.0));
  io::write_png(dir_ / "g.png", gray);
  EXPECT_EQ(io::read_png(dir_ / "g.png"), gray);
  EXPECT_THROW(io::read_png(dir_ / "missing.png"), IoError);
}

TEST_F(TempDir, ManifestErrorsCarryLineNumbers) {
  io::write_png(dir_ / "a.png", Tensor<float>({3, 4, 4}));
  const io::RunConfig cfg;
  auto message = [&](const std::string& text) {
    io::write_atomic(dir_ / "m.csv", text);
    try {
      io::read_manifest(dir_ / "m.csv", cfg);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message("file,label\n").find("line 1"), std::string::npos);
  EXPECT_NE(message("path,label\na.png,Lesion not found\nb.png,Lesion not found\n").find("line 3"), std::string::npos);
  EXPECT_NE(message("path,label\na.png,Unknown\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("path,label\na.png\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("path,label\n\"a.png,Lesion not found\n").find("line 2"), std::string::npos);
  io::write_atomic(dir_ / "m.csv", "path,label\na.png,High Risk of Cancer\n");
  const auto rows = io::read_manifest(dir_ / "m.csv", cfg);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].label, 4u);
}

TEST_F(TempDir, ArchiveRoundTrip) {
  io::RunConfig cfg;
  io::Archive a;
  RandomStream rs(5);
  for (std::size_t i = 0; i < 4; ++i) {
    ImagePatch p{Tensor<float>({3, 4, 4}), i % 2, "src/" + std::to_string(i) + ",\"q\""};
    for (float& v : p.pixels.data()) v = static_cast<float>(rs.normal());
    (i < 3 ? a.train : a.val).push_back(p);
  }
  a.whitening = whiten_for_dbn(a.train).stats;
  io::write_archive(dir_ / "arch", a, cfg);
  const io::Archive b = io::read_archive(dir_ / "arch");
  ASSERT_EQ(b.train.size(), 3u);
  ASSERT_EQ(b.val.size(), 1u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(b.train[i].pixels, a.train[i].pixels);
    EXPECT_EQ(b.train[i].label, a.train[i].label);
    EXPECT_EQ(b.train[i].source_id, a.train[i].source_id);
  }
  EXPECT_EQ(b.whitening.stddev, a.whitening.stddev);
  EXPECT_THROW(io::read_archive(dir_ / "nothing"), IoError);
}

}  // namespace
}  // namespace capsdbn
