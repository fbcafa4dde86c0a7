#include <gtest/gtest.h>

#include <sstream>

#include "segan/config.hpp"

namespace segan {
namespace {

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in, "test.cfg");
}

TEST(Config, DefaultsAreDeskScale) {
  const RunConfig cfg;
  EXPECT_EQ(cfg.train.batch_size, 16u);
  EXPECT_EQ(cfg.train.base_feature_maps, 16);
  EXPECT_EQ(cfg.train.crop, 64u);
  EXPECT_EQ(cfg.train.variant, Variant::S3_3C);
  ASSERT_TRUE(cfg.train.clip_c.has_value());
  EXPECT_EQ(*cfg.train.clip_c, 0.01f);
}

TEST(Config, ParsesKeysCommentsAndBlanks) {
  const RunConfig cfg = parse(
      "# comment\n"
      "\n"
      "variant = S1_1C\n"
      "  lr=0.001  \n"
      "clip_c = off\n"
      "volume_crop = none\n"
      "synth.offsets = 0.1,0.2,0.3;0,0,0;1,1,1\n");
  EXPECT_EQ(cfg.train.variant, Variant::S1_1C);
  EXPECT_EQ(cfg.train.lr, 0.001f);
  EXPECT_FALSE(cfg.train.clip_c.has_value());
  EXPECT_FALSE(cfg.train.volume_crop.has_value());
  ASSERT_EQ(cfg.synth.offsets.size(), 3u);
  EXPECT_EQ(cfg.synth.offsets[0], (std::vector<float>{0.1f, 0.2f, 0.3f}));
}

TEST(Config, UnknownKeyRejectedWithLine) {
  try {
    parse("lr = 0.001\nlearning_rate = 0.1\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("test.cfg:2"), std::string::npos) << msg;
    EXPECT_NE(msg.find("learning_rate"), std::string::npos) << msg;
  }
}

TEST(Config, BadValuesRejected) {
  EXPECT_THROW(parse("lr = fast\n"), ConfigError);
  EXPECT_THROW(parse("batch_size = -3\n"), ConfigError);
  EXPECT_THROW(parse("batch_size = 0\n"), ConfigError);
  EXPECT_THROW(parse("variant = S9\n"), ConfigError);
  EXPECT_THROW(parse("volume_crop = 72x72\n"), ConfigError);
  EXPECT_THROW(parse("crop = 60\n"), ConfigError);
  EXPECT_THROW(parse("threshold = 1\n"), ConfigError);
  EXPECT_THROW(parse("lr\n"), ConfigError);
  RunConfig cfg;
  EXPECT_THROW(apply_setting(cfg, "nonsense", "1"), ConfigError);
}

TEST(Config, SettingsRoundTripExactly) {
  RunConfig cfg;
  cfg.train.lr = 3.3333e-5f;
  cfg.train.rmsprop_eps = 1.2345678e-9f;
  cfg.train.variant = Variant::S3_3C_s3;
  cfg.train.clip_c.reset();
  cfg.train.seed = 18446744073709551615ull;
  cfg.synth.noise_sigma = 0.1f;
  std::ostringstream out;
  write_config(out, cfg);
  const RunConfig back = parse(out.str());
  EXPECT_EQ(to_settings(back), to_settings(cfg));
  EXPECT_EQ(back.train.lr, cfg.train.lr);
  EXPECT_EQ(back.train.rmsprop_eps, cfg.train.rmsprop_eps);
  EXPECT_EQ(back.train.seed, cfg.train.seed);
}

TEST(Config, PrintDefaultsIsParseable) {
  std::ostringstream out;
  print_defaults(out);
  const std::string text = out.str();
  EXPECT_EQ(to_settings(parse(text)), to_settings(RunConfig{}));
  for (const ConfigKey& k : config_keys()) {
    EXPECT_NE(text.find("\n" + k.key + " = "), std::string::npos) << k.key;
  }
  EXPECT_NE(text.find("(full scale: 64)"), std::string::npos);
  EXPECT_NE(text.find("(full scale: 2e-05)"), std::string::npos);
}

TEST(Config, EveryKeyDocumented) {
  const auto settings = to_settings(RunConfig{});
  EXPECT_EQ(settings.size(), config_keys().size());
  for (const ConfigKey& k : config_keys()) {
    EXPECT_FALSE(k.doc.empty()) << k.key;
    EXPECT_EQ(settings.count(k.key), 1u) << k.key;
  }
}

}  // namespace
}  // namespace segan
