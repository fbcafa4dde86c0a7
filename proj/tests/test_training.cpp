#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "segan/config.hpp"
#include "segan/training.hpp"

namespace segan {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("segan_training_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

SynthSpec tiny_synth() {
  SynthSpec s;
  s.size = 24;
  s.depth = 2;
  s.min_radius = 5;
  s.max_radius = 8;
  s.center_jitter = 2;
  s.train_volumes = 3;
  s.val_volumes = 1;
  s.test_volumes = 1;
  return s;
}

TrainConfig tiny_config(Variant v = Variant::S3_3C) {
  TrainConfig c;
  c.variant = v;
  c.batch_size = 2;
  c.base_feature_maps = 4;
  c.segmentor_blocks = 2;
  c.critic_blocks = 2;
  c.crop = 16;
  c.volume_crop = std::array<std::size_t, 3>{20, 20, 2};
  c.max_iters = 4;
  c.eval_every = 2;
  return c;
}

const DatasetHandle& tiny_data() {
  static const DatasetHandle handle = gen_synthetic(tiny_synth(), temp_dir("data"));
  return handle;
}

Batch tiny_batch(const TrainConfig& cfg, std::uint64_t seed = 3) {
  DatasetHandle h = tiny_data();
  h.volume_crop = cfg.volume_crop;
  std::mt19937_64 rng(seed);
  return SliceDataset::load(h, Split::train).sample(cfg.batch_size, cfg.crop, rng);
}

std::vector<std::vector<float>> snapshot(std::vector<NetParams<float>>& nets) {
  std::vector<std::vector<float>> out;
  for (auto& n : nets) {
    for (auto& t : n.named_tensors()) out.emplace_back(t.tensor->data().begin(), t.tensor->data().end());
  }
  return out;
}

bool bitwise_equal(const std::vector<std::vector<float>>& a, const std::vector<std::vector<float>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != b[i].size()) return false;
    if (std::memcmp(a[i].data(), b[i].data(), a[i].size() * sizeof(float)) != 0) return false;
  }
  return true;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Variants, Assembly) {
  TrainConfig cfg = tiny_config();
  Nets s33 = assemble_variant(cfg, 1);
  EXPECT_EQ(s33.segmentors.size(), 1u);
  EXPECT_EQ(s33.segmentors[0].spec.out_channels, 3);
  ASSERT_EQ(s33.critics.size(), 3u);
  for (auto& c : s33.critics) EXPECT_EQ(c.spec.in_channels, 3);

  cfg.variant = Variant::S3_1C;
  Nets s31 = assemble_variant(cfg, 1);
  ASSERT_EQ(s31.critics.size(), 1u);
  EXPECT_EQ(s31.critics[0].spec.in_channels, 9);

  cfg.variant = Variant::S1_1C;
  Nets s11 = assemble_variant(cfg, 1);
  ASSERT_EQ(s11.segmentors.size(), 3u);
  EXPECT_EQ(s11.critics.size(), 3u);
  for (auto& s : s11.segmentors) EXPECT_EQ(s.spec.out_channels, 1);

  cfg.variant = Variant::UNET_BASELINE;
  Nets base = assemble_variant(cfg, 1);
  EXPECT_EQ(base.segmentors.size(), 1u);
  EXPECT_TRUE(base.critics.empty());
  EXPECT_EQ(base.max_abs_critic_weight(), 0.0f);

  cfg.variant = Variant::S3_3C_s0;
  EXPECT_EQ(assemble_variant(cfg, 1).loss.scales,
            LossConfig::for_variant(LossVariant::s0, cfg.critic_blocks).scales);
  cfg.variant = Variant::S3_3C_s3;
  EXPECT_EQ(assemble_variant(cfg, 1).loss.scales,
            LossConfig::for_variant(LossVariant::s3, cfg.critic_blocks).scales);
}

TEST(Variants, NamesRoundTrip) {
  for (Variant v : kAllVariants) EXPECT_EQ(parse_variant(to_string(v)), v);
  EXPECT_THROW(parse_variant("S2_2C"), ConfigError);
}

TEST(Steps, CriticStepLeavesSegmentorUntouched) {
  for (Variant v : {Variant::S3_3C, Variant::S1_1C, Variant::S3_1C}) {
    TrainConfig cfg = tiny_config(v);
    Nets nets = assemble_variant(cfg, 2);
    const Batch batch = tiny_batch(cfg);
    const auto s_before = snapshot(nets.segmentors);
    const auto c_before = snapshot(nets.critics);
    ASSERT_TRUE(critic_step(batch, nets, cfg).has_value());
    EXPECT_TRUE(bitwise_equal(s_before, snapshot(nets.segmentors))) << to_string(v);
    EXPECT_FALSE(bitwise_equal(c_before, snapshot(nets.critics))) << to_string(v);
  }
}

TEST(Steps, SegmentorStepLeavesCriticUntouched) {
  for (Variant v : {Variant::S3_3C, Variant::S1_1C, Variant::S3_1C}) {
    TrainConfig cfg = tiny_config(v);
    Nets nets = assemble_variant(cfg, 2);
    const Batch batch = tiny_batch(cfg);
    const auto s_before = snapshot(nets.segmentors);
    const auto c_before = snapshot(nets.critics);
    segmentor_step(batch, nets, cfg);
    EXPECT_TRUE(bitwise_equal(c_before, snapshot(nets.critics))) << to_string(v);
    EXPECT_FALSE(bitwise_equal(s_before, snapshot(nets.segmentors))) << to_string(v);
  }
}

TEST(Steps, FusedStepMatchesSeparateSteps) {
  for (Variant v : kAllVariants) {
    TrainConfig cfg = tiny_config(v);
    Nets fused = assemble_variant(cfg, 8);
    Nets separate = assemble_variant(cfg, 8);
    for (int i = 0; i < 3; ++i) {
      const Batch batch = tiny_batch(cfg, 20 + i);
      const StepLosses a = train_step(batch, fused, cfg);
      const std::optional<float> lc = critic_step(batch, separate, cfg);
      const float ls = segmentor_step(batch, separate, cfg);
      EXPECT_EQ(a.loss_c, lc) << to_string(v);
      EXPECT_EQ(a.loss_s, ls) << to_string(v);
    }
    EXPECT_TRUE(bitwise_equal(snapshot(fused.segmentors), snapshot(separate.segmentors))) << to_string(v);
    EXPECT_TRUE(bitwise_equal(snapshot(fused.critics), snapshot(separate.critics))) << to_string(v);
  }
}

TEST(Steps, BaselineHasNoCriticStep) {
  TrainConfig cfg = tiny_config(Variant::UNET_BASELINE);
  Nets nets = assemble_variant(cfg, 2);
  const auto before = snapshot(nets.segmentors);
  EXPECT_FALSE(critic_step(tiny_batch(cfg), nets, cfg).has_value());
  EXPECT_TRUE(bitwise_equal(before, snapshot(nets.segmentors)));
}

TEST(Steps, ClipHoldsAfterEveryCriticUpdate) {
  TrainConfig cfg = tiny_config();
  cfg.lr = 0.05f;  // large steps push many weights past the bound
  cfg.clip_c = 0.01f;
  Nets nets = assemble_variant(cfg, 4);
  for (int i = 0; i < 10; ++i) {
    critic_step(tiny_batch(cfg, 10 + i), nets, cfg);
    for (Tensor<float>* p : nets.critic_parameters()) {
      for (float v : p->data()) ASSERT_LE(std::abs(v), 0.01f);
    }
    EXPECT_EQ(nets.max_abs_critic_weight(), 0.01f);
    segmentor_step(tiny_batch(cfg, 10 + i), nets, cfg);
  }
}

TEST(Steps, SharedObjective) {
  for (Variant v : kAllVariants) {
    TrainConfig cfg = tiny_config(v);
    Nets nets = assemble_variant(cfg, 5);
    const Batch batch = tiny_batch(cfg);
    Graph<float> gc, gs;
    const float lc = variant_loss(gc, nets, batch, Player::critic).value().item();
    const float ls = variant_loss(gs, nets, batch, Player::segmentor).value().item();
    EXPECT_EQ(lc, ls) << to_string(v);
  }
}

// On a fixed batch, small RMSProp steps move the objective the player's way.
TEST(Steps, CriticAscendsSegmentorDescends) {
  TrainConfig cfg = tiny_config();
  cfg.clip_c.reset();
  cfg.lr = 1e-4f;
  Nets nets = assemble_variant(cfg, 6);
  const Batch batch = tiny_batch(cfg);
  std::vector<float> up;
  for (int i = 0; i < 6; ++i) up.push_back(*critic_step(batch, nets, cfg));
  for (std::size_t i = 1; i < up.size(); ++i) EXPECT_GE(up[i], up[i - 1] - 1e-6f) << i;
  EXPECT_GT(up.back(), up.front());

  std::vector<float> down;
  for (int i = 0; i < 6; ++i) down.push_back(segmentor_step(batch, nets, cfg));
  for (std::size_t i = 1; i < down.size(); ++i) EXPECT_LE(down[i], down[i - 1] + 1e-6f) << i;
  EXPECT_LT(down.back(), down.front());
}

TEST(Steps, NonFiniteLossThrows) {
  TrainConfig cfg = tiny_config();
  Nets nets = assemble_variant(cfg, 7);
  nets.segmentors[0].parameters()[0]->data()[0] = std::numeric_limits<float>::quiet_NaN();
  const Batch batch = tiny_batch(cfg);
  EXPECT_THROW(critic_step(batch, nets, cfg), NumericError);
  EXPECT_THROW(segmentor_step(batch, nets, cfg), NumericError);
}

TEST(Train, ZeroIterationsWritesFinalCheckpoint) {
  TrainConfig cfg = tiny_config();
  cfg.max_iters = 0;
  const fs::path dir = temp_dir("zero");
  TrainResult r = train(cfg, tiny_data(), dir);
  EXPECT_TRUE(r.history.records.empty());
  EXPECT_TRUE(fs::exists(dir / "final.ckpt"));
  EXPECT_FALSE(fs::exists(dir / "best.ckpt"));
  EXPECT_EQ(read_file(dir / "history.csv"),
            "iter,loss_s,loss_c,dice_c0,dice_c1,dice_c2,max_abs_critic_w,ms_elapsed\n");
}

TEST(Train, HistoryLayout) {
  TrainConfig cfg = tiny_config();
  std::vector<std::size_t> seen;
  TrainResult r = train(cfg, tiny_data(), std::nullopt,
                        [&](const HistoryRecord& rec) { seen.push_back(rec.iter); });
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3, 4}));
  ASSERT_EQ(r.history.records.size(), 4u);
  for (const auto& rec : r.history.records) {
    EXPECT_TRUE(rec.loss_c.has_value());
    EXPECT_LE(*rec.max_abs_critic_w, 0.01);
    EXPECT_EQ(rec.dice.size(), rec.iter % 2 == 0 ? 3u : 0u);
    EXPECT_EQ(rec.ms_elapsed, 0.0);
  }
  EXPECT_GE(r.best_mean_dice, 0.0);
  EXPECT_TRUE(r.best_iter == 2 || r.best_iter == 4);

  std::ostringstream csv;
  r.history.write_csv(csv);
  std::istringstream lines(csv.str());
  std::string header, first;
  std::getline(lines, header);
  std::getline(lines, first);
  EXPECT_EQ(std::count(first.begin(), first.end(), ','), 7);
  EXPECT_EQ(first.rfind("1,", 0), 0u);
  EXPECT_NE(first.find(",,,,"), std::string::npos);  // no dice on iteration 1
}

TEST(Train, BaselineHistoryHasEmptyCriticFields) {
  TrainConfig cfg = tiny_config(Variant::UNET_BASELINE);
  cfg.max_iters = 1;
  TrainResult r = train(cfg, tiny_data());
  std::ostringstream csv;
  r.history.write_csv(csv);
  std::istringstream lines(csv.str());
  std::string row, field;
  std::getline(lines, row);
  std::getline(lines, row);
  std::vector<std::string> fields;
  std::istringstream cells(row);
  while (std::getline(cells, field, ',')) fields.push_back(field);
  if (row.back() == ',') fields.emplace_back();
  ASSERT_EQ(fields.size(), 8u);
  EXPECT_EQ(fields[2], "");  // loss_c
  EXPECT_EQ(fields[6], "");  // max_abs_critic_w
  EXPECT_NE(fields[3], "");  // validated on the last iteration
}

TEST(Train, Deterministic) {
  TrainConfig cfg = tiny_config();
  const fs::path a = temp_dir("det_a"), b = temp_dir("det_b"), c = temp_dir("det_c");
  train(cfg, tiny_data(), a);
  train(cfg, tiny_data(), b);
  EXPECT_EQ(read_file(a / "history.csv"), read_file(b / "history.csv"));
  EXPECT_EQ(read_file(a / "final.ckpt"), read_file(b / "final.ckpt"));
  cfg.seed = 2;
  train(cfg, tiny_data(), c);
  EXPECT_NE(read_file(a / "history.csv"), read_file(c / "history.csv"));
}

TEST(Train, AbortsOnNonFiniteLoss) {
  SynthSpec spec = tiny_synth();
  const fs::path data_dir = temp_dir("nan_data");
  DatasetHandle h = gen_synthetic(spec, data_dir);
  for (const auto& e : h.entries) {
    if (e.split != Split::train) continue;
    Volume v = load_volume(e.image);
    v.f32()[v.index(0, v.height() / 2, v.width() / 2, 0)] = std::numeric_limits<float>::quiet_NaN();
    save_volume(v, e.image);
  }
  const fs::path out = temp_dir("nan_out");
  try {
    train(tiny_config(), h, out);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("iter=1 "), std::string::npos) << e.what();
  }
  EXPECT_EQ(read_file(out / "history.csv"),
            "iter,loss_s,loss_c,dice_c0,dice_c1,dice_c2,max_abs_critic_w,ms_elapsed\n");
}

TEST(Train, RejectsMismatchedDataset) {
  TrainConfig cfg = tiny_config();
  cfg.classes = 2;
  EXPECT_THROW(train(cfg, tiny_data()), DataError);
}

TEST(Config, ValidateRejectsBadValues) {
  TrainConfig cfg = tiny_config();
  cfg.crop = 18;  // not divisible by 2^segmentor_blocks
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny_config();
  cfg.clip_c = -1.0f;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TrainHistory history_of(const std::vector<double>& losses) {
  TrainHistory h;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    HistoryRecord r;
    r.iter = i + 1;
    r.loss_s = losses[i];
    r.max_abs_critic_w = 0.01;
    h.append(r);
  }
  return h;
}

TEST(Boundedness, ConstantHistoryPasses) {
  const BoundednessReport r = boundedness_diagnostic(history_of(std::vector<double>(50, 0.2)), 10, 5);
  EXPECT_DOUBLE_EQ(r.early_max, 0.2);
  EXPECT_DOUBLE_EQ(r.trailing_max, 0.2);
  EXPECT_DOUBLE_EQ(r.worst_later_max, 0.2);
  EXPECT_NEAR(r.slope, 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(r.max_abs_critic_w, 0.01);
  EXPECT_FALSE(r.flagged);
}

TEST(Boundedness, GrowingHistoryFlagged) {
  std::vector<double> losses;
  for (int i = 0; i < 50; ++i) losses.push_back(0.1 * std::exp(0.05 * i));
  const BoundednessReport r = boundedness_diagnostic(history_of(losses), 10);
  EXPECT_TRUE(r.flagged);
  EXPECT_GT(r.slope, 0.0);
}

TEST(Boundedness, DecayingHistoryPasses) {
  std::vector<double> losses;
  for (int i = 0; i < 50; ++i) losses.push_back(1.0 / (1 + i));
  const BoundednessReport r = boundedness_diagnostic(history_of(losses), 10);
  EXPECT_FALSE(r.flagged);
  EXPECT_LT(r.slope, 0.0);
  EXPECT_DOUBLE_EQ(r.early_max, 1.0);
}

TEST(Boundedness, SingleSpikeFlagged) {
  std::vector<double> losses(50, 0.2);
  losses[30] = 0.3;
  EXPECT_TRUE(boundedness_diagnostic(history_of(losses), 10).flagged);
}

TEST(Boundedness, NeedsEnoughRecords) {
  EXPECT_THROW(boundedness_diagnostic(history_of({1, 2, 3}), 3, 1), Error);
  EXPECT_THROW(boundedness_diagnostic(history_of({1, 2, 3}), 0), Error);
}

TEST(History, RejectsNonIncreasingIterations) {
  TrainHistory h;
  HistoryRecord r;
  r.iter = 3;
  h.append(r);
  EXPECT_THROW(h.append(r), Error);
}

std::vector<std::pair<Tensor<float>, Tensor<float>>> probes(std::size_t channels, std::size_t n) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> u(-1, 1);
  std::vector<std::pair<Tensor<float>, Tensor<float>>> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> a(channels * 64), b(channels * 64);
    for (float& v : a) v = u(rng);
    for (float& v : b) v = u(rng);
    out.emplace_back(Tensor<float>({1, channels, 8, 8}, std::move(a)),
                     Tensor<float>({1, channels, 8, 8}, std::move(b)));
  }
  return out;
}

TEST(Lipschitz, ZeroWeightsGiveZero) {
  NetSpec spec = NetSpec::critic(3, 4);
  spec.down_blocks = 2;
  NetParams<float> net = build_critic<float>(spec, 1);
  for (Tensor<float>* p : net.parameters()) {
    if (p == &net.down[0].conv.weights || p == &net.down[1].conv.weights) {
      for (float& v : p->data()) v = 0;
    }
  }
  EXPECT_EQ(empirical_lipschitz(net, probes(3, 4)), 0.0);
}

TEST(Lipschitz, ScalesWithWeights) {
  NetSpec spec = NetSpec::critic(3, 4);
  spec.down_blocks = 1;
  NetParams<float> net = build_critic<float>(spec, 2);
  const auto p = probes(3, 5);
  const double base = empirical_lipschitz(net, p);
  EXPECT_GT(base, 0.0);
  for (float& v : net.down[0].conv.weights.data()) v *= 2;
  EXPECT_NEAR(empirical_lipschitz(net, p), 2 * base, 1e-5 * base);
}

TEST(Lipschitz, IdenticalProbesSkipped) {
  NetSpec spec = NetSpec::critic(3, 4);
  spec.down_blocks = 1;
  NetParams<float> net = build_critic<float>(spec, 2);
  const auto p = probes(3, 1);
  EXPECT_EQ(empirical_lipschitz(net, {{p[0].first, p[0].first}}), 0.0);
}

TEST(Lipschitz, ClippedCriticBounded) {
  // With |θ| <= c every conv is c * (fan-in)-Lipschitz in l1 per output; the
  // estimate must stay under the product bound across layers.
  NetSpec spec = NetSpec::critic(3, 4);
  spec.down_blocks = 2;
  NetParams<float> net = build_critic<float>(spec, 3);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(-1, 1);
  auto params = net.parameters();
  for (Tensor<float>* p : params) {
    for (float& v : p->data()) v = u(rng);
  }
  clip_weights<float>(params, 0.01f);
  EXPECT_LT(empirical_lipschitz(net, probes(3, 6)), 100.0);
}

TEST(Checkpoint, RoundTrip) {
  for (Variant v : {Variant::S3_3C, Variant::S1_1C, Variant::UNET_BASELINE}) {
    TrainConfig cfg = tiny_config(v);
    cfg.max_iters = 2;
    cfg.lr = 3e-4f;
    const fs::path dir = temp_dir("ckpt_" + to_string(v));
    TrainResult r = train(cfg, tiny_data(), dir);
    Checkpoint ck = load_checkpoint(dir / "final.ckpt");
    EXPECT_EQ(to_settings({ck.config, {}}), to_settings({cfg, {}}));
    EXPECT_TRUE(bitwise_equal(snapshot(ck.nets.segmentors), snapshot(r.nets.segmentors)));
    EXPECT_TRUE(bitwise_equal(snapshot(ck.nets.critics), snapshot(r.nets.critics)));
    EXPECT_TRUE(fs::exists(dir / "final.ckpt.manifest"));

    const Batch batch = tiny_batch(cfg);
    EXPECT_EQ(predict_probs(ck.nets, batch.images), predict_probs(r.nets, batch.images));
  }
}

TEST(Checkpoint, RejectsForeignFiles) {
  const fs::path dir = temp_dir("ckpt_bad");
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), DataError);
  EXPECT_THROW(load_checkpoint(tiny_data().entries[0].image), DataError);
}

TEST(Evaluate, CountsPoolEveryValidationSlice) {
  TrainConfig cfg = tiny_config();
  DatasetHandle h = tiny_data();
  h.volume_crop = cfg.volume_crop;
  const SliceDataset val = SliceDataset::load(h, Split::val);
  Nets nets = assemble_variant(cfg, 1);
  const MetricsReport r = evaluate_split(nets, val, cfg.crop, cfg.threshold);
  ASSERT_EQ(r.classes.size(), 3u);
  Counts truth_total;
  for (std::size_t i = 0; i < val.size(); ++i) {
    const Batch b = val.centered(i, 1, cfg.crop);
    const auto t = threshold(b.labels.data(), 0.5f);
    truth_total += count(t, t);
  }
  std::size_t t_sum = 0;
  for (const auto& c : r.classes) t_sum += c.counts.t;
  EXPECT_EQ(t_sum, truth_total.t);
}

TEST(Predict, VolumeShapeAndPadding) {
  TrainConfig cfg = tiny_config();
  Nets nets = assemble_variant(cfg, 1);
  Volume image = synth_pair(tiny_synth(), 0).first;
  const Volume labels = predict_volume(nets, image, 0.5f);
  EXPECT_EQ(labels.dtype(), DType::u8);
  EXPECT_EQ(labels.channels(), 3u);
  EXPECT_EQ(labels.height(), image.height());
  EXPECT_EQ(labels.width(), image.width());
  EXPECT_EQ(labels.depth(), image.depth());
  for (std::uint8_t v : labels.u8()) EXPECT_LE(v, 1);
  EXPECT_EQ(labels.meta.at("kind"), "label");
}

}  // namespace
}  // namespace segan
