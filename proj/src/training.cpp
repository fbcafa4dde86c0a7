#include "segan/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>

#include "segan/config.hpp"

namespace segan {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::S1_1C:
      return "S1_1C";
    case Variant::S3_1C:
      return "S3_1C";
    case Variant::S3_3C:
      return "S3_3C";
    case Variant::S3_3C_s0:
      return "S3_3C_s0";
    case Variant::S3_3C_s3:
      return "S3_3C_s3";
    case Variant::UNET_BASELINE:
      return "UNET_BASELINE";
  }
  return "?";
}

Variant parse_variant(const std::string& text) {
  for (Variant v : kAllVariants) {
    if (to_string(v) == text) return v;
  }
  throw ConfigError("unknown variant '" + text + "'");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("train config: " + what); };
  if (classes < 1) fail("classes must be >= 1");
  if (image_channels < 1) fail("image_channels must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(lr > 0)) fail("lr must be > 0");
  if (!(rmsprop_decay >= 0 && rmsprop_decay < 1)) fail("rmsprop_decay must lie in [0, 1)");
  if (!(rmsprop_eps >= 0)) fail("rmsprop_eps must be >= 0");
  if (clip_c && !(*clip_c > 0)) fail("clip_c must be > 0 or off");
  if (base_feature_maps < 1) fail("base_feature_maps must be >= 1");
  if (segmentor_blocks < 1 || segmentor_blocks > 8) fail("segmentor_blocks must lie in 1..8");
  if (critic_blocks < 1 || critic_blocks > 8) fail("critic_blocks must lie in 1..8");
  const std::size_t factor = std::size_t{1} << std::max(segmentor_blocks, critic_blocks);
  if (crop == 0 || crop % factor != 0) {
    fail("crop must be a positive multiple of " + std::to_string(factor));
  }
  if (volume_crop && ((*volume_crop)[0] < crop || (*volume_crop)[1] < crop || (*volume_crop)[2] < 1)) {
    fail("volume_crop must cover the training crop");
  }
  if (!(threshold > 0 && threshold < 1)) fail("threshold must lie in (0, 1)");
}

LossConfig TrainConfig::loss_config() const {
  switch (variant) {
    case Variant::S3_3C_s0:
      return LossConfig::for_variant(LossVariant::s0, critic_blocks);
    case Variant::S3_3C_s3:
      return LossConfig::for_variant(LossVariant::s3, critic_blocks);
    case Variant::UNET_BASELINE:
      return LossConfig::for_variant(LossVariant::pixelwise_baseline, critic_blocks);
    default:
      return LossConfig::for_variant(LossVariant::multiscale, critic_blocks, include_input_scale);
  }
}

namespace {

std::vector<Tensor<float>*> collect(std::vector<NetParams<float>>& nets) {
  std::vector<Tensor<float>*> out;
  for (auto& n : nets) {
    auto p = n.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

}  // namespace

std::vector<Tensor<float>*> Nets::segmentor_parameters() { return collect(segmentors); }
std::vector<Tensor<float>*> Nets::critic_parameters() { return collect(critics); }

float Nets::max_abs_critic_weight() {
  auto params = critic_parameters();
  return params.empty() ? 0.0f : max_abs<float>(params);
}

Nets assemble_variant(const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Nets nets;
  nets.variant = cfg.variant;
  nets.loss = cfg.loss_config();
  std::mt19937_64 rng(seed);

  auto segmentor = [&](int classes) {
    NetSpec spec = NetSpec::segmentor(cfg.image_channels, classes, cfg.base_feature_maps);
    spec.down_blocks = spec.up_blocks = cfg.segmentor_blocks;
    nets.segmentors.push_back(build_segmentor<float>(spec, rng()));
  };
  auto critic = [&](int in_channels) {
    NetSpec spec = NetSpec::critic(in_channels, cfg.base_feature_maps);
    spec.down_blocks = cfg.critic_blocks;
    nets.critics.push_back(build_critic<float>(spec, rng()));
  };

  switch (cfg.variant) {
    case Variant::S1_1C:
      for (int k = 0; k < cfg.classes; ++k) {
        segmentor(1);
        critic(cfg.image_channels);
      }
      break;
    case Variant::S3_1C:
      segmentor(cfg.classes);
      critic(cfg.classes * cfg.image_channels);
      break;
    case Variant::S3_3C:
    case Variant::S3_3C_s0:
    case Variant::S3_3C_s3:
      segmentor(cfg.classes);
      for (int k = 0; k < cfg.classes; ++k) critic(cfg.image_channels);
      break;
    case Variant::UNET_BASELINE:
      segmentor(cfg.classes);
      break;
  }
  OptimState<float> opt;
  opt.learning_rate = cfg.lr;
  opt.decay = cfg.rmsprop_decay;
  opt.eps = cfg.rmsprop_eps;
  nets.segmentor_opt.assign(nets.segmentors.size(), opt);
  nets.critic_opt.assign(nets.critics.size(), opt);
  return nets;
}

namespace {

ForwardOptions player_options(bool is_player) {
  ForwardOptions opts;
  opts.trainable = is_player;
  opts.update_running_stats = is_player;
  return opts;
}

// Segmentor outputs, one per segmentor ([N, classes, H, W], or [N, 1, H, W] for S1_1C).
std::vector<Var<float>> segment(Nets& nets, Var<float> x, const ForwardOptions& opts) {
  std::vector<Var<float>> preds;
  for (auto& s : nets.segmentors) preds.push_back(segmentor_forward(s, x, opts));
  return preds;
}

// The variant objective given the segmentor outputs.
Var<float> objective(Nets& nets, Var<float> x, Var<float> y, const std::vector<Var<float>>& preds,
                     const ForwardOptions& c_opts) {
  const std::size_t classes = y.shape()[1];
  auto gt = [&](std::size_t k) { return slice_channels(y, k, 1); };

  switch (nets.variant) {
    case Variant::UNET_BASELINE:
      return pixelwise_baseline_loss(preds[0], y);
    case Variant::S1_1C: {
      if (preds.size() != classes) throw ShapeError("S1_1C: one segmentor per class expected");
      std::vector<Var<float>> losses;
      for (std::size_t k = 0; k < classes; ++k) {
        losses.push_back(multiscale_l1(nets.critics[k], x, preds[k], gt(k), nets.loss, c_opts));
      }
      return average_multi_critic_loss(losses);
    }
    case Variant::S3_1C: {
      std::vector<Var<float>> masked_pred, masked_gt;
      for (std::size_t k = 0; k < classes; ++k) {
        masked_pred.push_back(mask_image(x, slice_channels(preds[0], k, 1)));
        masked_gt.push_back(mask_image(x, gt(k)));
      }
      return multiscale_l1_masked(nets.critics[0], concat_channels(masked_pred),
                                  concat_channels(masked_gt), nets.loss, c_opts);
    }
    default: {
      if (nets.critics.size() != classes) throw ShapeError("S3_3C: one critic per class expected");
      std::vector<Var<float>> losses;
      for (std::size_t k = 0; k < classes; ++k) {
        losses.push_back(
            multiscale_l1(nets.critics[k], x, slice_channels(preds[0], k, 1), gt(k), nets.loss, c_opts));
      }
      return average_multi_critic_loss(losses);
    }
  }
}

}  // namespace

Var<float> variant_loss(Graph<float>& g, Nets& nets, const Batch& batch, Player player) {
  const bool s_turn = player == Player::segmentor;
  Var<float> x = g.frozen(batch.images);
  Var<float> y = g.frozen(batch.labels);
  return objective(nets, x, y, segment(nets, x, player_options(s_turn)), player_options(!s_turn));
}

namespace {

float checked(float value, const char* term) {
  if (!std::isfinite(value)) {
    throw NumericError(std::string("non-finite ") + term + " (" + std::to_string(value) + ")");
  }
  return value;
}

}  // namespace

namespace {

void ascend_critics(Nets& nets, const TrainConfig& cfg) {
  for (std::size_t i = 0; i < nets.critics.size(); ++i) {
    auto params = nets.critics[i].parameters();
    rmsprop_step<float>(params, nets.critic_opt[i], Direction::ascend);
    if (cfg.clip_c) clip_weights<float>(params, *cfg.clip_c);
  }
}

void descend_segmentors(Nets& nets) {
  for (std::size_t i = 0; i < nets.segmentors.size(); ++i) {
    auto params = nets.segmentors[i].parameters();
    rmsprop_step<float>(params, nets.segmentor_opt[i], Direction::descend);
  }
}

}  // namespace

std::optional<float> critic_step(const Batch& batch, Nets& nets, const TrainConfig& cfg) {
  if (nets.critics.empty()) return std::nullopt;
  for (auto& c : nets.critics) c.zero_grad();
  Graph<float> g;
  Var<float> loss = variant_loss(g, nets, batch, Player::critic);
  const float value = checked(loss.value().item(), "loss_c");
  g.backward(loss);
  ascend_critics(nets, cfg);
  return value;
}

float segmentor_step(const Batch& batch, Nets& nets, const TrainConfig&) {
  for (auto& s : nets.segmentors) s.zero_grad();
  Graph<float> g;
  Var<float> loss = variant_loss(g, nets, batch, Player::segmentor);
  const float value = checked(loss.value().item(), "loss_s");
  g.backward(loss);
  descend_segmentors(nets);
  return value;
}

StepLosses train_step(const Batch& batch, Nets& nets, const TrainConfig& cfg) {
  // The critic update leaves θ_S alone, so one segmentor forward serves both
  // halves: its values feed the critic graph as constants and its graph is
  // reused for the segmentor update.
  Graph<float> gs;
  Var<float> x = gs.frozen(batch.images);
  Var<float> y = gs.frozen(batch.labels);
  const std::vector<Var<float>> preds = segment(nets, x, player_options(true));

  StepLosses out;
  if (!nets.critics.empty()) {
    for (auto& c : nets.critics) c.zero_grad();
    Graph<float> gc;
    std::vector<Var<float>> fixed;
    for (const auto& p : preds) fixed.push_back(gc.constant(p.value()));
    Var<float> loss_c =
        objective(nets, gc.frozen(batch.images), gc.frozen(batch.labels), fixed, player_options(true));
    out.loss_c = checked(loss_c.value().item(), "loss_c");
    gc.backward(loss_c);
    ascend_critics(nets, cfg);
  }

  for (auto& s : nets.segmentors) s.zero_grad();
  Var<float> loss_s = objective(nets, x, y, preds, player_options(false));
  out.loss_s = checked(loss_s.value().item(), "loss_s");
  gs.backward(loss_s);
  descend_segmentors(nets);
  return out;
}

namespace {

// Switches every batch norm of a net to eval mode and restores the previous
// modes on destruction.
class EvalModeGuard {
 public:
  explicit EvalModeGuard(NetParams<float>& net) {
    for (auto* blocks : {&net.down, &net.up}) {
      for (auto& b : *blocks) {
        if (!b.bn) continue;
        saved_.emplace_back(&*b.bn, b.bn->mode);
        b.bn->mode = BnMode::eval;
      }
    }
  }
  ~EvalModeGuard() {
    for (auto& [bn, mode] : saved_) bn->mode = mode;
  }
  EvalModeGuard(const EvalModeGuard&) = delete;
  EvalModeGuard& operator=(const EvalModeGuard&) = delete;

 private:
  std::vector<std::pair<BatchNormParams<float>*, BnMode>> saved_;
};

ForwardOptions inference_options() {
  ForwardOptions opts;
  opts.trainable = false;
  opts.update_running_stats = false;
  return opts;
}

}  // namespace

Tensor<float> predict_probs(Nets& nets, const Tensor<float>& images) {
  std::vector<Tensor<float>> outputs;
  for (auto& s : nets.segmentors) {
    EvalModeGuard guard(s);
    Graph<float> g;
    outputs.push_back(segmentor_forward(s, g.frozen(images), inference_options()).value());
  }
  if (outputs.size() == 1) return std::move(outputs[0]);
  Graph<float> g;
  std::vector<Var<float>> parts;
  for (auto& o : outputs) parts.push_back(g.constant(std::move(o)));
  return concat_channels(parts).value();
}

MetricsReport evaluate_split(Nets& nets, const SliceDataset& data, std::size_t crop, float t) {
  constexpr std::size_t kChunk = 16;
  std::vector<Counts> counts;
  for (std::size_t first = 0; first < data.size(); first += kChunk) {
    const std::size_t n = std::min(kChunk, data.size() - first);
    Batch batch = data.centered(first, n, crop);
    Tensor<float> probs = predict_probs(nets, batch.images);
    const std::size_t K = probs.dim(1), plane = probs.dim(2) * probs.dim(3);
    counts.resize(K);
    const std::vector<std::uint8_t> pred = threshold(probs.data(), t);
    const std::vector<std::uint8_t> truth = threshold(batch.labels.data(), 0.5f);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < K; ++k) {
        const std::size_t off = (i * K + k) * plane;
        counts[k] += count(std::span(pred).subspan(off, plane), std::span(truth).subspan(off, plane));
      }
    }
  }
  return MetricsReport::from_counts(counts);
}

// ---- history ----------------------------------------------------------------

void TrainHistory::append(HistoryRecord record) {
  if (!records.empty() && record.iter <= records.back().iter) {
    throw Error("history: iteration " + std::to_string(record.iter) + " does not follow " +
                std::to_string(records.back().iter));
  }
  records.push_back(std::move(record));
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

void TrainHistory::write_csv(std::ostream& out) const {
  out << "iter,loss_s,loss_c";
  for (int k = 0; k < classes; ++k) out << ",dice_c" << k;
  out << ",max_abs_critic_w,ms_elapsed\n";
  for (const HistoryRecord& r : records) {
    out << r.iter << ',' << fmt(r.loss_s) << ',' << (r.loss_c ? fmt(*r.loss_c) : "");
    for (int k = 0; k < classes; ++k) {
      out << ',';
      if (static_cast<std::size_t>(k) < r.dice.size()) out << fmt(r.dice[k]);
    }
    out << ',' << (r.max_abs_critic_w ? fmt(*r.max_abs_critic_w) : "") << ',' << fmt(r.ms_elapsed)
        << '\n';
  }
}

void TrainHistory::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_csv(out);
}

// ---- training loop ------------------------------------------------------------

TrainResult train(const TrainConfig& cfg, const DatasetHandle& data,
                  const std::optional<std::filesystem::path>& out_dir,
                  const std::function<void(const HistoryRecord&)>& on_record) {
  cfg.validate();
  DatasetHandle handle = data;
  handle.volume_crop = cfg.volume_crop;
  const SliceDataset train_set = SliceDataset::load(handle, Split::train);
  if (train_set.size() == 0) throw DataError("dataset has no training volumes");
  if (train_set.channels() != static_cast<std::size_t>(cfg.image_channels) ||
      train_set.classes() != static_cast<std::size_t>(cfg.classes)) {
    throw DataError("dataset has " + std::to_string(train_set.channels()) + " channels and " +
                    std::to_string(train_set.classes()) + " classes; config expects " +
                    std::to_string(cfg.image_channels) + " and " + std::to_string(cfg.classes));
  }
  const SliceDataset val_set = SliceDataset::load(handle, Split::val);
  const bool validate = cfg.eval_every > 0 && val_set.size() > 0;

  std::mt19937_64 master(cfg.seed);
  const std::uint64_t init_seed = master();
  std::mt19937_64 batch_rng(master());

  TrainResult result;
  result.nets = assemble_variant(cfg, init_seed);
  result.history.classes = cfg.classes;
  if (out_dir) std::filesystem::create_directories(*out_dir);
  auto save_history = [&] {
    if (out_dir) result.history.save(*out_dir / "history.csv");
  };

  const auto start = std::chrono::steady_clock::now();
  for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
    const Batch batch = train_set.sample(cfg.batch_size, cfg.crop, batch_rng);
    HistoryRecord rec;
    rec.iter = it;
    try {
      const StepLosses losses = train_step(batch, result.nets, cfg);
      rec.loss_c = losses.loss_c;
      rec.loss_s = losses.loss_s;
    } catch (const NumericError& e) {
      save_history();
      throw NumericError("iter=" + std::to_string(it) + " " + e.what());
    }
    if (!result.nets.critics.empty()) rec.max_abs_critic_w = result.nets.max_abs_critic_weight();

    if (validate && (it % cfg.eval_every == 0 || it == cfg.max_iters)) {
      MetricsReport report = evaluate_split(result.nets, val_set, cfg.crop, cfg.threshold);
      for (const auto& c : report.classes) rec.dice.push_back(c.dice);
      if (report.mean_dice() > result.best_mean_dice) {
        result.best_mean_dice = report.mean_dice();
        result.best_iter = it;
        result.best_report = report;
        if (out_dir) save_checkpoint(result.nets, cfg, *out_dir / "best.ckpt");
      }
    }
    if (cfg.record_wall_time) {
      rec.ms_elapsed =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    }
    result.history.append(std::move(rec));
    if (on_record) on_record(result.history.records.back());
  }
  save_history();
  if (out_dir) save_checkpoint(result.nets, cfg, *out_dir / "final.ckpt");
  return result;
}

// ---- diagnostics ------------------------------------------------------------

BoundednessReport boundedness_diagnostic(const TrainHistory& history, std::size_t window,
                                         std::size_t warmup) {
  const auto& r = history.records;
  if (window == 0 || r.size() < warmup + window) {
    throw Error("boundedness: need at least warmup + window = " + std::to_string(warmup + window) +
                " records, have " + std::to_string(r.size()));
  }
  BoundednessReport rep;
  for (std::size_t i = warmup; i < warmup + window; ++i) rep.early_max = std::max(rep.early_max, r[i].loss_s);
  for (std::size_t i = warmup + window; i < r.size(); ++i) {
    rep.worst_later_max = std::max(rep.worst_later_max, r[i].loss_s);
  }
  const std::size_t first = r.size() - window;
  double mx = 0, my = 0;
  for (std::size_t i = first; i < r.size(); ++i) {
    rep.trailing_max = std::max(rep.trailing_max, r[i].loss_s);
    mx += static_cast<double>(r[i].iter);
    my += r[i].loss_s;
  }
  mx /= static_cast<double>(window);
  my /= static_cast<double>(window);
  double sxy = 0, sxx = 0;
  for (std::size_t i = first; i < r.size(); ++i) {
    const double dx = static_cast<double>(r[i].iter) - mx;
    sxy += dx * (r[i].loss_s - my);
    sxx += dx * dx;
  }
  rep.slope = sxx > 0 ? sxy / sxx : 0.0;
  for (const auto& rec : r) {
    if (rec.max_abs_critic_w) rep.max_abs_critic_w = std::max(rep.max_abs_critic_w, *rec.max_abs_critic_w);
  }
  rep.flagged = rep.worst_later_max > 1.1 * rep.early_max;
  return rep;
}

double empirical_lipschitz(NetParams<float>& net,
                           const std::vector<std::pair<Tensor<float>, Tensor<float>>>& probes) {
  EvalModeGuard guard(net);
  auto response = [&](const Tensor<float>& x) {
    Graph<float> g;
    std::vector<float> out;
    if (net.spec.kind == NetKind::critic) {
      auto features = critic_features(net, g.frozen(x), inference_options());
      for (std::size_t i = 1; i < features.size(); ++i) {
        auto d = features[i].value().data();
        out.insert(out.end(), d.begin(), d.end());
      }
    } else {
      auto d = segmentor_forward(net, g.frozen(x), inference_options()).value().data();
      out.assign(d.begin(), d.end());
    }
    return out;
  };
  double best = 0;
  for (const auto& [a, b] : probes) {
    if (a.shape() != b.shape()) throw ShapeError("empirical_lipschitz: probe shapes differ");
    double din = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) din += std::abs(double(a[i]) - double(b[i]));
    if (din == 0) continue;
    const auto ga = response(a), gb = response(b);
    double dout = 0;
    for (std::size_t i = 0; i < ga.size(); ++i) dout += std::abs(double(ga[i]) - double(gb[i]));
    best = std::max(best, dout / din);
  }
  return best;
}

// ---- checkpoints ------------------------------------------------------------

namespace {

constexpr const char* kCheckpointKind = "segan-checkpoint";

std::vector<std::pair<std::string, NamedTensor<float>>> checkpoint_tensors(Nets& nets) {
  std::vector<std::pair<std::string, NamedTensor<float>>> out;
  for (std::size_t i = 0; i < nets.segmentors.size(); ++i) {
    for (auto& t : nets.segmentors[i].named_tensors()) out.emplace_back("s" + std::to_string(i) + "." + t.name, t);
  }
  for (std::size_t i = 0; i < nets.critics.size(); ++i) {
    for (auto& t : nets.critics[i].named_tensors()) out.emplace_back("c" + std::to_string(i) + "." + t.name, t);
  }
  return out;
}

std::string shape_text(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

}  // namespace

void save_checkpoint(Nets& nets, const TrainConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  std::map<std::string, std::string> meta;
  for (const auto& [key, value] : to_settings(RunConfig{cfg, SynthSpec{}})) {
    if (key.rfind("synth.", 0) != 0) meta[key] = value;
  }
  meta["kind"] = kCheckpointKind;
  meta["format"] = "1";
  SegvRecord header;
  header.dtype = DType::u8;
  header.dims = {1};
  header.u8 = {1};
  header.meta = encode_meta(meta);
  write_segv(out, header);

  std::ofstream manifest(path.string() + ".manifest");
  for (auto& [name, t] : checkpoint_tensors(nets)) {
    SegvRecord rec;
    rec.dtype = DType::f32;
    for (std::size_t d : t.tensor->shape()) rec.dims.push_back(static_cast<std::uint32_t>(d));
    rec.meta = encode_meta({{"name", name}, {"role", t.role}});
    rec.f32.assign(t.tensor->data().begin(), t.tensor->data().end());
    write_segv(out, rec);
    manifest << name << '\t' << shape_text(t.tensor->shape()) << '\t' << t.role << '\n';
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  SegvRecord header;
  if (!read_segv(in, header)) throw DataError(path.string() + ": empty checkpoint");
  auto meta = decode_meta(header.meta);
  if (meta["kind"] != kCheckpointKind) throw DataError(path.string() + ": not a checkpoint");
  RunConfig run;
  for (const auto& [key, value] : meta) {
    if (key == "kind" || key == "format") continue;
    apply_setting(run, key, value);
  }
  Checkpoint ckpt{run.train, assemble_variant(run.train, 0)};

  std::map<std::string, Tensor<float>*> slots;
  for (auto& [name, t] : checkpoint_tensors(ckpt.nets)) slots[name] = t.tensor;
  SegvRecord rec;
  while (read_segv(in, rec, static_cast<std::uint64_t>(in.tellg()))) {
    const std::string name = decode_meta(rec.meta)["name"];
    auto it = slots.find(name);
    if (it == slots.end()) throw DataError(path.string() + ": unexpected tensor '" + name + "'");
    Tensor<float>& dst = *it->second;
    Shape shape(rec.dims.begin(), rec.dims.end());
    if (rec.dtype != DType::f32 || shape != dst.shape()) {
      throw DataError(path.string() + ": tensor '" + name + "' has shape " + shape_text(shape) +
                      ", expected " + shape_text(dst.shape()));
    }
    std::copy(rec.f32.begin(), rec.f32.end(), dst.data().begin());
    slots.erase(it);
  }
  if (!slots.empty()) {
    throw DataError(path.string() + ": missing tensor '" + slots.begin()->first + "'");
  }
  return ckpt;
}

// ---- ablation ---------------------------------------------------------------

std::vector<AblationRow> run_ablation(const TrainConfig& base, const DatasetHandle& data,
                                      const std::vector<Variant>& variants,
                                      const std::vector<std::uint64_t>& seeds) {
  std::vector<AblationRow> rows;
  for (Variant v : variants) {
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.variant = v;
      cfg.seed = seed;
      TrainResult r = train(cfg, data);
      AblationRow row{v, seed, {}, 0.0};
      for (const auto& c : r.best_report.classes) row.dice.push_back(c.dice);
      row.mean_dice = r.best_report.mean_dice();
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows, int classes) {
  out << "variant,seed";
  for (int k = 0; k < classes; ++k) out << ",dice_c" << k;
  out << ",mean_dice\n";
  for (const auto& r : rows) {
    out << to_string(r.variant) << ',' << r.seed;
    for (double d : r.dice) out << ',' << fmt(d);
    out << ',' << fmt(r.mean_dice) << '\n';
  }
}

void print_ablation_table(std::ostream& out, const std::vector<AblationRow>& rows, int classes) {
  char line[256];
  std::snprintf(line, sizeof(line), "%-14s %5s", "variant", "seeds");
  out << line;
  for (int k = 0; k < classes; ++k) {
    std::snprintf(line, sizeof(line), " %8s", ("dice_c" + std::to_string(k)).c_str());
    out << line;
  }
  out << "     mean\n";
  std::vector<Variant> order;
  for (const auto& r : rows) {
    if (std::find(order.begin(), order.end(), r.variant) == order.end()) order.push_back(r.variant);
  }
  for (Variant v : order) {
    std::vector<double> sum(classes, 0.0);
    double mean = 0;
    int n = 0;
    for (const auto& r : rows) {
      if (r.variant != v) continue;
      for (int k = 0; k < classes && k < static_cast<int>(r.dice.size()); ++k) sum[k] += r.dice[k];
      mean += r.mean_dice;
      ++n;
    }
    std::snprintf(line, sizeof(line), "%-14s %5d", to_string(v).c_str(), n);
    out << line;
    for (double s : sum) {
      std::snprintf(line, sizeof(line), " %8.4f", s / n);
      out << line;
    }
    std::snprintf(line, sizeof(line), " %8.4f\n", mean / n);
    out << line;
  }
}

// ---- volume inference ---------------------------------------------------------

Volume predict_volume(Nets& nets, const Volume& image, float t) {
  image.validate();
  if (image.dtype() != DType::f32) throw DataError("predict: image volume must be f32");
  const NetSpec& spec = nets.segmentors.at(0).spec;
  if (image.channels() != static_cast<std::size_t>(spec.in_channels)) {
    throw DataError("predict: volume has " + std::to_string(image.channels()) +
                    " channels, checkpoint expects " + std::to_string(spec.in_channels));
  }
  const Volume norm = normalize_intensity(image);
  const std::size_t C = image.channels(), H = image.height(), W = image.width(), D = image.depth();
  const std::size_t factor = std::size_t{1} << spec.down_blocks;
  const std::size_t Hp = (H + factor - 1) / factor * factor, Wp = (W + factor - 1) / factor * factor;

  Volume out;
  constexpr std::size_t kChunk = 8;
  for (std::size_t first = 0; first < D; first += kChunk) {
    const std::size_t n = std::min(kChunk, D - first);
    Tensor<float> batch = Tensor<float>::zeros({n, C, Hp, Wp});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w < W; ++w) {
            batch.at(i, c, h, w) = norm.f32()[norm.index(c, h, w, first + i)];
          }
    const Tensor<float> probs = predict_probs(nets, batch);
    const std::size_t K = probs.dim(1);
    if (first == 0) out = Volume::zeros(DType::u8, {K, H, W, D});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w < W; ++w) {
            out.u8()[out.index(k, h, w, first + i)] = probs.at(i, k, h, w) >= t ? 1 : 0;
          }
  }
  out.meta = image.meta;
  out.meta["kind"] = "label";
  return out;
}

}  // namespace segan
