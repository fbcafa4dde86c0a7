#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "segan/dataset.hpp"
#include "segan/loss.hpp"
#include "segan/metrics.hpp"

namespace segan {

enum class Variant { S1_1C, S3_1C, S3_3C, S3_3C_s0, S3_3C_s3, UNET_BASELINE };

std::string to_string(Variant v);
Variant parse_variant(const std::string& text);
inline constexpr std::array<Variant, 6> kAllVariants{Variant::S1_1C,    Variant::S3_1C,
                                                      Variant::S3_3C,    Variant::S3_3C_s0,
                                                      Variant::S3_3C_s3, Variant::UNET_BASELINE};

/// Training hyperparameters. Defaults are desk scale; print_defaults lists the
/// full-scale values.
struct TrainConfig {
  Variant variant = Variant::S3_3C;
  int classes = 3;
  int image_channels = 3;
  std::size_t batch_size = 16;
  float lr = 2e-4f;
  float rmsprop_decay = 0.9f;
  float rmsprop_eps = 1e-8f;
  std::size_t max_iters = 2000;
  std::optional<float> clip_c = 0.01f;
  std::uint64_t seed = 1;
  int base_feature_maps = 16;
  int segmentor_blocks = 4;
  int critic_blocks = 3;
  /// Validation Dice every eval_every iterations (and after the last one); 0 disables.
  std::size_t eval_every = 100;
  /// Square training crop and validation centre crop.
  std::size_t crop = 64;
  /// Centred volume crop (H, W, D) applied before slicing; nullopt keeps full volumes.
  std::optional<std::array<std::size_t, 3>> volume_crop = std::array<std::size_t, 3>{72, 72, 8};
  /// Layer 0 (the masked input) joins the multi-scale set.
  bool include_input_scale = true;
  float threshold = 0.5f;
  /// Fill ms_elapsed in the history; off keeps histories bit-reproducible.
  bool record_wall_time = false;

  void validate() const;
  LossConfig loss_config() const;
};

/// The networks and optimizer states of one variant.
struct Nets {
  Variant variant = Variant::S3_3C;
  std::vector<NetParams<float>> segmentors;
  std::vector<NetParams<float>> critics;
  std::vector<OptimState<float>> segmentor_opt;
  std::vector<OptimState<float>> critic_opt;
  LossConfig loss;

  std::vector<Tensor<float>*> segmentor_parameters();
  std::vector<Tensor<float>*> critic_parameters();
  /// Largest |θ| over all critics; 0 without critics.
  float max_abs_critic_weight();
};

/// S1-1C: one single-class (S, C) pair per class. S3-1C: one S with `classes`
/// outputs and one C fed the class-ordered concatenation of masked images.
/// S3-3C and its s0/s3 ablations: one S and one C per class, losses averaged.
/// UNET_BASELINE: one S trained with the pixel-wise loss, no critic.
Nets assemble_variant(const TrainConfig& cfg, std::uint64_t seed);

enum class Player { segmentor, critic };

/// The variant objective on one batch. Only the player's parameters are
/// trainable leaves and only its batch-norm running statistics are updated.
Var<float> variant_loss(Graph<float>& g, Nets& nets, const Batch& batch, Player player);

/// Fixes S, ascends the objective for one RMSProp step on θ_C and clips θ_C.
/// Returns the loss before the update; nullopt for the baseline (no critic).
std::optional<float> critic_step(const Batch& batch, Nets& nets, const TrainConfig& cfg);

/// Fixes C and descends the same objective for one RMSProp step on θ_S.
/// Returns the loss before the update.
float segmentor_step(const Batch& batch, Nets& nets, const TrainConfig& cfg);

struct StepLosses {
  float loss_s = 0;
  std::optional<float> loss_c;  // nullopt for the baseline
};

/// One training iteration: critic_step then segmentor_step on the same batch,
/// sharing the segmentor forward pass. Bitwise identical to calling the two.
StepLosses train_step(const Batch& batch, Nets& nets, const TrainConfig& cfg);

/// Per-class probabilities [N, classes, H, W] with batch norm in eval mode.
Tensor<float> predict_probs(Nets& nets, const Tensor<float>& images);

/// Scores the centre-cropped slices of a split with counts pooled over the split.
MetricsReport evaluate_split(Nets& nets, const SliceDataset& data, std::size_t crop, float t);

struct HistoryRecord {
  std::size_t iter = 0;
  double loss_s = 0;
  std::optional<double> loss_c;
  std::vector<double> dice;  // empty unless validated at this iteration
  std::optional<double> max_abs_critic_w;
  double ms_elapsed = 0;
};

struct TrainHistory {
  int classes = 3;
  std::vector<HistoryRecord> records;

  /// Rejects non-increasing iteration numbers.
  void append(HistoryRecord record);
  /// Header `iter,loss_s,loss_c,dice_c0,...,max_abs_critic_w,ms_elapsed`.
  void write_csv(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
};

struct TrainResult {
  TrainHistory history;
  Nets nets;  // final state
  double best_mean_dice = -1;
  std::size_t best_iter = 0;
  MetricsReport best_report;  // validation report at best_iter
};

/// Alternates critic_step and segmentor_step for cfg.max_iters iterations.
/// With out_dir set, writes history.csv, best.ckpt and final.ckpt there.
/// A non-finite loss aborts with NumericError after the partial history is saved.
/// on_record sees every history record as it is appended.
TrainResult train(const TrainConfig& cfg, const DatasetHandle& data,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                  const std::function<void(const HistoryRecord&)>& on_record = {});

// ---- stability diagnostics --------------------------------------------------

struct BoundednessReport {
  double early_max = 0;     // max loss_s over [warmup, warmup + window)
  double trailing_max = 0;  // max loss_s over the last window
  double worst_later_max = 0;  // max loss_s after the early window
  double slope = 0;         // least-squares slope of loss_s over the last window
  double max_abs_critic_w = 0;
  bool flagged = false;     // worst_later_max > 1.1 * early_max
};

/// Empirical boundedness check on loss_s. Requires warmup + window records.
BoundednessReport boundedness_diagnostic(const TrainHistory& history, std::size_t window,
                                         std::size_t warmup = 0);

/// max over probe pairs of ||g(a) - g(b)||_1 / ||a - b||_1 with batch norm in
/// eval mode. g is the critic feature stack (layers 1..L) or the segmentor
/// output. Pairs at zero distance are skipped.
double empirical_lipschitz(NetParams<float>& net,
                           const std::vector<std::pair<Tensor<float>, Tensor<float>>>& probes);

// ---- checkpoints ------------------------------------------------------------

/// SEGV records: a header whose meta holds the training config, then one f32
/// record per tensor (meta `name=`, `role=`). A `<path>.manifest` sidecar lists
/// name, shape and role per line.
void save_checkpoint(Nets& nets, const TrainConfig& cfg, const std::filesystem::path& path);

struct Checkpoint {
  TrainConfig config;
  Nets nets;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

// ---- ablation ---------------------------------------------------------------

struct AblationRow {
  Variant variant;
  std::uint64_t seed;
  std::vector<double> dice;  // per class, best validation checkpoint
  double mean_dice;
};

std::vector<AblationRow> run_ablation(const TrainConfig& base, const DatasetHandle& data,
                                      const std::vector<Variant>& variants,
                                      const std::vector<std::uint64_t>& seeds);

/// Header `variant,seed,dice_c0,...,mean_dice`.
void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows, int classes);
/// Seed-averaged table, one row per variant.
void print_ablation_table(std::ostream& out, const std::vector<AblationRow>& rows, int classes);

// ---- inference on volumes ---------------------------------------------------

/// Normalizes a (C, H, W, D) image volume, segments every axial slice (zero
/// padding H and W up to the network's divisibility) and restacks thresholded
/// maps into a (classes, H, W, D) u8 label volume.
Volume predict_volume(Nets& nets, const Volume& image, float t);

}  // namespace segan
