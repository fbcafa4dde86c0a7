#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "segan/tensor.hpp"
#include "segan/volume.hpp"

namespace segan {

enum class Split { train, val, test };

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct ManifestEntry {
  std::filesystem::path image;
  std::filesystem::path label;
  Split split = Split::train;
};

/// One `image<TAB>label<TAB>split` line per entry; paths relative to the manifest's directory.
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// Where a dataset lives and how its volumes become training slices.
struct DatasetHandle {
  std::filesystem::path manifest;
  std::vector<ManifestEntry> entries;  // absolute paths
  /// Optional centred volume crop applied before slicing (H, W, D).
  std::optional<std::array<std::size_t, 3>> volume_crop;
  std::uint64_t seed = 0;

  static DatasetHandle open(const std::filesystem::path& dir_or_manifest);
};

/// Desk-scale stand-in for multi-modal tumour volumes: three jittered, nested
/// ellipsoidal regions (whole ⊇ core ⊇ enhanced) over a smooth background, with
/// per-region intensity offsets that differ per modality channel plus Gaussian noise.
struct SynthSpec {
  std::size_t size = 80;   // H = W
  std::size_t depth = 10;  // D
  int classes = 3;
  int channels = 3;
  /// offsets[k][c]: added to channel c inside region k.
  std::vector<std::vector<float>> offsets{
      {0.05f, 0.35f, 0.30f}, {0.10f, 0.15f, -0.10f}, {0.35f, 0.00f, -0.05f}};
  std::vector<float> background{0.35f, 0.40f, 0.30f};
  float noise_sigma = 0.05f;
  /// Whole-region radius range in pixels and child/parent radius ratio range.
  float min_radius = 11.0f;
  float max_radius = 18.0f;
  float min_ratio = 0.45f;
  float max_ratio = 0.7f;
  /// Maximum displacement of the region centre from the slice centre.
  float center_jitter = 6.0f;
  std::size_t train_volumes = 25;
  std::size_t val_volumes = 5;
  std::size_t test_volumes = 5;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Synthesizes one (image, label) volume pair; deterministic per (spec, index).
std::pair<Volume, Volume> synth_pair(const SynthSpec& spec, std::size_t index);

/// Writes image/label volumes and manifest.tsv under out_dir.
DatasetHandle gen_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir);

/// Mini-batch in network layout: images [N, C, H, W], labels [N, K, H, W] in {0,1}.
struct Batch {
  Tensor<float> images;
  Tensor<float> labels;
  std::size_t size() const { return images.dim(0); }
};

/// Normalized axial slices of one split, held in memory.
class SliceDataset {
 public:
  static SliceDataset load(const DatasetHandle& handle, Split split);

  std::size_t size() const { return images_.size(); }
  std::size_t channels() const;
  std::size_t classes() const;
  const Volume& image(std::size_t i) const { return images_.at(i); }
  const Volume& label(std::size_t i) const { return labels_.at(i); }

  /// batch_size slices drawn uniformly with replacement, each randomly cropped.
  Batch sample(std::size_t batch_size, std::size_t crop, std::mt19937_64& rng) const;
  /// Slices [first, first + count), centre-cropped.
  Batch centered(std::size_t first, std::size_t count, std::size_t crop) const;

 private:
  std::vector<Volume> images_;
  std::vector<Volume> labels_;
};

/// Stacks (C, H, W, 1) slices into an [N, C, H, W] tensor.
Tensor<float> slices_to_tensor(const std::vector<const Volume*>& slices);

}  // namespace segan
