#include "segan/dataset.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace segan {

std::string to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw DataError("unknown split '" + text + "'");
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest " + path.string());
  for (const auto& e : entries) {
    out << e.image.generic_string() << '\t' << e.label.generic_string() << '\t'
        << to_string(e.split) << '\n';
  }
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  for (int line_no = 1; std::getline(in, line); ++line_no) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string image, label, split;
    if (!std::getline(fields, image, '\t') || !std::getline(fields, label, '\t') ||
        !std::getline(fields, split)) {
      throw DataError(path.string() + ":" + std::to_string(line_no) +
                      ": expected image<TAB>label<TAB>split");
    }
    entries.push_back({image, label, parse_split(split)});
  }
  return entries;
}

DatasetHandle DatasetHandle::open(const std::filesystem::path& dir_or_manifest) {
  DatasetHandle h;
  h.manifest = std::filesystem::is_directory(dir_or_manifest) ? dir_or_manifest / "manifest.tsv"
                                                              : dir_or_manifest;
  const auto base = h.manifest.parent_path();
  for (ManifestEntry e : read_manifest(h.manifest)) {
    if (e.image.is_relative()) e.image = base / e.image;
    if (e.label.is_relative()) e.label = base / e.label;
    h.entries.push_back(std::move(e));
  }
  if (h.entries.empty()) throw DataError("manifest " + h.manifest.string() + " lists no volumes");
  return h;
}

void SynthSpec::validate() const {
  if (size < 8 || depth < 1) throw DataError("synth: size must be >= 8 and depth >= 1");
  if (classes < 1 || classes > static_cast<int>(offsets.size())) {
    throw DataError("synth: classes must be in 1.." + std::to_string(offsets.size()));
  }
  if (channels < 1 || background.size() != static_cast<std::size_t>(channels)) {
    throw DataError("synth: background needs one entry per channel");
  }
  for (const auto& row : offsets) {
    if (row.size() != static_cast<std::size_t>(channels)) {
      throw DataError("synth: offsets need one entry per channel");
    }
  }
  if (!(min_radius > 0 && max_radius >= min_radius)) throw DataError("synth: bad radius range");
  if (!(min_ratio > 0 && max_ratio < 1 && max_ratio >= min_ratio)) {
    throw DataError("synth: child/parent ratios must lie in (0, 1)");
  }
  if (noise_sigma < 0) throw DataError("synth: noise_sigma must be >= 0");
}

namespace {

struct Ellipse {
  double cy, cx, ry, rx, angle;

  bool contains(double y, double x, double scale) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (c * dx + s * dy) / (rx * scale);
    const double v = (-s * dx + c * dy) / (ry * scale);
    return u * u + v * v <= 1.0;
  }
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::pair<Volume, Volume> synth_pair(const SynthSpec& spec, std::size_t index) {
  spec.validate();
  std::mt19937_64 rng(mix_seed(spec.seed, index));
  auto uniform = [&rng](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  const double pi = std::numbers::pi;
  const double mid = (static_cast<double>(spec.size) - 1.0) / 2.0;
  const double jitter = spec.center_jitter;

  std::vector<Ellipse> regions;
  Ellipse whole{mid + uniform(-jitter, jitter), mid + uniform(-jitter, jitter),
                uniform(spec.min_radius, spec.max_radius), uniform(spec.min_radius, spec.max_radius),
                uniform(0, pi)};
  regions.push_back(whole);
  for (int k = 1; k < spec.classes; ++k) {
    const Ellipse& parent = regions.back();
    const double ratio = uniform(spec.min_ratio, spec.max_ratio);
    const double slack = (1.0 - ratio) * 0.5 * std::min(parent.ry, parent.rx);
    const double dir = uniform(0, 2 * pi), dist = uniform(0, slack);
    regions.push_back({parent.cy + dist * std::sin(dir), parent.cx + dist * std::cos(dir),
                       parent.ry * ratio * uniform(0.9, 1.1), parent.rx * ratio * uniform(0.9, 1.1),
                       uniform(0, pi)});
  }
  const double depth = static_cast<double>(spec.depth);
  const double zc = (depth - 1.0) / 2.0 + uniform(-1, 1);
  const double rz = depth * uniform(0.9, 1.3);

  // Bright spots outside the tumour that mimic the enhancing signal in the
  // first channel; only context distinguishes them from enhanced tissue.
  std::vector<Ellipse> distractors;
  const int n_distractors = static_cast<int>(uniform(0, 3));
  for (int i = 0; i < n_distractors; ++i) {
    const double r = uniform(2.0, 4.0);
    const double angle = uniform(0, 2 * pi);
    const double reach = std::max(whole.ry, whole.rx) + r + uniform(3.0, 10.0);
    distractors.push_back({whole.cy + reach * std::sin(angle), whole.cx + reach * std::cos(angle),
                           r, r * uniform(0.7, 1.3), uniform(0, pi)});
  }

  const std::size_t C = static_cast<std::size_t>(spec.channels);
  const std::size_t K = static_cast<std::size_t>(spec.classes);
  const std::size_t S = spec.size, D = spec.depth;
  Volume image = Volume::zeros(DType::f32, {C, S, S, D});
  Volume label = Volume::zeros(DType::u8, {K, S, S, D});
  std::normal_distribution<float> noise(0.0f, spec.noise_sigma);
  std::span<float> img = image.f32();
  std::span<std::uint8_t> lab = label.u8();
  std::vector<std::uint8_t> inside(K);
  for (std::size_t h = 0; h < S; ++h) {
    for (std::size_t w = 0; w < S; ++w) {
      for (std::size_t d = 0; d < D; ++d) {
        const double dz = (static_cast<double>(d) - zc) / rz;
        const double scale = std::sqrt(std::max(0.05, 1.0 - dz * dz));
        bool parent = true;
        for (std::size_t k = 0; k < K; ++k) {
          parent = parent && regions[k].contains(static_cast<double>(h), static_cast<double>(w), scale);
          inside[k] = parent ? 1 : 0;
          lab[label.index(k, h, w, d)] = inside[k];
        }
        bool spot = false;
        for (const Ellipse& e : distractors) {
          spot = spot || e.contains(static_cast<double>(h), static_cast<double>(w), scale);
        }
        for (std::size_t c = 0; c < C; ++c) {
          double v = spec.background[c];
          for (std::size_t k = 0; k < K; ++k) v += inside[k] * spec.offsets[k][c];
          if (spot && !inside[0]) v += spec.offsets.back()[c];
          img[image.index(c, h, w, d)] = static_cast<float>(v) + noise(rng);
        }
      }
    }
  }
  image.meta = {{"generator", "synthetic-nested"}, {"index", std::to_string(index)}, {"kind", "image"}};
  label.meta = {{"generator", "synthetic-nested"}, {"index", std::to_string(index)}, {"kind", "label"}};
  return {std::move(image), std::move(label)};
}

DatasetHandle gen_synthetic(const SynthSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir / "images");
  std::filesystem::create_directories(out_dir / "labels");
  std::vector<ManifestEntry> entries;
  std::size_t index = 0;
  for (auto [split, count] : {std::pair{Split::train, spec.train_volumes},
                              std::pair{Split::val, spec.val_volumes},
                              std::pair{Split::test, spec.test_volumes}}) {
    for (std::size_t i = 0; i < count; ++i, ++index) {
      auto [image, label] = synth_pair(spec, index);
      char name[64];
      std::snprintf(name, sizeof(name), "%s_%03zu.segv", to_string(split).c_str(), i);
      image.meta["split"] = to_string(split);
      label.meta["split"] = to_string(split);
      save_volume(image, out_dir / "images" / name);
      save_volume(label, out_dir / "labels" / name);
      entries.push_back({std::filesystem::path("images") / name,
                         std::filesystem::path("labels") / name, split});
    }
  }
  write_manifest(out_dir / "manifest.tsv", entries);
  return DatasetHandle::open(out_dir);
}

SliceDataset SliceDataset::load(const DatasetHandle& handle, Split split) {
  SliceDataset ds;
  for (const ManifestEntry& e : handle.entries) {
    if (e.split != split) continue;
    Volume image = load_volume(e.image);
    Volume label = load_volume(e.label);
    image.validate();
    label.validate();
    if (image.dtype() != DType::f32 || label.dtype() != DType::u8) {
      throw DataError(e.image.string() + ": expected f32 image and u8 label volumes");
    }
    if (image.height() != label.height() || image.width() != label.width() ||
        image.depth() != label.depth()) {
      throw DataError(e.image.string() + ": image and label volumes differ in size");
    }
    image = normalize_intensity(image);
    if (handle.volume_crop) {
      image = center_crop(image, *handle.volume_crop);
      label = center_crop(label, *handle.volume_crop);
    }
    for (Volume& s : slice_axial(image)) ds.images_.push_back(std::move(s));
    for (Volume& s : slice_axial(label)) ds.labels_.push_back(std::move(s));
    if (ds.images_.front().channels() != ds.images_.back().channels() ||
        ds.labels_.front().channels() != ds.labels_.back().channels()) {
      throw DataError(e.image.string() + ": channel count differs from earlier volumes");
    }
  }
  return ds;
}

std::size_t SliceDataset::channels() const { return images_.empty() ? 0 : images_[0].channels(); }
std::size_t SliceDataset::classes() const { return labels_.empty() ? 0 : labels_[0].channels(); }

Tensor<float> slices_to_tensor(const std::vector<const Volume*>& slices) {
  if (slices.empty()) throw ShapeError("slices_to_tensor: no slices");
  const Volume& first = *slices[0];
  const std::size_t per = first.voxel_count();
  std::vector<float> data(slices.size() * per);
  for (std::size_t n = 0; n < slices.size(); ++n) {
    if (slices[n]->dims != first.dims) throw ShapeError("slices_to_tensor: slice sizes differ");
    for (std::size_t i = 0; i < per; ++i) data[n * per + i] = slices[n]->value(i);
  }
  return Tensor<float>({slices.size(), first.channels(), first.height(), first.width()},
                       std::move(data));
}

namespace {

Batch to_batch(const std::vector<PairedSlice>& pairs) {
  std::vector<const Volume*> images, labels;
  for (const auto& p : pairs) {
    images.push_back(&p.image);
    labels.push_back(&p.label);
  }
  return {slices_to_tensor(images), slices_to_tensor(labels)};
}

}  // namespace

Batch SliceDataset::sample(std::size_t batch_size, std::size_t crop, std::mt19937_64& rng) const {
  if (images_.empty()) throw DataError("cannot sample from an empty split");
  std::vector<PairedSlice> pairs;
  for (std::size_t b = 0; b < batch_size; ++b) {
    const std::size_t i = rng() % images_.size();
    pairs.push_back(random_crop2d(images_[i], labels_[i], crop, rng));
  }
  return to_batch(pairs);
}

Batch SliceDataset::centered(std::size_t first, std::size_t count, std::size_t crop) const {
  if (count == 0 || first + count > images_.size()) throw DataError("slice range out of bounds");
  std::vector<PairedSlice> pairs;
  for (std::size_t i = first; i < first + count; ++i) {
    pairs.push_back(center_crop2d(images_[i], labels_[i], crop));
  }
  return to_batch(pairs);
}

}  // namespace segan
