#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "segan/error.hpp"

namespace segan {

enum class DType : std::uint8_t { f32 = 0, u8 = 1 };

/// Channels-first, row-major (C, H, W, D) voxel grid. Label volumes are u8
/// with one {0,1} channel per class.
struct Volume {
  std::array<std::size_t, 4> dims{};
  std::variant<std::vector<float>, std::vector<std::uint8_t>> voxels;
  std::map<std::string, std::string> meta;

  static Volume zeros(DType dtype, std::array<std::size_t, 4> dims);

  DType dtype() const { return voxels.index() == 0 ? DType::f32 : DType::u8; }
  std::size_t channels() const { return dims[0]; }
  std::size_t height() const { return dims[1]; }
  std::size_t width() const { return dims[2]; }
  std::size_t depth() const { return dims[3]; }
  std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2] * dims[3]; }

  std::size_t index(std::size_t c, std::size_t h, std::size_t w, std::size_t d) const {
    return ((c * dims[1] + h) * dims[2] + w) * dims[3] + d;
  }

  std::span<float> f32();
  std::span<const float> f32() const;
  std::span<std::uint8_t> u8();
  std::span<const std::uint8_t> u8() const;

  /// Voxel value as float regardless of dtype.
  float value(std::size_t i) const;

  /// Throws ShapeError if the voxel count does not match the dims.
  void validate() const;

  friend bool operator==(const Volume&, const Volume&) = default;
};

// ---- SEGV container --------------------------------------------------------
//
// Little-endian: magic "SEGV", u16 version (1), u8 dtype (0 f32, 1 u8), u8 ndim,
// ndim x u32 dims, u32 meta length, UTF-8 meta ("key=value" lines), raw voxels.

struct SegvRecord {
  DType dtype = DType::f32;
  std::vector<std::uint32_t> dims;
  std::string meta;
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;
};

void write_segv(std::ostream& out, const SegvRecord& record);

/// Reads one record. base_offset is the stream position of the record, used in
/// error messages; returns false at a clean end of stream.
bool read_segv(std::istream& in, SegvRecord& record, std::uint64_t base_offset = 0);

std::string encode_meta(const std::map<std::string, std::string>& meta);
std::map<std::string, std::string> decode_meta(const std::string& text);

void save_volume(const Volume& v, const std::filesystem::path& path);
Volume load_volume(const std::filesystem::path& path);

// ---- geometry --------------------------------------------------------------

/// Spatially centred crop; offset per axis is floor((dim - target) / 2).
Volume center_crop(const Volume& v, std::array<std::size_t, 3> target);

/// The D axial slices as (C, H, W, 1) volumes, in order.
std::vector<Volume> slice_axial(const Volume& v);

/// Inverse of slice_axial; metadata comes from the first slice.
Volume restack(const std::vector<Volume>& slices);

/// Spatial window [top, top+size) x [left, left+size) of a (C, H, W, 1) slice.
Volume crop2d(const Volume& slice, std::size_t top, std::size_t left, std::size_t size);

struct CropOffsets {
  std::size_t top = 0;
  std::size_t left = 0;
  friend bool operator==(const CropOffsets&, const CropOffsets&) = default;
};

struct PairedSlice {
  Volume image;
  Volume label;
  CropOffsets offsets;
};

/// Crops image and label with the same offsets, drawn uniformly from the valid
/// range. Consumes exactly two rng draws (row, then column), even when the
/// crop size equals the slice size.
PairedSlice random_crop2d(const Volume& image, const Volume& label, std::size_t size,
                          std::mt19937_64& rng);

PairedSlice center_crop2d(const Volume& image, const Volume& label, std::size_t size);

/// Per-channel min-max scaling of an f32 volume to [0, 1]; constant channels map to 0.
Volume normalize_intensity(const Volume& v);

}  // namespace segan
