#include "segan/volume.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace segan {

namespace {

constexpr std::array<char, 4> kMagic{'S', 'E', 'G', 'V'};
constexpr std::uint16_t kVersion = 1;

std::string dims_string(const std::array<std::size_t, 4>& d) {
  return "(" + std::to_string(d[0]) + "," + std::to_string(d[1]) + "," + std::to_string(d[2]) +
         "," + std::to_string(d[3]) + ")";
}

void put_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }

void put_u16(std::ostream& out, std::uint16_t v) {
  put_u8(out, v & 0xff);
  put_u8(out, v >> 8);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) put_u8(out, (v >> (8 * i)) & 0xff);
}

class Reader {
 public:
  Reader(std::istream& in, std::uint64_t base) : in_(in), base_(base) {}

  std::uint64_t offset() const { return base_ + consumed_; }

  bool bytes(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    const auto got = static_cast<std::size_t>(in_.gcount());
    consumed_ += got;
    return got == n;
  }

  std::uint8_t u8(const char* what) {
    unsigned char b[1];
    const std::uint64_t at = offset();
    if (!bytes(b, 1)) throw FormatError(std::string("truncated ") + what, at);
    return b[0];
  }

  std::uint16_t u16(const char* what) {
    unsigned char b[2];
    const std::uint64_t at = offset();
    if (!bytes(b, 2)) throw FormatError(std::string("truncated ") + what, at);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    const std::uint64_t at = offset();
    if (!bytes(b, 4)) throw FormatError(std::string("truncated ") + what, at);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

 private:
  std::istream& in_;
  std::uint64_t base_;
  std::uint64_t consumed_ = 0;
};

}  // namespace

Volume Volume::zeros(DType dtype, std::array<std::size_t, 4> dims) {
  Volume v;
  v.dims = dims;
  const std::size_t n = dims[0] * dims[1] * dims[2] * dims[3];
  if (dtype == DType::f32) {
    v.voxels = std::vector<float>(n, 0.0f);
  } else {
    v.voxels = std::vector<std::uint8_t>(n, 0);
  }
  return v;
}

std::span<float> Volume::f32() {
  if (dtype() != DType::f32) throw DataError("volume is not f32");
  return std::get<0>(voxels);
}
std::span<const float> Volume::f32() const {
  if (dtype() != DType::f32) throw DataError("volume is not f32");
  return std::get<0>(voxels);
}
std::span<std::uint8_t> Volume::u8() {
  if (dtype() != DType::u8) throw DataError("volume is not u8");
  return std::get<1>(voxels);
}
std::span<const std::uint8_t> Volume::u8() const {
  if (dtype() != DType::u8) throw DataError("volume is not u8");
  return std::get<1>(voxels);
}

float Volume::value(std::size_t i) const {
  return dtype() == DType::f32 ? std::get<0>(voxels)[i] : static_cast<float>(std::get<1>(voxels)[i]);
}

void Volume::validate() const {
  for (std::size_t d : dims) {
    if (d == 0) throw ShapeError("volume dims must be positive, got " + dims_string(dims));
  }
  const std::size_t have = std::visit([](const auto& v) { return v.size(); }, voxels);
  if (have != voxel_count()) {
    throw ShapeError("volume dims " + dims_string(dims) + " expected " +
                     std::to_string(voxel_count()) + " voxels, got " + std::to_string(have));
  }
}

std::string encode_meta(const std::map<std::string, std::string>& meta) {
  std::string out;
  for (const auto& [key, value] : meta) {
    if (key.empty() || key.find_first_of("=\n") != std::string::npos ||
        value.find('\n') != std::string::npos) {
      throw DataError("meta entry '" + key + "' cannot be encoded as a key=value line");
    }
    out += key + "=" + value + "\n";
  }
  return out;
}

std::map<std::string, std::string> decode_meta(const std::string& text) {
  std::map<std::string, std::string> meta;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("meta line without '=': " + line);
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

void write_segv(std::ostream& out, const SegvRecord& r) {
  if (r.dims.empty() || r.dims.size() > 255) throw DataError("SEGV: ndim must be in 1..255");
  std::size_t count = 1;
  for (std::uint32_t d : r.dims) count *= d;
  const std::size_t have = r.dtype == DType::f32 ? r.f32.size() : r.u8.size();
  if (have != count) {
    throw DataError("SEGV: dims expect " + std::to_string(count) + " voxels, record holds " +
                    std::to_string(have));
  }
  out.write(kMagic.data(), kMagic.size());
  put_u16(out, kVersion);
  put_u8(out, static_cast<std::uint8_t>(r.dtype));
  put_u8(out, static_cast<std::uint8_t>(r.dims.size()));
  for (std::uint32_t d : r.dims) put_u32(out, d);
  put_u32(out, static_cast<std::uint32_t>(r.meta.size()));
  out.write(r.meta.data(), static_cast<std::streamsize>(r.meta.size()));
  if (r.dtype == DType::f32) {
    for (float v : r.f32) put_u32(out, std::bit_cast<std::uint32_t>(v));
  } else {
    out.write(reinterpret_cast<const char*>(r.u8.data()), static_cast<std::streamsize>(r.u8.size()));
  }
  if (!out) throw DataError("SEGV: write failed");
}

bool read_segv(std::istream& in, SegvRecord& r, std::uint64_t base_offset) {
  Reader rd(in, base_offset);
  std::array<char, 4> magic{};
  rd.bytes(magic.data(), 1);
  if (rd.offset() == base_offset) return false;  // clean end of stream
  if (!rd.bytes(magic.data() + 1, 3) || magic != kMagic) throw FormatError("bad magic", base_offset);
  const std::uint64_t version_at = rd.offset();
  const std::uint16_t version = rd.u16("header");
  if (version != kVersion) {
    throw FormatError("unsupported version " + std::to_string(version), version_at);
  }
  const std::uint64_t dtype_at = rd.offset();
  const std::uint8_t code = rd.u8("header");
  if (code > 1) throw FormatError("unknown dtype code " + std::to_string(code), dtype_at);
  r.dtype = static_cast<DType>(code);
  const std::uint64_t ndim_at = rd.offset();
  const std::uint8_t ndim = rd.u8("header");
  if (ndim == 0) throw FormatError("ndim must be positive", ndim_at);
  r.dims.assign(ndim, 0);
  std::uint64_t count = 1;
  for (auto& d : r.dims) {
    const std::uint64_t at = rd.offset();
    d = rd.u32("dims");
    if (d == 0) throw FormatError("zero dimension", at);
    count *= d;
  }
  const std::uint32_t meta_len = rd.u32("meta length");
  r.meta.assign(meta_len, '\0');
  const std::uint64_t meta_at = rd.offset();
  if (!rd.bytes(r.meta.data(), meta_len)) throw FormatError("truncated meta", meta_at);

  const std::uint64_t payload_at = rd.offset();
  const std::size_t width = r.dtype == DType::f32 ? 4 : 1;
  std::vector<std::uint8_t> raw(count * width);
  rd.bytes(raw.data(), raw.size());
  const std::uint64_t got = rd.offset() - payload_at;
  if (got != raw.size()) {
    throw FormatError("truncated payload: expected " + std::to_string(count) + " voxels, got " +
                          std::to_string(got / width),
                      payload_at + got);
  }
  r.f32.clear();
  r.u8.clear();
  if (r.dtype == DType::f32) {
    r.f32.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint8_t* b = raw.data() + 4 * i;
      r.f32[i] = std::bit_cast<float>(static_cast<std::uint32_t>(b[0]) |
                                      (static_cast<std::uint32_t>(b[1]) << 8) |
                                      (static_cast<std::uint32_t>(b[2]) << 16) |
                                      (static_cast<std::uint32_t>(b[3]) << 24));
    }
  } else {
    r.u8 = std::move(raw);
  }
  return true;
}

void save_volume(const Volume& v, const std::filesystem::path& path) {
  v.validate();
  SegvRecord r;
  r.dtype = v.dtype();
  for (std::size_t d : v.dims) r.dims.push_back(static_cast<std::uint32_t>(d));
  r.meta = encode_meta(v.meta);
  if (r.dtype == DType::f32) {
    r.f32 = std::get<0>(v.voxels);
  } else {
    r.u8 = std::get<1>(v.voxels);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_segv(out, r);
}

Volume load_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  SegvRecord r;
  if (!read_segv(in, r)) throw FormatError("empty file", 0);
  if (r.dims.size() != 4) {
    throw DataError(path.string() + ": volume needs 4 dims, got " + std::to_string(r.dims.size()));
  }
  Volume v;
  for (int i = 0; i < 4; ++i) v.dims[i] = r.dims[i];
  v.meta = decode_meta(r.meta);
  if (r.dtype == DType::f32) {
    v.voxels = std::move(r.f32);
  } else {
    v.voxels = std::move(r.u8);
  }
  return v;
}

namespace {

// Copies the (C, h, w, d) window starting at (top, left, front).
Volume window(const Volume& v, std::size_t top, std::size_t left, std::size_t front,
              std::array<std::size_t, 3> size) {
  Volume out = Volume::zeros(v.dtype(), {v.dims[0], size[0], size[1], size[2]});
  out.meta = v.meta;
  std::visit(
      [&](auto& dst) {
        const auto& src = std::get<std::decay_t<decltype(dst)>>(v.voxels);
        std::size_t o = 0;
        for (std::size_t c = 0; c < v.dims[0]; ++c)
          for (std::size_t h = 0; h < size[0]; ++h)
            for (std::size_t w = 0; w < size[1]; ++w) {
              const std::size_t base = v.index(c, top + h, left + w, front);
              std::copy_n(src.begin() + base, size[2], dst.begin() + o);
              o += size[2];
            }
      },
      out.voxels);
  return out;
}

}  // namespace

Volume center_crop(const Volume& v, std::array<std::size_t, 3> target) {
  for (int i = 0; i < 3; ++i) {
    if (target[i] == 0 || target[i] > v.dims[i + 1]) {
      throw ShapeError("center_crop: target " + std::to_string(target[0]) + "x" +
                       std::to_string(target[1]) + "x" + std::to_string(target[2]) +
                       " does not fit volume " + dims_string(v.dims));
    }
  }
  return window(v, (v.dims[1] - target[0]) / 2, (v.dims[2] - target[1]) / 2,
                (v.dims[3] - target[2]) / 2, target);
}

std::vector<Volume> slice_axial(const Volume& v) {
  std::vector<Volume> slices;
  slices.reserve(v.depth());
  for (std::size_t d = 0; d < v.depth(); ++d) {
    slices.push_back(window(v, 0, 0, d, {v.height(), v.width(), 1}));
  }
  return slices;
}

Volume restack(const std::vector<Volume>& slices) {
  if (slices.empty()) throw ShapeError("restack: no slices");
  const Volume& first = slices.front();
  for (const Volume& s : slices) {
    if (s.dims[0] != first.dims[0] || s.dims[1] != first.dims[1] || s.dims[2] != first.dims[2] ||
        s.dims[3] != 1 || s.dtype() != first.dtype()) {
      throw ShapeError("restack: slice " + dims_string(s.dims) + " does not match " +
                       dims_string(first.dims));
    }
  }
  const std::size_t depth = slices.size();
  Volume out = Volume::zeros(first.dtype(), {first.dims[0], first.dims[1], first.dims[2], depth});
  out.meta = first.meta;
  const std::size_t plane = first.voxel_count();
  std::visit(
      [&](auto& dst) {
        using Vec = std::decay_t<decltype(dst)>;
        for (std::size_t d = 0; d < depth; ++d) {
          const Vec& src = std::get<Vec>(slices[d].voxels);
          for (std::size_t i = 0; i < plane; ++i) dst[i * depth + d] = src[i];
        }
      },
      out.voxels);
  return out;
}

Volume crop2d(const Volume& slice, std::size_t top, std::size_t left, std::size_t size) {
  if (slice.depth() != 1) throw ShapeError("crop2d: expected a single slice");
  if (size == 0 || top + size > slice.height() || left + size > slice.width()) {
    throw ShapeError("crop2d: window of size " + std::to_string(size) + " at (" +
                     std::to_string(top) + "," + std::to_string(left) + ") exceeds slice " +
                     dims_string(slice.dims));
  }
  return window(slice, top, left, 0, {size, size, 1});
}

namespace {

void check_pair(const Volume& image, const Volume& label, std::size_t size) {
  if (image.height() != label.height() || image.width() != label.width()) {
    throw ShapeError("paired crop: image " + dims_string(image.dims) + " and label " +
                     dims_string(label.dims) + " differ spatially");
  }
  if (size > image.height() || size > image.width()) {
    throw ShapeError("paired crop: size " + std::to_string(size) + " exceeds slice " +
                     dims_string(image.dims));
  }
}

}  // namespace

PairedSlice random_crop2d(const Volume& image, const Volume& label, std::size_t size,
                          std::mt19937_64& rng) {
  check_pair(image, label, size);
  const std::uint64_t row_draw = rng();
  const std::uint64_t col_draw = rng();
  CropOffsets off{static_cast<std::size_t>(row_draw % (image.height() - size + 1)),
                  static_cast<std::size_t>(col_draw % (image.width() - size + 1))};
  return {crop2d(image, off.top, off.left, size), crop2d(label, off.top, off.left, size), off};
}

PairedSlice center_crop2d(const Volume& image, const Volume& label, std::size_t size) {
  check_pair(image, label, size);
  CropOffsets off{(image.height() - size) / 2, (image.width() - size) / 2};
  return {crop2d(image, off.top, off.left, size), crop2d(label, off.top, off.left, size), off};
}

Volume normalize_intensity(const Volume& v) {
  Volume out = v;
  std::span<float> data = out.f32();
  const std::size_t per_channel = v.height() * v.width() * v.depth();
  for (std::size_t c = 0; c < v.channels(); ++c) {
    auto first = data.begin() + c * per_channel;
    auto last = first + per_channel;
    const auto [lo, hi] = std::minmax_element(first, last);
    const float mn = *lo, mx = *hi;
    for (auto it = first; it != last; ++it) *it = mx > mn ? (*it - mn) / (mx - mn) : 0.0f;
  }
  return out;
}

}  // namespace segan
