#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "sfnet/common.hpp"
#include "sfnet/tensor.hpp"

namespace sfnet {

namespace detail {

// Little-endian byte codecs; files are bit-exact across platforms.

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xFF));
}

/// Bounds-checked reader over an in-memory file image.
class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size, std::string what)
      : data_(data), size_(size), what_(std::move(what)) {}

  std::uint8_t u8() { return *take(1); }

  std::uint16_t u16() {
    const std::uint8_t* p = take(2);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }

  std::uint32_t u32() {
    const std::uint8_t* p = take(4);
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }

  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  double f64() {
    const std::uint8_t* p = take(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  std::string bytes(std::size_t n) {
    const std::uint8_t* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }

  std::size_t remaining() const { return size_ - pos_; }
  bool at_end() const { return pos_ == size_; }

 private:
  const std::uint8_t* take(std::size_t n) {
    if (pos_ + n > size_)
      throw DataError(what_ + ": truncated payload (need " + std::to_string(n) + " bytes at " +
                      std::to_string(pos_) + ", have " + std::to_string(size_ - pos_) + ")");
    const std::uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }

  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path);
}

// Guards extent arithmetic in headers read from disk.
inline constexpr std::uint64_t kMaxRasterCells = 1ull << 31;

}  // namespace detail

/// Co-registered HSI cube + auxiliary raster + per-pixel label map.
/// Label 0 means unlabeled; 1..C index into class_names.
template <typename S>
struct RasterPair {
  Tensor<S> hsi;                         // [bands x H x W]
  Tensor<S> aux;                         // [channels x H x W]
  std::vector<std::uint16_t> labels;     // H*W row-major
  std::vector<std::string> class_names;  // size C

  std::size_t bands() const { return hsi.extent(0); }
  std::size_t height() const { return hsi.extent(1); }
  std::size_t width() const { return hsi.extent(2); }
  std::size_t aux_channels() const { return aux.extent(0); }
  std::size_t n_classes() const { return class_names.size(); }
};

/// SFNR container: magic "SFNR", version u8, u32 LE H, W, bands, aux
/// channels, n_classes, dtype code (0 = 32-bit float); then HSI planes
/// band-sequential row-major, aux planes, labels u16 row-major, and the
/// class-name table (u16 length + bytes each).
template <typename S>
std::vector<std::uint8_t> raster_to_bytes(const RasterPair<S>& rp) {
  const std::size_t h = rp.height(), w = rp.width();
  if (rp.aux.extent(1) != h || rp.aux.extent(2) != w)
    throw ShapeError("write_raster: hsi " + shape_str(rp.hsi.shape()) + " and aux " +
                     shape_str(rp.aux.shape()) + " do not share H x W");
  if (rp.labels.size() != h * w)
    throw ShapeError("write_raster: label map size " + std::to_string(rp.labels.size()) +
                     " != H*W");
  for (std::uint16_t l : rp.labels)
    if (l > rp.n_classes())
      throw DataError("write_raster: label " + std::to_string(l) + " exceeds class count " +
                      std::to_string(rp.n_classes()));

  std::vector<std::uint8_t> out;
  out.reserve(32 + 4 * (rp.hsi.numel() + rp.aux.numel()) + 2 * rp.labels.size());
  out.insert(out.end(), {'S', 'F', 'N', 'R'});
  out.push_back(1);  // version
  detail::put_u32(out, static_cast<std::uint32_t>(h));
  detail::put_u32(out, static_cast<std::uint32_t>(w));
  detail::put_u32(out, static_cast<std::uint32_t>(rp.bands()));
  detail::put_u32(out, static_cast<std::uint32_t>(rp.aux_channels()));
  detail::put_u32(out, static_cast<std::uint32_t>(rp.n_classes()));
  detail::put_u32(out, 0);  // dtype: f32
  for (S v : rp.hsi.value()) detail::put_f32(out, static_cast<float>(v));
  for (S v : rp.aux.value()) detail::put_f32(out, static_cast<float>(v));
  for (std::uint16_t l : rp.labels) detail::put_u16(out, l);
  for (const auto& name : rp.class_names) {
    detail::put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
  }
  return out;
}

template <typename S>
void write_raster(const std::string& path, const RasterPair<S>& rp) {
  detail::write_file_bytes(path, raster_to_bytes(rp));
}

template <typename S>
RasterPair<S> raster_from_bytes(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  detail::ByteReader r(bytes.data(), bytes.size(), what);
  if (r.bytes(4) != "SFNR") throw DataError(what + ": bad magic, not an SFNR file");
  const std::uint8_t version = r.u8();
  if (version != 1) throw DataError(what + ": unsupported SFNR version " + std::to_string(version));
  const std::uint64_t h = r.u32();
  const std::uint64_t w = r.u32();
  const std::uint64_t bands = r.u32();
  const std::uint64_t aux_c = r.u32();
  const std::uint64_t n_classes = r.u32();
  const std::uint32_t dtype = r.u32();
  if (dtype != 0) throw DataError(what + ": unsupported dtype code " + std::to_string(dtype));
  if (h == 0 || w == 0 || bands == 0 || aux_c == 0)
    throw DataError(what + ": zero extent in header");
  if (h * w > detail::kMaxRasterCells || h * w * bands > detail::kMaxRasterCells ||
      h * w * aux_c > detail::kMaxRasterCells)
    throw DataError(what + ": extent overflow (" + std::to_string(h) + "x" + std::to_string(w) +
                    ", " + std::to_string(bands) + " bands)");

  RasterPair<S> rp;
  std::vector<S> hsi(bands * h * w);
  for (auto& v : hsi) v = static_cast<S>(r.f32());
  rp.hsi = Tensor<S>::from({static_cast<std::size_t>(bands), static_cast<std::size_t>(h),
                            static_cast<std::size_t>(w)},
                           std::move(hsi));
  std::vector<S> aux(aux_c * h * w);
  for (auto& v : aux) v = static_cast<S>(r.f32());
  rp.aux = Tensor<S>::from({static_cast<std::size_t>(aux_c), static_cast<std::size_t>(h),
                            static_cast<std::size_t>(w)},
                           std::move(aux));
  rp.labels.resize(h * w);
  for (auto& l : rp.labels) {
    l = r.u16();
    if (l > n_classes)
      throw DataError(what + ": label " + std::to_string(l) + " exceeds class count " +
                      std::to_string(n_classes));
  }
  rp.class_names.resize(n_classes);
  for (auto& name : rp.class_names) name = r.bytes(r.u16());
  if (!r.at_end())
    throw DataError(what + ": " + std::to_string(r.remaining()) + " trailing bytes");
  return rp;
}

template <typename S>
RasterPair<S> read_raster(const std::string& path) {
  return raster_from_bytes<S>(detail::read_file_bytes(path), path);
}

/// Synthetic multi-source fixture. Classes tile the scene as rectangles on a
/// gr x gc grid (row-major). The HSI spectral signature depends only on the
/// grid column and the auxiliary level only on the grid row, so neither source
/// alone can separate all classes while both together can: fusion has to
/// matter. HSI noise sigma = 0.05.
template <typename S>
RasterPair<S> synth_generate(std::size_t n_classes, std::size_t h, std::size_t w,
                             std::size_t bands, std::size_t aux_channels, std::uint64_t seed) {
  if (n_classes < 2) throw ConfigError("synth_generate: need at least 2 classes");
  if (bands < 2) throw ConfigError("synth_generate: need at least 2 bands");
  if (aux_channels < 1) throw ConfigError("synth_generate: need at least 1 aux channel");

  const std::size_t grid_rows = static_cast<std::size_t>(std::floor(std::sqrt(
      static_cast<double>(n_classes))));
  const std::size_t grid_cols = (n_classes + grid_rows - 1) / grid_rows;
  const std::size_t tile_h = h / grid_rows;
  const std::size_t tile_w = w / grid_cols;
  if (tile_h < 1 || tile_w < 1)
    throw ConfigError("synth_generate: cannot pack " + std::to_string(n_classes) +
                      " rectangular regions into " + std::to_string(h) + "x" + std::to_string(w));

  RasterPair<S> rp;
  rp.labels.assign(h * w, 0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::size_t gy = std::min(y / tile_h, grid_rows - 1);
      std::size_t gx = std::min(x / tile_w, grid_cols - 1);
      const std::size_t tile = gy * grid_cols + gx;
      if (tile < n_classes) rp.labels[y * w + x] = static_cast<std::uint16_t>(tile + 1);
    }
  }

  Rng rng(seed);

  // Spectral signature per grid column: a Gaussian bump over the bands.
  auto signature = [&](std::size_t gx, std::size_t band) {
    const double center =
        (static_cast<double>(gx) + 0.5) * static_cast<double>(bands) / static_cast<double>(grid_cols);
    const double width = std::max(1.5, static_cast<double>(bands) / (4.0 * static_cast<double>(grid_cols)));
    const double d = (static_cast<double>(band) - center) / width;
    return 0.2 + std::exp(-0.5 * d * d);
  };
  // Auxiliary mean level per grid row.
  auto aux_level = [&](std::size_t gy) {
    if (grid_rows == 1) return 0.5;
    return 0.3 + 0.4 * static_cast<double>(gy) / static_cast<double>(grid_rows - 1);
  };

  constexpr double kNoise = 0.05;
  std::vector<S> hsi(bands * h * w);
  for (std::size_t b = 0; b < bands; ++b)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::uint16_t label = rp.labels[y * w + x];
        double base = 0.2;
        if (label > 0) base = signature((label - 1) % grid_cols, b);
        hsi[(b * h + y) * w + x] = static_cast<S>(base + kNoise * rng.normal());
      }
  rp.hsi = Tensor<S>::from({bands, h, w}, std::move(hsi));

  std::vector<S> aux(aux_channels * h * w);
  for (std::size_t c = 0; c < aux_channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::uint16_t label = rp.labels[y * w + x];
        double v;
        if (c == 0) {
          v = label > 0 ? aux_level((label - 1) / grid_cols) : 0.0;
        } else {
          // Class-independent spatial texture.
          v = 0.5 + 0.15 * std::sin(2.0 * 3.141592653589793 * static_cast<double>(x) / 16.0) *
                        std::cos(2.0 * 3.141592653589793 * static_cast<double>(y) / 16.0);
        }
        aux[(c * h + y) * w + x] = static_cast<S>(v + kNoise * rng.normal());
      }
  rp.aux = Tensor<S>::from({aux_channels, h, w}, std::move(aux));

  rp.class_names.resize(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) rp.class_names[c] = "class_" + std::to_string(c + 1);
  return rp;
}

/// Disjoint per-class train/test pixel split, deterministic per seed.
struct SplitSpec {
  double train_fraction = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::uint32_t> train_indices;  // linear pixel indices, sorted
  std::vector<std::uint32_t> test_indices;
};

/// Per-class sampling without replacement: train count = round(fraction *
/// class count), at least 1. Fraction is capped at 0.9 so the test side stays
/// populated.
inline SplitSpec stratified_split(const std::vector<std::uint16_t>& labels, double fraction,
                                  std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 0.9)
    throw ConfigError("stratified_split: train fraction " + std::to_string(fraction) +
                      " outside (0, 0.9]");
  std::uint16_t max_label = 0;
  for (std::uint16_t l : labels) max_label = std::max(max_label, l);
  if (max_label == 0) throw DataError("stratified_split: no labeled pixels");

  std::vector<std::vector<std::uint32_t>> per_class(max_label);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] > 0) per_class[labels[i] - 1].push_back(static_cast<std::uint32_t>(i));

  SplitSpec spec;
  spec.train_fraction = fraction;
  spec.seed = seed;
  Rng rng(seed);
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    auto& idx = per_class[c];
    if (idx.empty()) continue;  // class id unused in this map
    if (idx.size() < 2)
      throw DataError("stratified_split: class " + std::to_string(c + 1) + " has " +
                      std::to_string(idx.size()) + " labeled pixel(s), need at least 2");
    shuffle(idx, rng);
    std::size_t k = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(idx.size())));
    k = std::max<std::size_t>(k, 1);
    k = std::min(k, idx.size());
    spec.train_indices.insert(spec.train_indices.end(), idx.begin(), idx.begin() + k);
    spec.test_indices.insert(spec.test_indices.end(), idx.begin() + k, idx.end());
  }
  if (spec.test_indices.empty()) throw DataError("stratified_split: empty test split");
  std::sort(spec.train_indices.begin(), spec.train_indices.end());
  std::sort(spec.test_indices.begin(), spec.test_indices.end());
  return spec;
}

}  // namespace sfnet
