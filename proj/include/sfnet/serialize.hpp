#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sfnet/common.hpp"
#include "sfnet/data_io.hpp"

namespace sfnet {

/// One entry of an SFNM container. Scalar payloads are stored as 64-bit
/// little-endian floats, which round-trips both precisions losslessly.
struct TensorEntry {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

/// SFNM container: magic "SFNM", version u8, then a table of named tensors
/// (name length u16 + name bytes, rank u8, extents u32 each, scalar data
/// little-endian) until end of file. Entry order is preserved, so writing
/// what was read is byte-identical.
inline std::vector<std::uint8_t> named_tensors_to_bytes(const std::vector<TensorEntry>& entries) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'S', 'F', 'N', 'M'});
  out.push_back(1);  // version
  for (const auto& e : entries) {
    if (e.name.size() > 0xFFFF) throw ConfigError("SFNM: tensor name too long: " + e.name);
    if (e.shape.size() > 0xFF) throw ConfigError("SFNM: rank too large for " + e.name);
    if (shape_numel(e.shape) != e.data.size())
      throw ShapeError("SFNM: entry " + e.name + " shape " + shape_str(e.shape) +
                       " does not match data length " + std::to_string(e.data.size()));
    detail::put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.push_back(static_cast<std::uint8_t>(e.shape.size()));
    for (std::size_t ext : e.shape) detail::put_u32(out, static_cast<std::uint32_t>(ext));
    for (double v : e.data) detail::put_f64(out, v);
  }
  return out;
}

inline std::vector<TensorEntry> named_tensors_from_bytes(const std::vector<std::uint8_t>& bytes,
                                                         const std::string& what) {
  detail::ByteReader r(bytes.data(), bytes.size(), what);
  if (r.bytes(4) != "SFNM") throw DataError(what + ": bad magic, not an SFNM file");
  const std::uint8_t version = r.u8();
  if (version != 1) throw DataError(what + ": unsupported SFNM version " + std::to_string(version));
  std::vector<TensorEntry> entries;
  while (!r.at_end()) {
    TensorEntry e;
    e.name = r.bytes(r.u16());
    const std::uint8_t rank = r.u8();
    e.shape.resize(rank);
    std::uint64_t numel = 1;
    for (auto& ext : e.shape) {
      ext = r.u32();
      numel *= ext;
      if (numel > detail::kMaxRasterCells)
        throw DataError(what + ": extent overflow in entry " + e.name);
    }
    e.data.resize(numel);
    for (auto& v : e.data) v = r.f64();
    entries.push_back(std::move(e));
  }
  return entries;
}

inline void write_named_tensors(const std::string& path, const std::vector<TensorEntry>& entries) {
  detail::write_file_bytes(path, named_tensors_to_bytes(entries));
}

inline std::vector<TensorEntry> read_named_tensors(const std::string& path) {
  return named_tensors_from_bytes(detail::read_file_bytes(path), path);
}

}  // namespace sfnet
