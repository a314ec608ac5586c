#pragma once

// File I/O.
//
// Native container (".msv"), one volume, label map or vector field per file:
//
//   offset  size  field
//   0       4     magic "MSV1"
//   4       2     version (u16, currently 1)
//   6       1     dtype: 1 = u8, 2 = f32, 3 = f64
//   7       1     components: 1 (scalar) or 3 (vector, interleaved per voxel)
//   8       12    dims nx, ny, nz (u32 each)
//   20      1     kind: 0 = volume, 1 = binary label, 2 = probabilistic label, 3 = vector field
//   21      3     reserved (zero)
//   24      24    spacing sx, sy, sz (f64 each)
//   48      16    reserved (zero)
//   64      ...   payload, little-endian, x fastest
//
// Uncompressed NIfTI-1 (".nii") with u8/f32 data and identity orientation
// can be read as well; writing NIfTI is provided for interchange.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <unistd.h>

#include "json.hpp"
#include "meanspace/error.hpp"
#include "meanspace/volume.hpp"

namespace meanspace::io {

using json = nlohmann::json;

enum class DType : std::uint8_t { u8 = 1, f32 = 2, f64 = 3 };
enum class Kind : std::uint8_t { volume = 0, binary_label = 1, probabilistic_label = 2, vector_field = 3 };

inline constexpr std::array<char, 4> kMagic{'M', 'S', 'V', '1'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 64;
inline constexpr std::uint32_t kMaxDim = 1u << 12;
inline constexpr std::uint64_t kMaxVoxels = 1ull << 30;

inline std::size_t dtype_size(DType d) { return d == DType::u8 ? 1 : d == DType::f32 ? 4 : 8; }

namespace detail {

template <class T>
void put_le(std::vector<unsigned char>& buf, std::size_t at, T value) {
  using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
            std::conditional_t<sizeof(T) == 2, std::uint16_t,
            std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
  const U u = std::bit_cast<U>(value);
  for (std::size_t b = 0; b < sizeof(T); ++b) buf[at + b] = static_cast<unsigned char>((u >> (8 * b)) & 0xFFu);
}

template <class T>
T get_le(const unsigned char* p) {
  using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
            std::conditional_t<sizeof(T) == 2, std::uint16_t,
            std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
  U u = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) u |= static_cast<U>(static_cast<U>(p[b]) << (8 * b));
  return std::bit_cast<T>(u);
}

inline std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_open, path, "cannot open '" + path + "' for reading");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::io_open, path, "read failure on '" + path + "'");
  return bytes;
}

inline bool has_extension(const std::string& path, const char* ext) {
  return std::filesystem::path(path).extension() == ext;
}

}  // namespace detail

// Writes to a sibling temporary file and renames it over `path`.
inline void atomic_write(const std::string& path, const void* data, std::size_t size) {
  const std::filesystem::path target(path);
  std::error_code ec;
  if (target.has_parent_path()) {
    std::filesystem::create_directories(target.parent_path(), ec);
    if (ec) throw Error(ErrorCode::io_open, path, "cannot create directory for '" + path + "': " + ec.message());
  }
  const std::string tmp = path + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io_open, path, "cannot open '" + tmp + "' for writing");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp);
      throw Error(ErrorCode::io_open, path, "write failure on '" + tmp + "'");
    }
  }
  std::filesystem::rename(tmp, target, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error(ErrorCode::io_open, path, "cannot rename onto '" + path + "': " + ec.message());
  }
}

inline void atomic_write(const std::string& path, const std::string& text) {
  atomic_write(path, text.data(), text.size());
}

// ---------------------------------------------------------------------------
// Native container

struct Header {
  DType dtype = DType::f64;
  std::uint8_t components = 1;
  Kind kind = Kind::volume;
  GridSpec grid;
};

inline std::vector<unsigned char> encode(const Header& h, std::span<const double> values) {
  const std::size_t es = dtype_size(h.dtype);
  std::vector<unsigned char> buf(kHeaderSize + values.size() * es, 0);
  std::memcpy(buf.data(), kMagic.data(), 4);
  detail::put_le<std::uint16_t>(buf, 4, kVersion);
  buf[6] = static_cast<unsigned char>(h.dtype);
  buf[7] = h.components;
  for (int a = 0; a < 3; ++a) detail::put_le<std::uint32_t>(buf, 8 + 4 * a, static_cast<std::uint32_t>(h.grid.dims[a]));
  buf[20] = static_cast<unsigned char>(h.kind);
  for (int a = 0; a < 3; ++a) detail::put_le<double>(buf, 24 + 8 * a, h.grid.spacing[a]);
  std::size_t at = kHeaderSize;
  for (double v : values) {
    switch (h.dtype) {
      case DType::u8: buf[at] = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 255.0))); break;
      case DType::f32: detail::put_le<float>(buf, at, static_cast<float>(v)); break;
      case DType::f64: detail::put_le<double>(buf, at, v); break;
    }
    at += es;
  }
  return buf;
}

struct Decoded {
  Header header;
  std::vector<double> values;
};

inline Decoded decode(const std::vector<unsigned char>& buf, const std::string& path) {
  if (buf.size() < kHeaderSize)
    throw Error(ErrorCode::io_header, "header", "'" + path + "' is shorter than the 64-byte header");
  if (std::memcmp(buf.data(), kMagic.data(), 4) != 0)
    throw Error(ErrorCode::io_magic, "magic", "'" + path + "' is not a meanspace volume file");
  const auto version = detail::get_le<std::uint16_t>(buf.data() + 4);
  if (version != kVersion)
    throw Error(ErrorCode::io_version, "version", "unsupported file version " + std::to_string(version));
  Decoded d;
  Header& h = d.header;
  const unsigned dt = buf[6];
  if (dt < 1 || dt > 3) throw Error(ErrorCode::io_dtype, "dtype", "unsupported dtype code " + std::to_string(dt));
  h.dtype = static_cast<DType>(dt);
  h.components = buf[7];
  if (h.components != 1 && h.components != 3)
    throw Error(ErrorCode::io_header, "components", "component count must be 1 or 3, got " + std::to_string(h.components));
  std::uint64_t voxels = 1;
  static constexpr const char* dim_names[3] = {"nx", "ny", "nz"};
  for (int a = 0; a < 3; ++a) {
    const auto n = detail::get_le<std::uint32_t>(buf.data() + 8 + 4 * a);
    if (n < 2 || n > kMaxDim)
      throw Error(ErrorCode::io_dims, dim_names[a], std::string(dim_names[a]) + " = " + std::to_string(n) +
                                                        " outside [2, " + std::to_string(kMaxDim) + "]");
    voxels *= n;
    h.grid.dims[a] = static_cast<int>(n);
  }
  if (voxels > kMaxVoxels) throw Error(ErrorCode::io_dims, "dims", "voxel count " + std::to_string(voxels) + " too large");
  const unsigned kind = buf[20];
  if (kind > 3) throw Error(ErrorCode::io_header, "kind", "unknown kind code " + std::to_string(kind));
  h.kind = static_cast<Kind>(kind);
  if ((h.kind == Kind::vector_field) != (h.components == 3))
    throw Error(ErrorCode::io_header, "components", "component count does not match kind");
  static constexpr const char* sp_names[3] = {"sx", "sy", "sz"};
  for (int a = 0; a < 3; ++a) {
    const double s = detail::get_le<double>(buf.data() + 24 + 8 * a);
    if (!(s > 0.0) || !std::isfinite(s))
      throw Error(ErrorCode::io_header, sp_names[a], std::string(sp_names[a]) + " must be positive and finite");
    h.grid.spacing[a] = s;
  }
  const std::size_t es = dtype_size(h.dtype);
  const std::uint64_t count = voxels * h.components;
  const std::uint64_t expected = kHeaderSize + count * es;
  if (buf.size() != expected)
    throw Error(ErrorCode::io_payload, "payload", "payload of '" + path + "' has " + std::to_string(buf.size() - kHeaderSize) +
                                                      " bytes, expected " + std::to_string(count * es));
  d.values.resize(static_cast<std::size_t>(count));
  const unsigned char* p = buf.data() + kHeaderSize;
  for (std::size_t i = 0; i < d.values.size(); ++i, p += es) {
    switch (h.dtype) {
      case DType::u8: d.values[i] = *p; break;
      case DType::f32: d.values[i] = detail::get_le<float>(p); break;
      case DType::f64: d.values[i] = detail::get_le<double>(p); break;
    }
  }
  return d;
}

inline void require_finite(const std::vector<double>& values, const std::string& path) {
  for (std::size_t i = 0; i < values.size(); ++i)
    if (!std::isfinite(values[i]))
      throw Error(ErrorCode::io_domain, "payload", "non-finite value at element " + std::to_string(i) + " of '" + path + "'");
}

inline void label_domain(LabelMap& lab, const std::string& path) {
  try {
    lab.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::io_domain, "payload", "'" + path + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// NIfTI-1

namespace nifti {

inline constexpr std::size_t kHeaderSize = 348;
inline constexpr std::int16_t kUint8 = 2;
inline constexpr std::int16_t kFloat32 = 16;

struct Image {
  GridSpec grid;
  std::vector<double> values;
};

inline Image read(const std::string& path) {
  const auto buf = detail::read_all(path);
  if (buf.size() < kHeaderSize + 4) throw Error(ErrorCode::io_header, "sizeof_hdr", "'" + path + "' is too short for NIfTI-1");
  if (detail::get_le<std::int32_t>(buf.data()) != 348)
    throw Error(ErrorCode::io_magic, "sizeof_hdr", "'" + path + "' is not a little-endian NIfTI-1 file");
  if (std::memcmp(buf.data() + 344, "n+1\0", 4) != 0)
    throw Error(ErrorCode::io_magic, "magic", "'" + path + "' is not a single-file NIfTI-1 image");
  const unsigned char* h = buf.data();
  std::int16_t dim[8];
  for (int k = 0; k < 8; ++k) dim[k] = detail::get_le<std::int16_t>(h + 40 + 2 * k);
  if (dim[0] < 3 || dim[0] > 7) throw Error(ErrorCode::io_dims, "dim[0]", "only 3-D NIfTI images are supported");
  for (int k = 4; k <= dim[0]; ++k)
    if (dim[k] != 1) throw Error(ErrorCode::io_dims, "dim[" + std::to_string(k) + "]", "only 3-D NIfTI images are supported");
  Image img;
  std::uint64_t voxels = 1;
  for (int a = 0; a < 3; ++a) {
    if (dim[a + 1] < 2 || static_cast<std::uint32_t>(dim[a + 1]) > kMaxDim)
      throw Error(ErrorCode::io_dims, "dim[" + std::to_string(a + 1) + "]", "dimension outside supported range");
    img.grid.dims[a] = dim[a + 1];
    voxels *= static_cast<std::uint64_t>(dim[a + 1]);
  }
  const auto datatype = detail::get_le<std::int16_t>(h + 70);
  if (datatype != kUint8 && datatype != kFloat32)
    throw Error(ErrorCode::io_dtype, "datatype", "NIfTI datatype " + std::to_string(datatype) + " unsupported (u8, f32 only)");
  for (int a = 0; a < 3; ++a) {
    const double s = detail::get_le<float>(h + 76 + 4 * (a + 1));
    if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorCode::io_header, "pixdim[" + std::to_string(a + 1) + "]", "voxel size must be positive");
    img.grid.spacing[a] = s;
  }
  const auto qform = detail::get_le<std::int16_t>(h + 252);
  const auto sform = detail::get_le<std::int16_t>(h + 254);
  if (qform > 0) {
    const float qb = detail::get_le<float>(h + 256), qc = detail::get_le<float>(h + 260), qd = detail::get_le<float>(h + 264);
    const float qfac = detail::get_le<float>(h + 76);
    if (qb != 0.0f || qc != 0.0f || qd != 0.0f || qfac < 0.0f)
      throw Error(ErrorCode::io_header, "qform", "only identity-orientation NIfTI headers are supported");
  }
  if (sform > 0) {
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        const float e = detail::get_le<float>(h + 280 + 16 * r + 4 * c);
        if ((r == c && !(e > 0.0f)) || (r != c && e != 0.0f))
          throw Error(ErrorCode::io_header, "sform", "only identity-orientation NIfTI headers are supported");
      }
  }
  const double offset = detail::get_le<float>(h + 108);
  if (!(offset >= 352.0) || offset != std::floor(offset)) throw Error(ErrorCode::io_header, "vox_offset", "invalid vox_offset");
  double slope = detail::get_le<float>(h + 112);
  const double inter = detail::get_le<float>(h + 116);
  if (slope == 0.0 || !std::isfinite(slope)) slope = 1.0;
  const std::size_t es = datatype == kUint8 ? 1 : 4;
  const std::uint64_t need = static_cast<std::uint64_t>(offset) + voxels * es;
  if (buf.size() < need)
    throw Error(ErrorCode::io_payload, "payload", "'" + path + "' truncated: " + std::to_string(buf.size()) + " of " +
                                                      std::to_string(need) + " bytes");
  img.values.resize(static_cast<std::size_t>(voxels));
  const unsigned char* p = buf.data() + static_cast<std::size_t>(offset);
  for (std::size_t i = 0; i < img.values.size(); ++i, p += es) {
    const double raw = es == 1 ? static_cast<double>(*p) : static_cast<double>(detail::get_le<float>(p));
    img.values[i] = slope == 1.0 && inter == 0.0 ? raw : raw * slope + inter;
  }
  return img;
}

inline void write(const std::string& path, const GridSpec& g, std::span<const double> values, bool as_u8) {
  const std::size_t es = as_u8 ? 1 : 4;
  std::vector<unsigned char> buf(352 + values.size() * es, 0);
  detail::put_le<std::int32_t>(buf, 0, 348);
  const std::int16_t dim[8] = {3, static_cast<std::int16_t>(g.dims[0]), static_cast<std::int16_t>(g.dims[1]),
                               static_cast<std::int16_t>(g.dims[2]), 1, 1, 1, 1};
  for (int k = 0; k < 8; ++k) detail::put_le<std::int16_t>(buf, 40 + 2 * k, dim[k]);
  detail::put_le<std::int16_t>(buf, 70, as_u8 ? kUint8 : kFloat32);
  detail::put_le<std::int16_t>(buf, 72, static_cast<std::int16_t>(8 * es));
  detail::put_le<float>(buf, 76, 1.0f);
  for (int a = 0; a < 3; ++a) detail::put_le<float>(buf, 80 + 4 * a, static_cast<float>(g.spacing[a]));
  detail::put_le<float>(buf, 108, 352.0f);
  detail::put_le<float>(buf, 112, 1.0f);
  std::memcpy(buf.data() + 344, "n+1\0", 4);
  std::size_t at = 352;
  for (double v : values) {
    if (as_u8)
      buf[at] = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 255.0)));
    else
      detail::put_le<float>(buf, at, static_cast<float>(v));
    at += es;
  }
  atomic_write(path, buf.data(), buf.size());
}

}  // namespace nifti

// ---------------------------------------------------------------------------
// Typed entry points. Files ending in ".nii" go through NIfTI-1.

inline void write_volume(const std::string& path, const Volume& vol, DType dtype = DType::f64) {
  if (detail::has_extension(path, ".nii")) return nifti::write(path, vol.grid, vol.data, dtype == DType::u8);
  const auto buf = encode({dtype, 1, Kind::volume, vol.grid}, vol.data);
  atomic_write(path, buf.data(), buf.size());
}

inline Volume read_volume(const std::string& path) {
  Volume vol;
  if (detail::has_extension(path, ".nii")) {
    nifti::Image img = nifti::read(path);
    vol.grid = img.grid;
    vol.data = std::move(img.values);
  } else {
    Decoded d = decode(detail::read_all(path), path);
    if (d.header.components != 1)
      throw Error(ErrorCode::io_header, "components", "'" + path + "' holds a vector field, not a volume");
    vol.grid = d.header.grid;
    vol.data = std::move(d.values);
  }
  require_finite(vol.data, path);
  return vol;
}

// Binary labels are stored as u8, probabilistic labels as f64.
inline void write_label(const std::string& path, const LabelMap& lab) {
  lab.validate();
  const bool binary = lab.kind == LabelKind::binary;
  if (detail::has_extension(path, ".nii")) return nifti::write(path, lab.grid, lab.data, binary);
  const auto buf = encode({binary ? DType::u8 : DType::f64, 1, binary ? Kind::binary_label : Kind::probabilistic_label,
                           lab.grid},
                          lab.data);
  atomic_write(path, buf.data(), buf.size());
}

// A plain volume file is accepted as a label map: u8 data is read as binary,
// floating-point data as probabilistic.
inline LabelMap read_label(const std::string& path) {
  LabelMap lab;
  bool binary = false;
  if (detail::has_extension(path, ".nii")) {
    nifti::Image img = nifti::read(path);
    lab.grid = img.grid;
    lab.data = std::move(img.values);
    binary = std::all_of(lab.data.begin(), lab.data.end(), [](double v) { return v == std::floor(v); });
  } else {
    Decoded d = decode(detail::read_all(path), path);
    if (d.header.components != 1)
      throw Error(ErrorCode::io_header, "components", "'" + path + "' holds a vector field, not a label map");
    lab.grid = d.header.grid;
    lab.data = std::move(d.values);
    binary = d.header.kind == Kind::binary_label || (d.header.kind == Kind::volume && d.header.dtype == DType::u8);
  }
  lab.kind = binary ? LabelKind::binary : LabelKind::probabilistic;
  label_domain(lab, path);
  return lab;
}

inline void write_field(const std::string& path, const VectorField& f, DType dtype = DType::f64) {
  if (dtype == DType::u8) throw Error(ErrorCode::io_dtype, "dtype", "vector fields cannot be stored as u8");
  const auto buf = encode({dtype, 3, Kind::vector_field, f.grid}, f.data);
  atomic_write(path, buf.data(), buf.size());
}

inline VectorField read_field(const std::string& path) {
  Decoded d = decode(detail::read_all(path), path);
  if (d.header.components != 3)
    throw Error(ErrorCode::io_header, "components", "'" + path + "' holds a scalar volume, not a vector field");
  VectorField f;
  f.grid = d.header.grid;
  f.data = std::move(d.values);
  require_finite(f.data, path);
  return f;
}

// ---------------------------------------------------------------------------
// Line-delimited JSON reports

inline std::string to_jsonl(const std::vector<json>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

inline void write_jsonl(const std::string& path, const std::vector<json>& records) {
  atomic_write(path, to_jsonl(records));
}

inline std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_open, path, "cannot open '" + path + "' for reading");
  std::vector<json> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::io_payload, "line " + std::to_string(lineno), "malformed report line: " + std::string(e.what()));
    }
  }
  return out;
}

inline void write_json(const std::string& path, const json& doc) { atomic_write(path, doc.dump(2) + "\n"); }

inline json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_open, path, "cannot open '" + path + "' for reading");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::config, path, "malformed JSON in '" + path + "': " + e.what());
  }
}

}  // namespace meanspace::io
