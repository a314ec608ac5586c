#pragma once

// Minimal 8-bit grayscale / RGB PNG encoder on top of zlib.

#include <cstdint>
#include <string>
#include <vector>

#include <zlib.h>

#include "meanspace/error.hpp"
#include "meanspace/io.hpp"

namespace meanspace::png {

namespace detail {

inline void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>((v >> s) & 0xFFu));
}

inline void chunk(std::vector<unsigned char>& out, const char type[4], const std::vector<unsigned char>& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
  put_be32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace detail

// `pixels` holds height rows of width * channels bytes (channels 1 or 3).
inline void write(const std::string& path, int width, int height, int channels, const std::vector<unsigned char>& pixels) {
  if (channels != 1 && channels != 3) throw Error(ErrorCode::invalid_argument, "channels", "PNG channels must be 1 or 3");
  const std::size_t row = static_cast<std::size_t>(width) * static_cast<std::size_t>(channels);
  std::vector<unsigned char> raw;
  raw.reserve((row + 1) * static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), pixels.begin() + static_cast<std::ptrdiff_t>(row * y),
               pixels.begin() + static_cast<std::ptrdiff_t>(row * (y + 1)));
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw Error(ErrorCode::io_payload, path, "zlib compression failed");
  z.resize(zlen);

  std::vector<unsigned char> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  std::vector<unsigned char> ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(width));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);
  ihdr.push_back(channels == 1 ? 0 : 2);
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  detail::chunk(out, "IHDR", ihdr);
  detail::chunk(out, "IDAT", z);
  detail::chunk(out, "IEND", {});
  io::atomic_write(path, out.data(), out.size());
}

// Axial slice z of `vol`, linearly windowed to its min..max, with an optional
// red overlay of `mask` > 0.5.
inline void write_axial_slice(const std::string& path, const Volume& vol, int z, const LabelMap* mask = nullptr) {
  const int nx = vol.grid.dims[0], ny = vol.grid.dims[1];
  double lo = vol.data.front(), hi = vol.data.front();
  for (double v : vol.data) lo = std::min(lo, v), hi = std::max(hi, v);
  const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
  const int ch = mask ? 3 : 1;
  std::vector<unsigned char> px(static_cast<std::size_t>(nx * ny * ch));
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x) {
      const auto g = static_cast<unsigned char>(std::lround((vol.at(x, y, z) - lo) * scale));
      const std::size_t k = static_cast<std::size_t>((y * nx + x) * ch);
      if (!mask) {
        px[k] = g;
        continue;
      }
      const bool on = mask->at(x, y, z) > 0.5;
      px[k] = on ? static_cast<unsigned char>(std::min(255, g / 2 + 128)) : g;
      px[k + 1] = on ? static_cast<unsigned char>(g / 2) : g;
      px[k + 2] = on ? static_cast<unsigned char>(g / 2) : g;
    }
  write(path, nx, ny, ch, px);
}

}  // namespace meanspace::png
