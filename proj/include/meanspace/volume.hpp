#pragma once

// Grid-aligned volumetric data and trilinear sampling.
//
// Layout: voxel (x, y, z) lives at index x + nx * (y + ny * z). Vector
// fields interleave their three components per voxel. All coordinates are
// in voxel units; sampling outside the grid clamps to the nearest border
// value.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "meanspace/error.hpp"
#include "meanspace/parallel.hpp"

namespace meanspace {

using Vec3 = std::array<double, 3>;

struct GridSpec {
  std::array<int, 3> dims{2, 2, 2};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};

  GridSpec() = default;
  GridSpec(int nx, int ny, int nz, Vec3 sp = {1.0, 1.0, 1.0}) : dims{nx, ny, nz}, spacing(sp) {
    validate();
  }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (dims[a] < 2)
        throw Error(ErrorCode::invalid_argument, "dims", "grid dimension must be >= 2");
      if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
        throw Error(ErrorCode::invalid_argument, "spacing", "grid spacing must be positive");
    }
  }

  std::ptrdiff_t voxels() const {
    return std::ptrdiff_t{dims[0]} * dims[1] * dims[2];
  }
  std::ptrdiff_t index(int x, int y, int z) const {
    return x + std::ptrdiff_t{dims[0]} * (y + std::ptrdiff_t{dims[1]} * z);
  }
  double voxel_volume() const { return spacing[0] * spacing[1] * spacing[2]; }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

inline void require_same_grid(const GridSpec& a, const GridSpec& b, const char* what = "grid") {
  if (a.dims != b.dims || a.spacing != b.spacing)
    throw Error(ErrorCode::grid_mismatch, what, "inputs are defined on different grids");
}

struct Volume {
  GridSpec grid;
  std::vector<double> data;

  Volume() = default;
  explicit Volume(const GridSpec& g, double fill = 0.0)
      : grid(g), data(static_cast<std::size_t>(g.voxels()), fill) {}

  std::ptrdiff_t size() const { return static_cast<std::ptrdiff_t>(data.size()); }
  double& at(int x, int y, int z) { return data[static_cast<std::size_t>(grid.index(x, y, z))]; }
  double at(int x, int y, int z) const { return data[static_cast<std::size_t>(grid.index(x, y, z))]; }
};

struct VectorField {
  GridSpec grid;
  std::vector<double> data;

  VectorField() = default;
  explicit VectorField(const GridSpec& g, double fill = 0.0)
      : grid(g), data(static_cast<std::size_t>(3 * g.voxels()), fill) {}
  VectorField(const GridSpec& g, const Vec3& constant) : VectorField(g) {
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = constant[i % 3];
  }

  std::ptrdiff_t voxels() const { return grid.voxels(); }
  Vec3 at(std::ptrdiff_t voxel) const {
    const double* p = &data[static_cast<std::size_t>(3 * voxel)];
    return {p[0], p[1], p[2]};
  }
  void set(std::ptrdiff_t voxel, const Vec3& v) {
    double* p = &data[static_cast<std::size_t>(3 * voxel)];
    p[0] = v[0];
    p[1] = v[1];
    p[2] = v[2];
  }
};

enum class LabelKind : std::uint8_t { binary, probabilistic };

struct LabelMap {
  GridSpec grid;
  std::vector<double> data;
  LabelKind kind = LabelKind::binary;

  LabelMap() = default;
  explicit LabelMap(const GridSpec& g, LabelKind k = LabelKind::binary, double fill = 0.0)
      : grid(g), data(static_cast<std::size_t>(g.voxels()), fill), kind(k) {}

  std::ptrdiff_t size() const { return static_cast<std::ptrdiff_t>(data.size()); }
  double& at(int x, int y, int z) { return data[static_cast<std::size_t>(grid.index(x, y, z))]; }
  double at(int x, int y, int z) const { return data[static_cast<std::size_t>(grid.index(x, y, z))]; }

  // Throws io_domain if a value violates the kind's range.
  void validate() const {
    for (double v : data) {
      const bool ok = kind == LabelKind::binary ? (v == 0.0 || v == 1.0) : (v >= 0.0 && v <= 1.0);
      if (!ok)
        throw Error(ErrorCode::io_domain, "label",
                    "label value " + std::to_string(v) + " outside the label domain");
    }
  }
};

inline Volume as_volume(const LabelMap& lab) {
  Volume v(lab.grid);
  v.data = lab.data;
  return v;
}

namespace detail {

// Clamp-to-edge cell lookup along one axis. `slope` is false when the
// coordinate is outside [0, n-1], where the clamped sample is constant.
struct AxisCell {
  int i0;
  double t;
  bool slope;
};

inline AxisCell axis_cell(double p, int n) {
  const double last = static_cast<double>(n - 1);
  const bool slope = p >= 0.0 && p <= last;
  // NaN and negative coordinates clamp to 0.
  const double pc = p >= 0.0 ? (p < last ? p : last) : 0.0;
  int i0 = static_cast<int>(pc);
  i0 = i0 < n - 2 ? i0 : n - 2;
  return {i0, pc - i0, slope};
}

struct Cell {
  std::ptrdiff_t base;            // index of the (i0, j0, k0) corner
  std::ptrdiff_t sx, sy, sz;      // index strides to the +1 corner per axis
  double tx, ty, tz;
  bool gx, gy, gz;
};

inline Cell locate(const GridSpec& g, const Vec3& p) {
  const AxisCell cx = axis_cell(p[0], g.dims[0]);
  const AxisCell cy = axis_cell(p[1], g.dims[1]);
  const AxisCell cz = axis_cell(p[2], g.dims[2]);
  const std::ptrdiff_t nx = g.dims[0];
  const std::ptrdiff_t nxy = nx * g.dims[1];
  return {cx.i0 + nx * cy.i0 + nxy * cz.i0, 1, nx, nxy, cx.t, cy.t, cz.t, cx.slope, cy.slope, cz.slope};
}

// Trilinear corner weights in the order (000, 100, 010, 110, 001, 101, 011, 111).
inline std::array<double, 8> corner_weights(const Cell& c) {
  const double ux = 1.0 - c.tx, uy = 1.0 - c.ty, uz = 1.0 - c.tz;
  return {ux * uy * uz, c.tx * uy * uz, ux * c.ty * uz, c.tx * c.ty * uz,
          ux * uy * c.tz, c.tx * uy * c.tz, ux * c.ty * c.tz, c.tx * c.ty * c.tz};
}

inline std::array<std::ptrdiff_t, 8> corner_offsets(const Cell& c) {
  return {0, c.sx, c.sy, c.sx + c.sy, c.sz, c.sx + c.sz, c.sy + c.sz, c.sx + c.sy + c.sz};
}

inline double interp(const double* f, const Cell& c, std::ptrdiff_t stride = 1) {
  const auto w = corner_weights(c);
  const auto o = corner_offsets(c);
  double s = 0.0;
  for (int k = 0; k < 8; ++k) s += w[k] * f[(c.base + o[k]) * stride];
  return s;
}

// Value and spatial derivative of the trilinear interpolant of a scalar
// array with element stride `stride`.
inline double interp_grad(const double* f, const Cell& c, Vec3& grad, std::ptrdiff_t stride = 1) {
  const auto o = corner_offsets(c);
  double v[8];
  for (int k = 0; k < 8; ++k) v[k] = f[(c.base + o[k]) * stride];
  const double ux = 1.0 - c.tx, uy = 1.0 - c.ty, uz = 1.0 - c.tz;
  // Interpolate along x first.
  const double a00 = ux * v[0] + c.tx * v[1];
  const double a10 = ux * v[2] + c.tx * v[3];
  const double a01 = ux * v[4] + c.tx * v[5];
  const double a11 = ux * v[6] + c.tx * v[7];
  const double b0 = uy * a00 + c.ty * a10;
  const double b1 = uy * a01 + c.ty * a11;
  const double val = uz * b0 + c.tz * b1;
  if (c.gx) {
    const double d00 = v[1] - v[0], d10 = v[3] - v[2], d01 = v[5] - v[4], d11 = v[7] - v[6];
    grad[0] = uz * (uy * d00 + c.ty * d10) + c.tz * (uy * d01 + c.ty * d11);
  } else {
    grad[0] = 0.0;
  }
  grad[1] = c.gy ? uz * (a10 - a00) + c.tz * (a11 - a01) : 0.0;
  grad[2] = c.gz ? b1 - b0 : 0.0;
  return val;
}

}  // namespace detail

inline double sample_linear(const Volume& vol, const Vec3& p) {
  const detail::Cell c = detail::locate(vol.grid, p);
  return detail::interp(vol.data.data(), c);
}

struct ValueGradient {
  double value;
  Vec3 gradient;
};

// Interpolated value and its derivative with respect to the sample point.
// The derivative is that of the linear piece containing p (one-sided at
// cell faces) and zero along axes where p lies outside the grid.
inline ValueGradient sample_linear_gradient(const Volume& vol, const Vec3& p) {
  const detail::Cell c = detail::locate(vol.grid, p);
  ValueGradient out{};
  out.value = detail::interp_grad(vol.data.data(), c, out.gradient);
  return out;
}

inline Vec3 sample_linear(const VectorField& f, const Vec3& p) {
  const detail::Cell c = detail::locate(f.grid, p);
  const double* d = f.data.data();
  return {detail::interp(d, c, 3) , detail::interp(d + 1, c, 3), detail::interp(d + 2, c, 3)};
}

// Voxel coordinates of a linear index.
inline Vec3 voxel_position(const GridSpec& g, std::ptrdiff_t i) {
  const std::ptrdiff_t nx = g.dims[0], ny = g.dims[1];
  const std::ptrdiff_t x = i % nx;
  const std::ptrdiff_t y = (i / nx) % ny;
  const std::ptrdiff_t z = i / (nx * ny);
  return {static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
}

template <class T>
void require_same_grids(std::span<const T> items, const char* what = "fields") {
  if (items.empty())
    throw Error(ErrorCode::invalid_argument, what, "input list must not be empty");
  for (const auto& it : items) require_same_grid(items.front().grid, it.grid, what);
}

// Per-voxel arithmetic mean of a list of fields. The per-element sum is
// order-independent (see symmetric_sum).
inline VectorField field_mean(std::span<const VectorField> fields) {
  require_same_grids(fields);
  VectorField out(fields.front().grid);
  const std::size_t n = fields.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  const auto len = static_cast<std::ptrdiff_t>(out.data.size());
  if (n == 1) {
    out.data = fields.front().data;
    return out;
  }
  parallel_for(len, [&](std::ptrdiff_t k) {
    double buf[16];
    std::vector<double> heap;
    double* vals = buf;
    if (n > 16) {
      heap.resize(n);
      vals = heap.data();
    }
    for (std::size_t i = 0; i < n; ++i) vals[i] = fields[i].data[static_cast<std::size_t>(k)];
    out.data[static_cast<std::size_t>(k)] = symmetric_sum({vals, n}) * inv_n;
  });
  return out;
}

inline double max_abs(std::span<const double> values) {
  double m = 0.0;
  for (double v : values) m = std::max(m, std::abs(v));
  return m;
}

inline bool all_finite(std::span<const double> values) {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace meanspace
