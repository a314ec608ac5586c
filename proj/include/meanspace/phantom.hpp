#pragma once

// Synthetic longitudinal phantoms with known deformations.
//
// Each time-point t is the canonical structure resampled through an
// analytic map phi_t from native coordinates to canonical coordinates:
// a smooth random warp, then the inverse translation, then the inverse
// radial growth about the structure center. The returned ground truth is
// the displacement phi_t(x) - x.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "meanspace/error.hpp"
#include "meanspace/volume.hpp"

namespace meanspace {

enum class Structure { sphere, cshape };

inline const char* to_string(Structure s) { return s == Structure::sphere ? "sphere" : "cshape"; }

inline Structure parse_structure(const std::string& s) {
  if (s == "sphere") return Structure::sphere;
  if (s == "cshape" || s == "c-shape") return Structure::cshape;
  throw Error(ErrorCode::config, "structure", "unknown structure '" + s + "'");
}

struct TimePointDeformation {
  Vec3 translation{0.0, 0.0, 0.0};
  double growth = 1.0;           // radial scale of the structure
  double warp_amplitude = 0.0;   // max displacement of the smooth random warp
  std::uint64_t warp_seed = 0;
};

struct PhantomSpec {
  std::array<int, 3> dims{64, 64, 64};
  Vec3 spacing{1.0, 1.0, 1.0};
  Structure structure = Structure::sphere;
  std::optional<Vec3> center;    // default: grid center
  double radius = 8.0;           // sphere radius, or tube radius of the C-shape
  double arc_radius = 14.0;      // C-shape bend radius
  double arc_degrees = 270.0;    // C-shape angular extent
  double edge_width = 1.0;       // logistic edge width of the intensity profile
  double background = 0.2;
  double foreground = 0.8;
  double warp_smoothing = 4.0;   // Gaussian sigma (voxels) of the random warp
  std::vector<TimePointDeformation> timepoints{TimePointDeformation{}, TimePointDeformation{}};
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  static constexpr double kMaxAmplitude = 6.0;

  Vec3 resolved_center() const {
    if (center) return *center;
    return {0.5 * (dims[0] - 1), 0.5 * (dims[1] - 1), 0.5 * (dims[2] - 1)};
  }

  double structure_extent() const {
    return structure == Structure::sphere ? radius : arc_radius + radius;
  }

  void validate() const {
    GridSpec(dims[0], dims[1], dims[2], spacing);
    if (timepoints.empty()) throw Error(ErrorCode::config, "timepoints", "at least one time-point is required");
    if (!(radius > 0.0)) throw Error(ErrorCode::config, "radius", "radius must be positive");
    if (structure == Structure::cshape && !(arc_radius > radius))
      throw Error(ErrorCode::config, "arc_radius", "arc_radius must exceed the tube radius");
    if (!(edge_width > 0.0)) throw Error(ErrorCode::config, "edge_width", "edge_width must be positive");
    if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::config, "noise_sigma", "noise_sigma must be non-negative");
    for (std::size_t t = 0; t < timepoints.size(); ++t) {
      const auto& d = timepoints[t];
      const std::string tag = "timepoints[" + std::to_string(t) + "]";
      const double shift = std::sqrt(d.translation[0] * d.translation[0] + d.translation[1] * d.translation[1] +
                                     d.translation[2] * d.translation[2]);
      if (shift > kMaxAmplitude)
        throw Error(ErrorCode::config, tag + ".translation", "translation exceeds 6 voxels");
      if (!(d.growth > 0.0) || std::abs(d.growth - 1.0) * structure_extent() > kMaxAmplitude)
        throw Error(ErrorCode::config, tag + ".growth", "growth displaces the structure by more than 6 voxels");
      if (!(d.warp_amplitude >= 0.0) || d.warp_amplitude > kMaxAmplitude)
        throw Error(ErrorCode::config, tag + ".warp_amplitude", "warp amplitude must lie in [0, 6] voxels");
    }
  }
};

struct PhantomSeries {
  std::vector<Volume> images;
  std::vector<LabelMap> labels;
  std::vector<VectorField> ground_truth;  // native -> canonical displacement
};

namespace detail {

inline double signed_distance(const PhantomSpec& spec, const Vec3& p) {
  const Vec3 c = spec.resolved_center();
  const double dx = p[0] - c[0], dy = p[1] - c[1], dz = p[2] - c[2];
  if (spec.structure == Structure::sphere) return std::sqrt(dx * dx + dy * dy + dz * dz) - spec.radius;
  // Tube around a circular arc in the axial plane, opening towards -x.
  const double half = 0.5 * spec.arc_degrees * std::numbers::pi / 180.0;
  double theta = std::atan2(dy, dx);
  theta = std::clamp(theta, -half, half);
  const double qx = spec.arc_radius * std::cos(theta), qy = spec.arc_radius * std::sin(theta);
  const double ex = dx - qx, ey = dy - qy;
  return std::sqrt(ex * ex + ey * ey + dz * dz) - spec.radius;
}

inline void gaussian_smooth_axis(std::vector<double>& f, const GridSpec& g, int axis, double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double ks = 0.0;
  for (int i = -radius; i <= radius; ++i) ks += k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= ks;
  std::vector<double> out(f.size());
  const int n = g.dims[axis];
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x) {
        int pos[3] = {x, y, z};
        const int c = pos[axis];
        double s = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          pos[axis] = std::clamp(c + i, 0, n - 1);
          s += k[static_cast<std::size_t>(i + radius)] * f[static_cast<std::size_t>(g.index(pos[0], pos[1], pos[2]))];
        }
        out[static_cast<std::size_t>(g.index(x, y, z))] = s;
      }
  f.swap(out);
}

}  // namespace detail

// Gaussian-smoothed random vector field rescaled so that its largest
// voxel displacement equals `amplitude`.
inline VectorField smooth_random_field(const GridSpec& g, double amplitude, double sigma, std::uint64_t seed) {
  VectorField out(g);
  if (amplitude == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> comp[3];
  for (auto& c : comp) {
    c.resize(static_cast<std::size_t>(g.voxels()));
    for (double& v : c) v = normal(rng);
    for (int a = 0; a < 3; ++a) detail::gaussian_smooth_axis(c, g, a, sigma);
  }
  double peak = 0.0;
  for (std::size_t i = 0; i < comp[0].size(); ++i)
    peak = std::max(peak, std::sqrt(comp[0][i] * comp[0][i] + comp[1][i] * comp[1][i] + comp[2][i] * comp[2][i]));
  const double s = peak > 0.0 ? amplitude / peak : 0.0;
  for (std::size_t i = 0; i < comp[0].size(); ++i) out.set(static_cast<std::ptrdiff_t>(i), {s * comp[0][i], s * comp[1][i], s * comp[2][i]});
  return out;
}

inline PhantomSeries make_phantom_series(const PhantomSpec& spec) {
  spec.validate();
  const GridSpec g(spec.dims[0], spec.dims[1], spec.dims[2], spec.spacing);
  const Vec3 c = spec.resolved_center();
  PhantomSeries out;
  for (std::size_t t = 0; t < spec.timepoints.size(); ++t) {
    const TimePointDeformation& d = spec.timepoints[t];
    const VectorField warp = smooth_random_field(g, d.warp_amplitude, spec.warp_smoothing, d.warp_seed);
    Volume img(g);
    LabelMap lab(g, LabelKind::binary);
    VectorField gt(g);
    for (std::ptrdiff_t i = 0; i < g.voxels(); ++i) {
      const Vec3 x = voxel_position(g, i);
      const Vec3 w = warp.at(i);
      Vec3 p;
      for (int a = 0; a < 3; ++a) {
        const double q = x[a] + w[a] - d.translation[a];
        p[a] = c[a] + (q - c[a]) / d.growth;
      }
      const double sd = detail::signed_distance(spec, p);
      img.data[static_cast<std::size_t>(i)] =
          spec.background + (spec.foreground - spec.background) / (1.0 + std::exp(sd / spec.edge_width));
      lab.data[static_cast<std::size_t>(i)] = sd < 0.0 ? 1.0 : 0.0;
      gt.set(i, {p[0] - x[0], p[1] - x[1], p[2] - x[2]});
    }
    if (spec.noise_sigma > 0.0) {
      std::mt19937_64 rng(spec.seed * 1000003ULL + t);
      std::normal_distribution<double> normal(0.0, spec.noise_sigma);
      for (double& v : img.data) v += normal(rng);
    }
    out.images.push_back(std::move(img));
    out.labels.push_back(std::move(lab));
    out.ground_truth.push_back(std::move(gt));
  }
  return out;
}

// Centroid of a binary mask in voxel coordinates.
inline Vec3 mask_centroid(const LabelMap& lab) {
  Vec3 s{0.0, 0.0, 0.0};
  double n = 0.0;
  for (std::ptrdiff_t i = 0; i < lab.size(); ++i) {
    const double w = lab.data[static_cast<std::size_t>(i)];
    if (w <= 0.0) continue;
    const Vec3 p = voxel_position(lab.grid, i);
    for (int a = 0; a < 3; ++a) s[a] += w * p[a];
    n += w;
  }
  if (n == 0.0) throw Error(ErrorCode::empty_mask, "mask", "centroid of an empty mask");
  for (double& v : s) v /= n;
  return s;
}

}  // namespace meanspace
