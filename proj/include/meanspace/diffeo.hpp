#pragma once

// Diffeomorphic transforms from stationary velocity fields.
//
// A transform stores a displacement u with T(x) = x + u(x). exp(v) is
// computed by scaling and squaring: u0 = v / 2^s followed by s
// self-compositions u_{k+1}(x) = u_k(x) + u_k(x + u_k(x)). Inverses come from
// integrating -v. Reverse-mode gradients replay the squaring recursion from
// a tape of the intermediate u_k.

#include <cmath>
#include <span>
#include <vector>

#include "meanspace/error.hpp"
#include "meanspace/parallel.hpp"
#include "meanspace/volume.hpp"

namespace meanspace {

enum class Direction { forward, inverse, composite };

struct Transform {
  VectorField disp;
  Direction direction = Direction::forward;

  const GridSpec& grid() const { return disp.grid; }
};

struct IntegrationConfig {
  int squaring_steps = 6;

  void validate() const {
    if (squaring_steps < 0 || squaring_steps > 12)
      throw Error(ErrorCode::config, "squaring_steps", "squaring_steps must be in [0, 12]");
  }
};

// Intermediate displacements u_0 .. u_{s-1} of one integration.
struct IntegrationTape {
  std::vector<VectorField> steps;
  int squaring_steps = -1;
  bool negated = false;  // true when the tape integrated -v

  bool empty() const { return squaring_steps < 0; }
};

namespace detail {

// y(x) = a_disp(x) + b(x + a_disp(x)) evaluated for every voxel x, i.e. the
// displacement of b o a. Used for both squaring and general composition.
inline VectorField compose_disp(const VectorField& outer, const VectorField& inner) {
  const GridSpec& g = inner.grid;
  VectorField out(g);
  const double* ud = inner.data.data();
  const double* od = outer.data.data();
  double* res = out.data.data();
  const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
  parallel_for(nz, [&](std::ptrdiff_t z) {
    for (int y = 0; y < ny; ++y) {
      std::ptrdiff_t i = g.index(0, y, static_cast<int>(z));
      for (int x = 0; x < nx; ++x, ++i) {
        const double* u = ud + 3 * i;
        const Vec3 p{x + u[0], y + u[1], static_cast<double>(z) + u[2]};
        const Cell c = locate(g, p);
        const auto w = corner_weights(c);
        const auto o = corner_offsets(c);
        double s0 = 0.0, s1 = 0.0, s2 = 0.0;
        for (int k = 0; k < 8; ++k) {
          const double* f = od + 3 * (c.base + o[k]);
          s0 += w[k] * f[0];
          s1 += w[k] * f[1];
          s2 += w[k] * f[2];
        }
        res[3 * i] = u[0] + s0;
        res[3 * i + 1] = u[1] + s1;
        res[3 * i + 2] = u[2] + s2;
      }
    }
  });
  return out;
}

// Adjoint of y = compose_disp(u, u) with respect to u, given dL/dy.
inline VectorField squaring_adjoint(const VectorField& u, const VectorField& gy) {
  const GridSpec& g = u.grid;
  VectorField gu(g);
  const double* ud = u.data.data();
  const double* gd = gy.data.data();
  double* out = gu.data.data();
  const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
  // Pass 1 (gather): identity path plus the dependence of the sample
  // location on u(x).
  parallel_for(nz, [&](std::ptrdiff_t z) {
    for (int y = 0; y < ny; ++y) {
      std::ptrdiff_t i = g.index(0, y, static_cast<int>(z));
      for (int x = 0; x < nx; ++x, ++i) {
        const double* ux = ud + 3 * i;
        const double* gx = gd + 3 * i;
        const Vec3 p{x + ux[0], y + ux[1], static_cast<double>(z) + ux[2]};
        const Cell c = locate(g, p);
        // Jacobian of the interpolated field at p, all three components at once.
        const auto o = corner_offsets(c);
        const double ux_ = 1.0 - c.tx, uy_ = 1.0 - c.ty, uz_ = 1.0 - c.tz;
        const double wyz[4] = {uy_ * uz_, c.ty * uz_, uy_ * c.tz, c.ty * c.tz};
        const double wxz[4] = {ux_ * uz_, c.tx * uz_, ux_ * c.tz, c.tx * c.tz};
        const double wxy[4] = {ux_ * uy_, c.tx * uy_, ux_ * c.ty, c.tx * c.ty};
        Vec3 acc{gx[0], gx[1], gx[2]};
        for (int comp = 0; comp < 3; ++comp) {
          double v[8];
          for (int k = 0; k < 8; ++k) v[k] = ud[3 * (c.base + o[k]) + comp];
          const double gc = gx[comp];
          if (c.gx)
            acc[0] += gc * (wyz[0] * (v[1] - v[0]) + wyz[1] * (v[3] - v[2]) + wyz[2] * (v[5] - v[4]) +
                            wyz[3] * (v[7] - v[6]));
          if (c.gy)
            acc[1] += gc * (wxz[0] * (v[2] - v[0]) + wxz[1] * (v[3] - v[1]) + wxz[2] * (v[6] - v[4]) +
                            wxz[3] * (v[7] - v[5]));
          if (c.gz)
            acc[2] += gc * (wxy[0] * (v[4] - v[0]) + wxy[1] * (v[5] - v[1]) + wxy[2] * (v[6] - v[2]) +
                            wxy[3] * (v[7] - v[3]));
        }
        out[3 * i] = acc[0];
        out[3 * i + 1] = acc[1];
        out[3 * i + 2] = acc[2];
      }
    }
  });
  // Pass 2 (scatter): dependence of the sampled values on u at the cell
  // corners. Kept serial so the accumulation order is fixed.
  for (int z = 0; z < nz; ++z) {
    for (int y = 0; y < ny; ++y) {
      std::ptrdiff_t i = g.index(0, y, z);
      for (int x = 0; x < nx; ++x, ++i) {
        const double* ux = ud + 3 * i;
        const double* gx = gd + 3 * i;
        const Vec3 p{x + ux[0], y + ux[1], z + ux[2]};
        const Cell c = locate(g, p);
        const auto w = corner_weights(c);
        const auto o = corner_offsets(c);
        for (int k = 0; k < 8; ++k) {
          double* t = out + 3 * (c.base + o[k]);
          t[0] += w[k] * gx[0];
          t[1] += w[k] * gx[1];
          t[2] += w[k] * gx[2];
        }
      }
    }
  }
  return gu;
}

inline Transform integrate_scaled(const VectorField& v, double sign, const IntegrationConfig& cfg,
                                  IntegrationTape* tape, Direction dir) {
  cfg.validate();
  const double scale = sign / std::ldexp(1.0, cfg.squaring_steps);
  VectorField u(v.grid);
  for (std::size_t k = 0; k < u.data.size(); ++k) u.data[k] = v.data[k] * scale;
  if (tape) {
    tape->steps.clear();
    tape->squaring_steps = cfg.squaring_steps;
    tape->negated = sign < 0.0;
  }
  for (int s = 0; s < cfg.squaring_steps; ++s) {
    VectorField next = compose_disp(u, u);
    if (tape) tape->steps.push_back(std::move(u));
    u = std::move(next);
  }
  return {std::move(u), dir};
}

}  // namespace detail

// exp(v) by scaling and squaring. If `tape` is given it receives the
// intermediates needed by backprop_integrate.
inline Transform integrate_svf(const VectorField& v, const IntegrationConfig& cfg = {},
                               IntegrationTape* tape = nullptr) {
  return detail::integrate_scaled(v, 1.0, cfg, tape, Direction::forward);
}

// exp(-v).
inline Transform invert(const VectorField& v, const IntegrationConfig& cfg = {},
                        IntegrationTape* tape = nullptr) {
  return detail::integrate_scaled(v, -1.0, cfg, tape, Direction::inverse);
}

// c = a o b, i.e. c(x) = a(b(x)).
inline Transform compose(const Transform& a, const Transform& b) {
  require_same_grid(a.grid(), b.grid(), "transform");
  return {detail::compose_disp(a.disp, b.disp), Direction::composite};
}

inline Transform identity_transform(const GridSpec& g) { return {VectorField(g), Direction::forward}; }

// out(x) = vol(x + u(x)).
inline Volume warp_volume(const Volume& vol, const Transform& t) {
  require_same_grid(vol.grid, t.grid(), "volume");
  const GridSpec& g = vol.grid;
  Volume out(g);
  const double* ud = t.disp.data.data();
  const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
  parallel_for(nz, [&](std::ptrdiff_t z) {
    for (int y = 0; y < ny; ++y) {
      std::ptrdiff_t i = g.index(0, y, static_cast<int>(z));
      for (int x = 0; x < nx; ++x, ++i) {
        const double* u = ud + 3 * i;
        const Vec3 p{x + u[0], y + u[1], static_cast<double>(z) + u[2]};
        out.data[static_cast<std::size_t>(i)] = detail::interp(vol.data.data(), detail::locate(g, p));
      }
    }
  });
  return out;
}

// Trilinear warp of label probabilities; the result is probabilistic.
inline LabelMap warp_labels(const LabelMap& lab, const Transform& t) {
  Volume tmp(lab.grid);
  tmp.data = lab.data;
  Volume w = warp_volume(tmp, t);
  LabelMap out(lab.grid, LabelKind::probabilistic);
  for (std::size_t i = 0; i < w.data.size(); ++i) out.data[i] = std::clamp(w.data[i], 0.0, 1.0);
  return out;
}

// dL/du for L = sum_x upstream(x) * warp_volume(vol, t)(x).
inline VectorField backprop_warp(const Volume& vol, const Transform& t, const Volume& upstream) {
  require_same_grid(vol.grid, t.grid(), "volume");
  require_same_grid(vol.grid, upstream.grid, "upstream");
  const GridSpec& g = vol.grid;
  VectorField out(g);
  const double* ud = t.disp.data.data();
  const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
  parallel_for(nz, [&](std::ptrdiff_t z) {
    for (int y = 0; y < ny; ++y) {
      std::ptrdiff_t i = g.index(0, y, static_cast<int>(z));
      for (int x = 0; x < nx; ++x, ++i) {
        const double up = upstream.data[static_cast<std::size_t>(i)];
        if (up == 0.0) continue;
        const double* u = ud + 3 * i;
        const Vec3 p{x + u[0], y + u[1], static_cast<double>(z) + u[2]};
        Vec3 d;
        detail::interp_grad(vol.data.data(), detail::locate(g, p), d);
        out.data[static_cast<std::size_t>(3 * i)] = up * d[0];
        out.data[static_cast<std::size_t>(3 * i + 1)] = up * d[1];
        out.data[static_cast<std::size_t>(3 * i + 2)] = up * d[2];
      }
    }
  });
  return out;
}

// Gradient with respect to v of a loss whose gradient with respect to the
// integrated displacement is `upstream`. For a tape recorded by invert()
// the result is still the gradient with respect to v (not -v).
inline VectorField backprop_integrate(const IntegrationTape& tape, const VectorField& upstream) {
  if (tape.empty())
    throw Error(ErrorCode::usage, "tape", "backprop_integrate requires a tape from the forward pass");
  if (static_cast<int>(tape.steps.size()) != tape.squaring_steps)
    throw Error(ErrorCode::usage, "tape", "tape is incomplete");
  VectorField g = upstream;
  for (int k = tape.squaring_steps - 1; k >= 0; --k) {
    const VectorField& u = tape.steps[static_cast<std::size_t>(k)];
    require_same_grid(u.grid, g.grid, "upstream");
    g = detail::squaring_adjoint(u, g);
  }
  const double scale = (tape.negated ? -1.0 : 1.0) / std::ldexp(1.0, tape.squaring_steps);
  for (double& x : g.data) x *= scale;
  return g;
}

// Max and mean Euclidean norm of a displacement field over an optional
// interior box (margin voxels excluded on every face).
struct DisplacementStats {
  double max_norm = 0.0;
  double mean_norm = 0.0;
};

inline DisplacementStats displacement_stats(const VectorField& u, int margin = 0) {
  const GridSpec& g = u.grid;
  DisplacementStats s;
  double sum = 0.0;
  std::ptrdiff_t count = 0;
  for (int z = margin; z < g.dims[2] - margin; ++z)
    for (int y = margin; y < g.dims[1] - margin; ++y)
      for (int x = margin; x < g.dims[0] - margin; ++x) {
        const Vec3 d = u.at(g.index(x, y, z));
        const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        s.max_norm = std::max(s.max_norm, n);
        sum += n;
        ++count;
      }
  if (count > 0) s.mean_norm = sum / static_cast<double>(count);
  return s;
}

}  // namespace meanspace
