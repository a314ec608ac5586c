#pragma once

// Loss terms of the group-wise (mean-space) and fixed-reference objectives,
// the constraint projection, and their gradients with respect to the
// velocity fields. All spatial averages are means over voxels.

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "meanspace/diffeo.hpp"
#include "meanspace/error.hpp"
#include "meanspace/parallel.hpp"
#include "meanspace/volume.hpp"

namespace meanspace {

struct LossWeights {
  double lambda1 = 0.01;  // diffusion regularizer (group mode)
  double lambda2 = 0.0;   // segmentation term (group mode)
  double alpha = 10.0;    // intensity term (fixed mode)
  double beta = 0.1;      // diffusion regularizer (fixed mode)
  double gamma = 1.0;     // label correspondence term (fixed mode)
  double w = 3.0;         // foreground weight of the inner-product metric

  void validate() const {
    const std::pair<const char*, double> items[] = {{"lambda1", lambda1}, {"lambda2", lambda2},
                                                    {"alpha", alpha},     {"beta", beta},
                                                    {"gamma", gamma},     {"w", w}};
    for (const auto& [name, value] : items)
      if (!(value >= 0.0) || !std::isfinite(value))
        throw Error(ErrorCode::config, name, std::string(name) + " must be finite and non-negative");
  }
};

struct LossReport {
  double reg = 0.0;
  double def = 0.0;
  double seg = 0.0;
  double cons = 0.0;  // fixed mode only
  double total = 0.0;
  std::vector<double> per_image;  // intensity residual of each image
};

// ---------------------------------------------------------------------------
// Constraint projection

// v_i - mean(v) per element. The centering is repeated per element while it
// strictly shrinks the compensated residual sum; stopping depends only on
// the current values, so projecting a projected set changes nothing.
inline std::vector<VectorField> project_constraint(std::span<const VectorField> fields) {
  require_same_grids(fields);
  const std::size_t n = fields.size();
  std::vector<VectorField> out;
  out.reserve(n);
  std::vector<const double*> src(n);
  std::vector<double*> dst(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.emplace_back(fields[i].grid);
    src[i] = fields[i].data.data();
    dst[i] = out[i].data.data();
  }
  const auto len = static_cast<std::ptrdiff_t>(out.front().data.size());
  const double inv_n = 1.0 / static_cast<double>(n);
  parallel_for(len, [&](std::ptrdiff_t k) {
    std::vector<double> heap;
    double buf[48];
    double* vals = buf;
    double* next = buf + 16;
    double* tmp = buf + 32;
    if (n > 16) {
      heap.resize(3 * n);
      vals = heap.data();
      next = vals + n;
      tmp = next + n;
    }
    auto residual = [&](const double* x) {
      for (std::size_t i = 0; i < n; ++i) tmp[i] = x[i];
      return std::abs(symmetric_sum_compensated({tmp, n}));
    };
    for (std::size_t i = 0; i < n; ++i) vals[i] = src[i][k];
    double r = -1.0;
    for (int pass = 0; pass < 64; ++pass) {
      for (std::size_t i = 0; i < n; ++i) tmp[i] = vals[i];
      const double m = symmetric_sum({tmp, n}) * inv_n;
      if (m == 0.0) break;
      for (std::size_t i = 0; i < n; ++i) next[i] = vals[i] - m;
      if (r < 0.0) r = residual(vals);
      const double rn = residual(next);
      if (!(rn < r)) break;
      std::swap(vals, next);
      r = rn;
    }
    for (std::size_t i = 0; i < n; ++i) dst[i][k] = vals[i];
  });
  return out;
}

// Adjoint of the centering map: g_i - mean(g).
inline std::vector<VectorField> center_gradients(std::span<const VectorField> grads) {
  const VectorField mean = field_mean(grads);
  std::vector<VectorField> out(grads.begin(), grads.end());
  for (auto& g : out)
    for (std::size_t k = 0; k < g.data.size(); ++k) g.data[k] -= mean.data[k];
  return out;
}

// ---------------------------------------------------------------------------
// Intensity term

inline Volume implicit_mean_image(std::span<const Volume> warped) {
  require_same_grids(warped, "images");
  const std::size_t n = warped.size();
  Volume out(warped.front().grid);
  const double inv_n = 1.0 / static_cast<double>(n);
  parallel_for(out.size(), [&](std::ptrdiff_t kk) {
    const auto k = static_cast<std::size_t>(kk);
    double buf[16];
    std::vector<double> heap;
    double* vals = buf;
    if (n > 16) {
      heap.resize(n);
      vals = heap.data();
    }
    for (std::size_t i = 0; i < n; ++i) vals[i] = warped[i].data[k];
    out.data[k] = symmetric_sum({vals, n}) * inv_n;
  });
  return out;
}

inline double mean_squared_difference(const Volume& a, const Volume& b) {
  require_same_grid(a.grid, b.grid, "images");
  const double s = reduce_sum(a.size(), [&](std::ptrdiff_t i) {
    const double d = a.data[static_cast<std::size_t>(i)] - b.data[static_cast<std::size_t>(i)];
    return d * d;
  });
  return s / static_cast<double>(a.size());
}

struct RegTerm {
  double value = 0.0;
  std::vector<double> per_image;
  Volume mean_image;
  std::vector<Volume> gradient;  // d value / d warped_i
};

inline RegTerm reg_term(std::span<const Volume> warped, bool with_gradient) {
  if (warped.size() < 2)
    throw Error(ErrorCode::invalid_argument, "images", "intensity term needs at least two images");
  RegTerm t;
  t.mean_image = implicit_mean_image(warped);
  const std::size_t n = warped.size();
  t.per_image.resize(n);
  for (std::size_t i = 0; i < n; ++i) t.per_image[i] = mean_squared_difference(t.mean_image, warped[i]);
  std::vector<double> tmp = t.per_image;
  t.value = symmetric_sum(tmp) / static_cast<double>(n);
  if (with_gradient) {
    const double scale = 2.0 / (static_cast<double>(n) * static_cast<double>(t.mean_image.size()));
    for (std::size_t i = 0; i < n; ++i) {
      Volume g(t.mean_image.grid);
      for (std::size_t k = 0; k < g.data.size(); ++k)
        g.data[k] = scale * (warped[i].data[k] - t.mean_image.data[k]);
      t.gradient.push_back(std::move(g));
    }
  }
  return t;
}

// (1/n) sum_i mean_x (Ibar - I_i(T_i))^2.
inline double loss_reg(std::span<const Volume> warped) { return reg_term(warped, false).value; }

// ---------------------------------------------------------------------------
// Diffusion regularizer
//
// Forward differences scaled by spacing; the difference across the far
// boundary is zero. Per field: sum over voxels, components and axes of the
// squared differences divided by 3 * voxels.

inline double diffusion_energy(const VectorField& v) {
  const GridSpec& g = v.grid;
  const int nx = g.dims[0], ny = g.dims[1];
  const std::ptrdiff_t stride[3] = {1, nx, std::ptrdiff_t{nx} * ny};
  const double inv_h[3] = {1.0 / g.spacing[0], 1.0 / g.spacing[1], 1.0 / g.spacing[2]};
  const double s = reduce_sum(g.voxels(), [&](std::ptrdiff_t i) {
    const Vec3 pos = voxel_position(g, i);
    double acc = 0.0;
    for (int a = 0; a < 3; ++a) {
      if (static_cast<int>(pos[a]) >= g.dims[a] - 1) continue;
      const double* p = &v.data[static_cast<std::size_t>(3 * i)];
      const double* q = &v.data[static_cast<std::size_t>(3 * (i + stride[a]))];
      for (int c = 0; c < 3; ++c) {
        const double d = (q[c] - p[c]) * inv_h[a];
        acc += d * d;
      }
    }
    return acc;
  });
  return s / (3.0 * static_cast<double>(g.voxels()));
}

// d diffusion_energy / d v, multiplied by `scale`.
inline VectorField diffusion_gradient(const VectorField& v, double scale = 1.0) {
  const GridSpec& g = v.grid;
  VectorField out(g);
  const int nx = g.dims[0], ny = g.dims[1];
  const std::ptrdiff_t stride[3] = {1, nx, std::ptrdiff_t{nx} * ny};
  const double inv_h2[3] = {1.0 / (g.spacing[0] * g.spacing[0]), 1.0 / (g.spacing[1] * g.spacing[1]),
                            1.0 / (g.spacing[2] * g.spacing[2])};
  const double k = scale * 2.0 / (3.0 * static_cast<double>(g.voxels()));
  parallel_for(g.voxels(), [&](std::ptrdiff_t i) {
    const Vec3 pos = voxel_position(g, i);
    const double* p = &v.data[static_cast<std::size_t>(3 * i)];
    double acc[3] = {0.0, 0.0, 0.0};
    for (int a = 0; a < 3; ++a) {
      const int xa = static_cast<int>(pos[a]);
      if (xa < g.dims[a] - 1) {
        const double* q = p + 3 * stride[a];
        for (int c = 0; c < 3; ++c) acc[c] -= (q[c] - p[c]) * inv_h2[a];
      }
      if (xa > 0) {
        const double* q = p - 3 * stride[a];
        for (int c = 0; c < 3; ++c) acc[c] += (p[c] - q[c]) * inv_h2[a];
      }
    }
    double* o = &out.data[static_cast<std::size_t>(3 * i)];
    for (int c = 0; c < 3; ++c) o[c] = k * acc[c];
  });
  return out;
}

// (1/n) sum_i ||grad v_i||^2.
inline double loss_def(std::span<const VectorField> fields) {
  require_same_grids(fields);
  std::vector<double> e;
  e.reserve(fields.size());
  for (const auto& f : fields) e.push_back(diffusion_energy(f));
  return symmetric_sum(e) / static_cast<double>(fields.size());
}

// ---------------------------------------------------------------------------
// Weighted inner-product label metric

// -mean_x [w S P + (1 - S)(1 - P)] for one label/prediction pair.
inline double inner_product_metric(const LabelMap& label, const LabelMap& pred, double w) {
  require_same_grid(label.grid, pred.grid, "labels");
  const double s = reduce_sum(label.size(), [&](std::ptrdiff_t i) {
    const double sl = label.data[static_cast<std::size_t>(i)];
    const double p = pred.data[static_cast<std::size_t>(i)];
    return w * sl * p + (1.0 - sl) * (1.0 - p);
  });
  return -s / static_cast<double>(label.size());
}

// d inner_product_metric / d pred, multiplied by `scale`.
inline Volume inner_product_gradient(const LabelMap& label, double w, double scale = 1.0) {
  Volume g(label.grid);
  const double k = -scale / static_cast<double>(label.size());
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = k * ((w + 1.0) * label.data[i] - 1.0);
  return g;
}

// -(1/n) sum_i mean_x [w S_i Sbar(T_i^-1) + (1 - S_i)(1 - Sbar(T_i^-1))].
inline double loss_seg(std::span<const LabelMap> labels, std::span<const LabelMap> sbar_warped, double w) {
  if (labels.size() != sbar_warped.size() || labels.empty())
    throw Error(ErrorCode::count_mismatch, "labels", "labels and predictions differ in count");
  std::vector<double> terms;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require_same_grid(labels[i].grid, sbar_warped[i].grid, "labels");
    terms.push_back(inner_product_metric(labels[i], sbar_warped[i], w));
  }
  return symmetric_sum(terms) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Group objective: L = L_reg + lambda1 L_def + lambda2 L_seg, evaluated on
// projected fields.

struct GroupProblem {
  std::span<const Volume> images;
  std::span<const LabelMap> labels;   // native labels; empty disables L_seg
  const LabelMap* sbar = nullptr;     // mean-space segmentation, held constant
  LossWeights weights;
  IntegrationConfig integration;
};

struct GroupEvaluation {
  LossReport report;
  std::vector<VectorField> projected;
  std::vector<Transform> forward;
  Volume mean_image;
  std::vector<VectorField> gradient;  // with respect to the raw (pre-projection) fields
};

inline GroupEvaluation loss_total_group(const GroupProblem& prob, std::span<const VectorField> raw_fields,
                                        bool with_gradient) {
  const std::size_t n = prob.images.size();
  if (n < 2) throw Error(ErrorCode::invalid_argument, "images", "group registration needs n >= 2");
  if (raw_fields.size() != n)
    throw Error(ErrorCode::count_mismatch, "fields", "one velocity field per image is required");
  require_same_grids(prob.images, "images");
  require_same_grid(prob.images.front().grid, raw_fields.front().grid, "fields");
  const bool seg_on = !prob.labels.empty() && prob.sbar != nullptr;
  if (!prob.labels.empty() && prob.labels.size() != n)
    throw Error(ErrorCode::count_mismatch, "labels", "one label map per image is required");

  GroupEvaluation ev;
  ev.projected = project_constraint(raw_fields);
  std::vector<IntegrationTape> tapes(n);
  std::vector<Volume> warped;
  warped.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ev.forward.push_back(integrate_svf(ev.projected[i], prob.integration, with_gradient ? &tapes[i] : nullptr));
    warped.push_back(warp_volume(prob.images[i], ev.forward[i]));
  }
  RegTerm reg = reg_term(warped, with_gradient);
  ev.report.reg = reg.value;
  ev.report.per_image = reg.per_image;
  ev.mean_image = std::move(reg.mean_image);
  ev.report.def = loss_def(ev.projected);

  const LossWeights& wts = prob.weights;
  std::vector<IntegrationTape> inv_tapes(seg_on ? n : 0);
  std::vector<Transform> inverse;
  std::vector<LabelMap> preds;
  if (seg_on) {
    for (std::size_t i = 0; i < n; ++i) {
      const bool tape = with_gradient && wts.lambda2 > 0.0;
      inverse.push_back(invert(ev.projected[i], prob.integration, tape ? &inv_tapes[i] : nullptr));
      preds.push_back(warp_labels(*prob.sbar, inverse.back()));
    }
    ev.report.seg = loss_seg(prob.labels, preds, wts.w);
  }
  ev.report.total = ev.report.reg + wts.lambda1 * ev.report.def + wts.lambda2 * ev.report.seg;

  if (!with_gradient) return ev;
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<VectorField> grads;
  grads.reserve(n);
  const Volume sbar_vol = seg_on ? as_volume(*prob.sbar) : Volume{};
  for (std::size_t i = 0; i < n; ++i) {
    VectorField gu = backprop_warp(prob.images[i], ev.forward[i], reg.gradient[i]);
    VectorField gv = backprop_integrate(tapes[i], gu);
    if (wts.lambda1 > 0.0) {
      const VectorField gd = diffusion_gradient(ev.projected[i], wts.lambda1 * inv_n);
      for (std::size_t k = 0; k < gv.data.size(); ++k) gv.data[k] += gd.data[k];
    }
    if (seg_on && wts.lambda2 > 0.0) {
      const Volume gp = inner_product_gradient(prob.labels[i], wts.w, wts.lambda2 * inv_n);
      const VectorField gui = backprop_warp(sbar_vol, inverse[i], gp);
      const VectorField gvi = backprop_integrate(inv_tapes[i], gui);
      for (std::size_t k = 0; k < gv.data.size(); ++k) gv.data[k] += gvi.data[k];
    }
    grads.push_back(std::move(gv));
  }
  ev.gradient = center_gradients(grads);
  return ev;
}

// ---------------------------------------------------------------------------
// Fixed-reference objective: L^F = L_seg^F + alpha L_reg^F + beta L_def^F +
// gamma L_cons^F. L_seg^F needs a learned segmenter and is reported as 0.

struct FixedProblem {
  const Volume* moving = nullptr;
  const Volume* target = nullptr;
  const LabelMap* moving_label = nullptr;  // both labels given enables L_cons
  const LabelMap* target_label = nullptr;
  LossWeights weights;
  IntegrationConfig integration;
};

struct FixedEvaluation {
  LossReport report;
  Transform forward;
  VectorField gradient;
};

inline FixedEvaluation loss_total_fixed(const FixedProblem& prob, const VectorField& v, bool with_gradient) {
  if (!prob.moving || !prob.target)
    throw Error(ErrorCode::invalid_argument, "images", "fixed registration needs moving and target");
  require_same_grid(prob.moving->grid, prob.target->grid, "images");
  require_same_grid(prob.moving->grid, v.grid, "field");
  const bool cons_on = prob.moving_label && prob.target_label;
  if (cons_on) {
    require_same_grid(prob.moving_label->grid, v.grid, "moving_label");
    require_same_grid(prob.target_label->grid, v.grid, "target_label");
  }
  const LossWeights& wts = prob.weights;
  FixedEvaluation ev;
  IntegrationTape tape;
  ev.forward = integrate_svf(v, prob.integration, with_gradient ? &tape : nullptr);
  const Volume warped = warp_volume(*prob.moving, ev.forward);
  ev.report.reg = mean_squared_difference(*prob.target, warped);
  ev.report.per_image = {ev.report.reg};
  ev.report.def = diffusion_energy(v);
  LabelMap pred;
  if (cons_on) {
    pred = warp_labels(*prob.moving_label, ev.forward);
    ev.report.cons = inner_product_metric(*prob.target_label, pred, wts.w);
  }
  ev.report.seg = 0.0;
  ev.report.total = ev.report.seg + wts.alpha * ev.report.reg + wts.beta * ev.report.def + wts.gamma * ev.report.cons;
  if (!with_gradient) return ev;

  const double n_vox = static_cast<double>(warped.size());
  Volume gw(warped.grid);
  for (std::size_t k = 0; k < gw.data.size(); ++k)
    gw.data[k] = wts.alpha * 2.0 * (warped.data[k] - prob.target->data[k]) / n_vox;
  VectorField gu = backprop_warp(*prob.moving, ev.forward, gw);
  if (cons_on && wts.gamma > 0.0) {
    const Volume gp = inner_product_gradient(*prob.target_label, wts.w, wts.gamma);
    const VectorField gl = backprop_warp(as_volume(*prob.moving_label), ev.forward, gp);
    for (std::size_t k = 0; k < gu.data.size(); ++k) gu.data[k] += gl.data[k];
  }
  ev.gradient = backprop_integrate(tape, gu);
  if (wts.beta > 0.0) {
    const VectorField gd = diffusion_gradient(v, wts.beta);
    for (std::size_t k = 0; k < ev.gradient.data.size(); ++k) ev.gradient.data[k] += gd.data[k];
  }
  return ev;
}

}  // namespace meanspace
