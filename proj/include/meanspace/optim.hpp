#pragma once

// Direct optimization of velocity fields with Adam over a coarse-to-fine
// pyramid: group-wise registration to the implicit mean space, and the
// pairwise fixed-reference baseline.

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "meanspace/diffeo.hpp"
#include "meanspace/error.hpp"
#include "meanspace/objective.hpp"
#include "meanspace/segment.hpp"
#include "meanspace/volume.hpp"

namespace meanspace {

// ---------------------------------------------------------------------------
// Pyramid

inline GridSpec coarse_grid(const GridSpec& fine, int factor) {
  if (factor != 1 && factor != 2 && factor != 4 && factor != 8)
    throw Error(ErrorCode::invalid_argument, "factor", "pyramid factor must be 1, 2, 4 or 8");
  GridSpec g = fine;
  for (int a = 0; a < 3; ++a) {
    g.dims[a] = fine.dims[a] / factor;
    g.spacing[a] = fine.spacing[a] * factor;
    if (g.dims[a] < 2)
      throw Error(ErrorCode::invalid_argument, "dims", "grid too small for pyramid factor " + std::to_string(factor));
  }
  return g;
}

// Box-filter downsampling; trailing voxels that do not fill a block are
// ignored.
inline Volume pyramid_downsample(const Volume& vol, int factor) {
  const GridSpec g = coarse_grid(vol.grid, factor);
  if (factor == 1) return vol;
  Volume out(g);
  const double inv = 1.0 / (factor * factor * factor);
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x) {
        double s = 0.0;
        for (int dz = 0; dz < factor; ++dz)
          for (int dy = 0; dy < factor; ++dy)
            for (int dx = 0; dx < factor; ++dx)
              s += vol.at(factor * x + dx, factor * y + dy, factor * z + dz);
        out.at(x, y, z) = s * inv;
      }
  return out;
}

inline LabelMap pyramid_downsample(const LabelMap& lab, int factor) {
  if (factor == 1) return lab;
  const Volume v = pyramid_downsample(as_volume(lab), factor);
  LabelMap out(v.grid, LabelKind::probabilistic);
  for (std::size_t i = 0; i < v.data.size(); ++i) out.data[i] = std::clamp(v.data[i], 0.0, 1.0);
  return out;
}

namespace detail {
// Coarse-grid coordinate of a fine voxel (box-filter centers).
inline double to_coarse(int x, int factor) { return (x - 0.5 * (factor - 1)) / factor; }
}  // namespace detail

inline Volume pyramid_upsample(const Volume& vol, int factor, const GridSpec& fine) {
  if (factor == 1) return vol;
  Volume out(fine);
  for (int z = 0; z < fine.dims[2]; ++z)
    for (int y = 0; y < fine.dims[1]; ++y)
      for (int x = 0; x < fine.dims[0]; ++x)
        out.at(x, y, z) = sample_linear(
            vol, {detail::to_coarse(x, factor), detail::to_coarse(y, factor), detail::to_coarse(z, factor)});
  return out;
}

// Linear upsampling of a displacement-like field; magnitudes scale by the
// factor because fields are stored in voxel units.
inline VectorField pyramid_upsample_field(const VectorField& field, int factor, const GridSpec& fine) {
  if (factor == 1) return field;
  VectorField out(fine);
  for (int z = 0; z < fine.dims[2]; ++z)
    for (int y = 0; y < fine.dims[1]; ++y)
      for (int x = 0; x < fine.dims[0]; ++x) {
        Vec3 v = sample_linear(
            field, {detail::to_coarse(x, factor), detail::to_coarse(y, factor), detail::to_coarse(z, factor)});
        for (double& c : v) c *= factor;
        out.set(fine.index(x, y, z), v);
      }
  return out;
}

// Upsampling without a known fine grid: dims multiplied by the factor.
inline VectorField pyramid_upsample_field(const VectorField& field, int factor) {
  GridSpec fine = field.grid;
  for (int a = 0; a < 3; ++a) {
    fine.dims[a] *= factor;
    fine.spacing[a] /= factor;
  }
  return pyramid_upsample_field(field, factor, fine);
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<double> m, v;
};

struct Lambda2Schedule {
  bool enabled = true;
  double start = 0.1;
  double step = 0.01;
  double cap = 0.5;
  int iters_per_epoch = 10;

  double at(int iteration) const {
    const int epochs = iteration / std::max(1, iters_per_epoch);
    return std::min(cap, start + step * epochs);
  }
};

struct OptimConfig {
  double learning_rate = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int max_iters = 300;  // per level
  int levels = 3;
  double tolerance = 1e-6;
  int window = 10;
  Lambda2Schedule lambda2_schedule;  // active when labels are supplied
  IntegrationConfig integration;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw Error(ErrorCode::config, "learning_rate", "learning_rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw Error(ErrorCode::config, "beta1", "beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw Error(ErrorCode::config, "beta2", "beta2 must lie in [0, 1)");
    if (!(epsilon > 0.0)) throw Error(ErrorCode::config, "epsilon", "epsilon must be positive");
    if (max_iters < 0) throw Error(ErrorCode::config, "max_iters", "max_iters must be non-negative");
    if (levels < 1 || levels > 4) throw Error(ErrorCode::config, "levels", "levels must lie in [1, 4]");
    if (window < 1) throw Error(ErrorCode::config, "window", "window must be >= 1");
    integration.validate();
  }
};

// Bias-corrected Adam step on one parameter vector; `t` counts from 1.
inline void adam_step(std::vector<double>& params, const std::vector<double>& grad, AdamState& st, int t,
                      const OptimConfig& cfg) {
  if (st.m.size() != params.size()) {
    st.m.assign(params.size(), 0.0);
    st.v.assign(params.size(), 0.0);
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  parallel_for(static_cast<std::ptrdiff_t>(params.size()), [&](std::ptrdiff_t kk) {
    const auto k = static_cast<std::size_t>(kk);
    const double g = grad[k];
    st.m[k] = cfg.beta1 * st.m[k] + (1.0 - cfg.beta1) * g;
    st.v[k] = cfg.beta2 * st.v[k] + (1.0 - cfg.beta2) * g * g;
    const double mhat = st.m[k] / c1;
    const double vhat = st.v[k] / c2;
    params[k] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
  });
}

// ---------------------------------------------------------------------------
// Traces

struct LossRecord {
  int iteration = 0;  // global, across levels
  int level = 0;
  double reg = 0.0;
  double def = 0.0;
  double seg = 0.0;
  double total = 0.0;
  double mean_velocity_norm = 0.0;
  double lambda2 = 0.0;
};

using TraceSink = std::function<void(const LossRecord&)>;

// ||(1/n) sum_i v_i||^2 averaged over voxels.
inline double mean_velocity_norm(std::span<const VectorField> fields) {
  const VectorField m = field_mean(fields);
  return reduce_sum(m.voxels(), [&](std::ptrdiff_t i) {
           const Vec3 v = m.at(i);
           return v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
         }) /
         static_cast<double>(m.voxels());
}

inline bool converged(const std::vector<double>& totals, const OptimConfig& cfg) {
  const std::size_t w = static_cast<std::size_t>(cfg.window);
  if (totals.size() <= w) return false;
  const double now = totals.back();
  const double before = totals[totals.size() - 1 - w];
  const double denom = std::max(std::abs(before), 1e-300);
  return std::abs(now - before) / denom < cfg.tolerance;
}

// ---------------------------------------------------------------------------
// Group-wise registration

struct GroupState {
  std::vector<VectorField> fields;  // projected: sum_i v_i = 0
  std::vector<AdamState> moments;
  int iteration = 0;
  int level = 0;
  std::vector<LossRecord> history;
};

struct GroupResult {
  std::vector<Transform> forward;  // mean space -> native space i
  std::vector<Transform> inverse;  // native space i -> mean space
  LossReport report;
  Volume mean_image;
  double mean_velocity_norm = 0.0;
  GroupState state;
};

namespace detail {

inline std::vector<int> level_factors(int levels) {
  std::vector<int> f;
  for (int l = levels - 1; l >= 0; --l) f.push_back(1 << l);
  return f;
}

inline void check_finite(double total, int iteration) {
  if (!std::isfinite(total))
    throw Error(ErrorCode::divergence, "iteration " + std::to_string(iteration),
                "loss became non-finite at iteration " + std::to_string(iteration));
}

}  // namespace detail

// Minimizes L_reg + lambda1 L_def (+ lambda2 L_seg when labels are given)
// over n velocity fields starting from zero, projecting onto sum_i v_i = 0
// after every step. With labels, Sbar is re-fused from the previous
// iterate's forward transforms and held constant in the gradient; lambda2
// follows cfg.lambda2_schedule when enabled.
inline GroupResult register_group(std::span<const Volume> images, const OptimConfig& cfg, const LossWeights& weights,
                                  std::span<const LabelMap> labels = {}, const TraceSink& sink = {},
                                  const FusionConfig& fusion = {}) {
  cfg.validate();
  weights.validate();
  const std::size_t n = images.size();
  if (n < 2) throw Error(ErrorCode::invalid_argument, "images", "group registration needs n >= 2");
  require_same_grids(images, "images");
  if (!labels.empty()) {
    if (labels.size() != n) throw Error(ErrorCode::count_mismatch, "labels", "one label map per image is required");
    for (const auto& l : labels) require_same_grid(images.front().grid, l.grid, "labels");
  }

  GroupState st;
  std::vector<int> factors = detail::level_factors(cfg.levels);
  for (std::size_t li = 0; li < factors.size(); ++li) {
    const int f = factors[li];
    std::vector<Volume> lvl_images;
    std::vector<LabelMap> lvl_labels;
    for (const auto& im : images) lvl_images.push_back(pyramid_downsample(im, f));
    for (const auto& lb : labels) lvl_labels.push_back(pyramid_downsample(lb, f));
    const GridSpec g = lvl_images.front().grid;

    if (li == 0) {
      st.fields.assign(n, VectorField(g));
    } else {
      const int step = factors[li - 1] / f;
      for (auto& v : st.fields) v = pyramid_upsample_field(v, step, g);
      st.fields = project_constraint(st.fields);
    }
    st.moments.assign(n, AdamState{});
    st.level = static_cast<int>(li);

    LabelMap sbar;
    if (!lvl_labels.empty()) {
      std::vector<Transform> fwd;
      for (const auto& v : st.fields) fwd.push_back(integrate_svf(v, cfg.integration));
      sbar = fuse_mean_space(lvl_labels, fwd, fusion).probabilistic;
    }
    std::vector<double> totals;
    for (int it = 0; it < cfg.max_iters; ++it) {
      GroupProblem prob{lvl_images, lvl_labels, lvl_labels.empty() ? nullptr : &sbar, weights, cfg.integration};
      if (!lvl_labels.empty() && cfg.lambda2_schedule.enabled) prob.weights.lambda2 = cfg.lambda2_schedule.at(st.iteration);
      GroupEvaluation ev = loss_total_group(prob, st.fields, true);
      detail::check_finite(ev.report.total, st.iteration);
      LossRecord rec{st.iteration, st.level, ev.report.reg, ev.report.def, ev.report.seg, ev.report.total,
                     mean_velocity_norm(st.fields), prob.weights.lambda2};
      st.history.push_back(rec);
      if (sink) sink(rec);
      totals.push_back(ev.report.total);
      ++st.iteration;
      if (converged(totals, cfg)) break;
      for (std::size_t i = 0; i < n; ++i) adam_step(st.fields[i].data, ev.gradient[i].data, st.moments[i], it + 1, cfg);
      st.fields = project_constraint(st.fields);
      if (!lvl_labels.empty()) sbar = fuse_mean_space(lvl_labels, ev.forward, fusion).probabilistic;
    }
  }

  GroupResult res;
  for (const auto& v : st.fields) {
    res.forward.push_back(integrate_svf(v, cfg.integration));
    res.inverse.push_back(invert(v, cfg.integration));
  }
  LabelMap sbar;
  GroupProblem prob{images, labels, nullptr, weights, cfg.integration};
  if (!labels.empty()) {
    sbar = fuse_mean_space(labels, res.forward, fusion).probabilistic;
    prob.sbar = &sbar;
    if (cfg.lambda2_schedule.enabled) prob.weights.lambda2 = cfg.lambda2_schedule.at(std::max(0, st.iteration - 1));
  }
  GroupEvaluation ev = loss_total_group(prob, st.fields, false);
  detail::check_finite(ev.report.total, st.iteration);
  res.report = ev.report;
  res.mean_image = std::move(ev.mean_image);
  res.mean_velocity_norm = mean_velocity_norm(st.fields);
  res.state = std::move(st);
  return res;
}

// ---------------------------------------------------------------------------
// Fixed-reference registration

struct FixedResult {
  Transform forward;  // target space -> moving space
  Transform inverse;  // moving space -> target space
  LossReport report;
  VectorField field;
  std::vector<LossRecord> history;
};

inline FixedResult register_fixed(const Volume& moving, const Volume& target, const OptimConfig& cfg,
                                  const LossWeights& weights, const LabelMap* moving_label = nullptr,
                                  const LabelMap* target_label = nullptr, const TraceSink& sink = {}) {
  cfg.validate();
  weights.validate();
  require_same_grid(moving.grid, target.grid, "images");
  if ((moving_label == nullptr) != (target_label == nullptr))
    throw Error(ErrorCode::invalid_argument, "labels", "either both or neither label maps must be given");
  std::vector<int> factors = detail::level_factors(cfg.levels);
  VectorField v;
  std::vector<LossRecord> history;
  int iteration = 0;
  for (std::size_t li = 0; li < factors.size(); ++li) {
    const int f = factors[li];
    const Volume mv = pyramid_downsample(moving, f);
    const Volume tg = pyramid_downsample(target, f);
    LabelMap ml, tl;
    if (moving_label) {
      ml = pyramid_downsample(*moving_label, f);
      tl = pyramid_downsample(*target_label, f);
    }
    if (li == 0)
      v = VectorField(mv.grid);
    else
      v = pyramid_upsample_field(v, factors[li - 1] / f, mv.grid);
    AdamState adam;
    FixedProblem prob{&mv, &tg, moving_label ? &ml : nullptr, moving_label ? &tl : nullptr, weights,
                      cfg.integration};
    std::vector<double> totals;
    for (int it = 0; it < cfg.max_iters; ++it) {
      FixedEvaluation ev = loss_total_fixed(prob, v, true);
      detail::check_finite(ev.report.total, iteration);
      double nv = 0.0;
      {
        const VectorField* one = &v;
        nv = mean_velocity_norm({one, 1});
      }
      LossRecord rec{iteration, static_cast<int>(li), ev.report.reg, ev.report.def, ev.report.cons, ev.report.total,
                     nv, 0.0};
      history.push_back(rec);
      if (sink) sink(rec);
      totals.push_back(ev.report.total);
      ++iteration;
      if (converged(totals, cfg)) break;
      adam_step(v.data, ev.gradient.data, adam, it + 1, cfg);
    }
  }
  FixedProblem prob{&moving, &target, moving_label, target_label, weights, cfg.integration};
  FixedEvaluation ev = loss_total_fixed(prob, v, false);
  detail::check_finite(ev.report.total, iteration);
  FixedResult res{std::move(ev.forward), invert(v, cfg.integration), ev.report, std::move(v), std::move(history)};
  return res;
}

}  // namespace meanspace
