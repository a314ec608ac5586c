#pragma once

// Overlap, agreement and percent-variation measures, and the processing-bias
// protocol that runs a method with time-points in forward and reversed order.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "meanspace/diffeo.hpp"
#include "meanspace/error.hpp"
#include "meanspace/optim.hpp"
#include "meanspace/segment.hpp"
#include "meanspace/volume.hpp"

namespace meanspace {

struct Confusion {
  std::int64_t both = 0, only_a = 0, only_b = 0, neither = 0;
  std::int64_t total() const { return both + only_a + only_b + neither; }
};

inline Confusion confusion(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::grid_mismatch, "masks", "masks differ in size");
  Confusion c;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] > 0.5, y = b[i] > 0.5;
    if (x && y) ++c.both;
    else if (x) ++c.only_a;
    else if (y) ++c.only_b;
    else ++c.neither;
  }
  return c;
}

// 2|A n B| / (|A| + |B|); two empty masks agree perfectly (1.0).
inline double dice(std::span<const double> a, std::span<const double> b) {
  const Confusion c = confusion(a, b);
  const std::int64_t denom = 2 * c.both + c.only_a + c.only_b;
  if (denom == 0) return 1.0;
  return 2.0 * static_cast<double>(c.both) / static_cast<double>(denom);
}

inline double dice(const LabelMap& a, const LabelMap& b) {
  require_same_grid(a.grid, b.grid, "masks");
  return dice(a.data, b.data);
}

// (p_o - p_e) / (1 - p_e); defined as 1 when p_e = 1.
inline double cohens_kappa(std::span<const double> a, std::span<const double> b) {
  const Confusion c = confusion(a, b);
  const double n = static_cast<double>(c.total());
  if (n == 0) return 1.0;
  const double po = static_cast<double>(c.both + c.neither) / n;
  const double pa = static_cast<double>(c.both + c.only_a) / n;
  const double pb = static_cast<double>(c.both + c.only_b) / n;
  const double pe = pa * pb + (1.0 - pa) * (1.0 - pb);
  if (pe == 1.0) return 1.0;
  return (po - pe) / (1.0 - pe);
}

inline double cohens_kappa(const LabelMap& a, const LabelMap& b) {
  require_same_grid(a.grid, b.grid, "masks");
  return cohens_kappa(a.data, b.data);
}

// (second - first) / (0.5 (second + first)) * 100.
inline double percent_variation(double first, double second) {
  if (first + second == 0.0)
    throw Error(ErrorCode::undefined_measure, "values", "percent variation undefined when values sum to zero");
  return (second - first) / (0.5 * (second + first)) * 100.0;
}

struct MaskStats {
  std::int64_t count = 0;
  double volume = 0.0;  // physical units (mm^3 for mm spacing)
  std::optional<double> mean_intensity;

  double mean() const {
    if (!mean_intensity) throw Error(ErrorCode::empty_mask, "mask", "mean intensity of an empty mask");
    return *mean_intensity;
  }
};

inline MaskStats mask_stats(const Volume& vol, const LabelMap& lab) {
  require_same_grid(vol.grid, lab.grid, "mask");
  MaskStats s;
  double sum = 0.0;
  for (std::size_t i = 0; i < lab.data.size(); ++i)
    if (lab.data[i] > 0.5) {
      ++s.count;
      sum += vol.data[i];
    }
  const Vec3& sp = lab.grid.spacing;
  s.volume = static_cast<double>(s.count) * sp[0] * sp[1] * sp[2];
  if (s.count > 0) s.mean_intensity = sum / static_cast<double>(s.count);
  return s;
}

// Minimum pairwise Dice between several masks defined on one grid.
inline double min_pairwise_dice(std::span<const LabelMap> masks) {
  double m = 1.0;
  for (std::size_t i = 0; i < masks.size(); ++i)
    for (std::size_t j = i + 1; j < masks.size(); ++j) m = std::min(m, dice(masks[i], masks[j]));
  return m;
}

// Mean pairwise Dice of native-space probabilistic segmentations after
// aligning them to mean space with the forward transforms (linear
// interpolation of probabilities, then binarization).
inline double mean_space_consistency_dice(std::span<const LabelMap> native, std::span<const Transform> forward,
                                          double threshold = 0.5) {
  if (native.size() != forward.size() || native.size() < 2)
    throw Error(ErrorCode::count_mismatch, "masks", "need one forward transform per mask and n >= 2");
  std::vector<LabelMap> aligned;
  for (std::size_t i = 0; i < native.size(); ++i) aligned.push_back(binarize(warp_labels(native[i], forward[i]), threshold));
  double s = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < aligned.size(); ++i)
    for (std::size_t j = i + 1; j < aligned.size(); ++j) {
      s += dice(aligned[i], aligned[j]);
      ++pairs;
    }
  return s / pairs;
}

// ---------------------------------------------------------------------------
// Processing-bias protocol

enum class Method { mean, fixed, dilation, translation };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::mean: return "mean";
    case Method::fixed: return "fixed";
    case Method::dilation: return "dilation";
    case Method::translation: return "translation";
  }
  return "unknown";
}

inline Method parse_method(const std::string& s) {
  if (s == "mean") return Method::mean;
  if (s == "fixed") return Method::fixed;
  if (s == "dilation") return Method::dilation;
  if (s == "translation") return Method::translation;
  throw Error(ErrorCode::config, "method", "unknown method '" + s + "'");
}

struct ProtocolConfig {
  OptimConfig optim;
  LossWeights weights;
  FusionConfig fusion;
  bool joint_segmentation = true;  // feed labels to the group objective
};

struct TimePointBias {
  double kappa = 0.0;             // fraction
  double dice = 0.0;              // fraction, between the two masks
  double accuracy_dice = 0.0;     // fraction, first mask against the native label
  double volume_first = 0.0;
  double volume_second = 0.0;
  double intensity_first = 0.0;
  double intensity_second = 0.0;
  double eps_volume = 0.0;        // %
  double eps_intensity = 0.0;     // %
};

struct BiasReport {
  Method method = Method::mean;
  int n = 0;
  double eps_volume = 0.0;          // %, mean over time-points
  double eps_intensity_mean = 0.0;  // %, mean over time-points
  double kappa = 0.0;               // %, mean over time-points
  double dice = 0.0;                // %, mean over time-points
  double accuracy_dice = 0.0;       // %, mean over time-points
  double mean_velocity_norm = 0.0;  // of the forward-order run
  std::vector<TimePointBias> per_timepoint;
};

// Native-space masks of one ordered run, indexed by position in `order`.
struct OrderedRun {
  std::vector<LabelMap> masks;
  double mean_velocity_norm = 0.0;
};

namespace detail {

inline OrderedRun run_mean(std::span<const Volume> images, std::span<const LabelMap> labels,
                           const ProtocolConfig& cfg) {
  GroupResult r = register_group(images, cfg.optim, cfg.weights,
                                 cfg.joint_segmentation ? labels : std::span<const LabelMap>{}, {}, cfg.fusion);
  const MeanSpaceSegmentation seg = fuse_mean_space(labels, r.forward, cfg.fusion);
  return {propagate(seg.probabilistic, r.inverse, cfg.fusion), r.mean_velocity_norm};
}

// The first image is the fixed reference; every other image is registered
// to it and receives the reference segmentation propagated into its space.
inline OrderedRun run_fixed(std::span<const Volume> images, std::span<const LabelMap> labels,
                            const ProtocolConfig& cfg) {
  OrderedRun out;
  out.masks.push_back(binarize(labels[0], cfg.fusion.threshold));
  std::vector<VectorField> fields;
  for (std::size_t t = 1; t < images.size(); ++t) {
    FixedResult r = register_fixed(images[t], images[0], cfg.optim, cfg.weights, &labels[t], &labels[0]);
    out.masks.push_back(binarize(warp_labels(labels[0], r.inverse), cfg.fusion.threshold));
    fields.push_back(std::move(r.field));
  }
  out.mean_velocity_norm = mean_velocity_norm(fields);
  return out;
}

template <class T>
std::vector<T> reversed(std::span<const T> items) {
  return std::vector<T>(items.rbegin(), items.rend());
}

}  // namespace detail

// Runs `method` on the group in forward and reversed time-point order and
// compares, per time-point, the mask from the first run (V') with the mask
// from the second (V''). For the perturbation methods V' is the [mean]
// result and V'' its dilated / translated version.
inline BiasReport run_bias_protocol(std::span<const Volume> images, std::span<const LabelMap> labels, Method method,
                                    const ProtocolConfig& cfg = {}) {
  const std::size_t n = images.size();
  if (n < 2) throw Error(ErrorCode::invalid_argument, "images", "bias protocol needs n >= 2");
  if (labels.size() != n) throw Error(ErrorCode::count_mismatch, "labels", "one label map per image is required");

  std::vector<LabelMap> first, second;
  double mvn = 0.0;
  switch (method) {
    case Method::mean:
    case Method::fixed: {
      auto run = method == Method::mean ? detail::run_mean : detail::run_fixed;
      OrderedRun fwd = run(images, labels, cfg);
      const auto rimg = detail::reversed(images);
      const auto rlab = detail::reversed(labels);
      OrderedRun rev = run(rimg, rlab, cfg);
      first = std::move(fwd.masks);
      second.assign(rev.masks.rbegin(), rev.masks.rend());
      mvn = fwd.mean_velocity_norm;
      break;
    }
    case Method::dilation:
    case Method::translation: {
      OrderedRun base = detail::run_mean(images, labels, cfg);
      first = std::move(base.masks);
      for (const auto& m : first) second.push_back(method == Method::dilation ? dilate_one_voxel(m) : translate_one_voxel(m, 2));
      mvn = base.mean_velocity_norm;
      break;
    }
  }

  BiasReport rep;
  rep.method = method;
  rep.n = static_cast<int>(n);
  rep.mean_velocity_norm = mvn;
  for (std::size_t t = 0; t < n; ++t) {
    TimePointBias b;
    b.kappa = cohens_kappa(first[t], second[t]);
    b.dice = dice(first[t], second[t]);
    b.accuracy_dice = dice(first[t], binarize(labels[t], cfg.fusion.threshold));
    const MaskStats s1 = mask_stats(images[t], first[t]);
    const MaskStats s2 = mask_stats(images[t], second[t]);
    b.volume_first = s1.volume;
    b.volume_second = s2.volume;
    b.eps_volume = percent_variation(s1.volume, s2.volume);
    b.intensity_first = s1.mean();
    b.intensity_second = s2.mean();
    b.eps_intensity = percent_variation(b.intensity_first, b.intensity_second);
    rep.per_timepoint.push_back(b);
  }
  for (const auto& b : rep.per_timepoint) {
    rep.kappa += b.kappa;
    rep.dice += b.dice;
    rep.accuracy_dice += b.accuracy_dice;
    rep.eps_volume += b.eps_volume;
    rep.eps_intensity_mean += b.eps_intensity;
  }
  const double nd = static_cast<double>(n);
  rep.kappa = 100.0 * rep.kappa / nd;
  rep.dice = 100.0 * rep.dice / nd;
  rep.accuracy_dice = 100.0 * rep.accuracy_dice / nd;
  rep.eps_volume /= nd;
  rep.eps_intensity_mean /= nd;
  return rep;
}

}  // namespace meanspace
