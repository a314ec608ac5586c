#pragma once

// Mean-space segmentation: fusion of warped native labels into Sbar,
// propagation of Sbar back into every native space, and the one-voxel
// perturbations used as reference methods.

#include <span>
#include <vector>

#include "meanspace/diffeo.hpp"
#include "meanspace/error.hpp"
#include "meanspace/volume.hpp"

namespace meanspace {

enum class FusionRule { mean, majority };

struct FusionConfig {
  double threshold = 0.5;
  FusionRule rule = FusionRule::mean;

  void validate() const {
    if (!(threshold > 0.0 && threshold < 1.0))
      throw Error(ErrorCode::config, "threshold", "threshold must lie in (0, 1)");
  }
};

// Foreground where p > threshold (strict).
inline LabelMap binarize(const LabelMap& lab, double threshold = 0.5) {
  LabelMap out(lab.grid, LabelKind::binary);
  for (std::size_t i = 0; i < lab.data.size(); ++i) out.data[i] = lab.data[i] > threshold ? 1.0 : 0.0;
  return out;
}

struct MeanSpaceSegmentation {
  LabelMap probabilistic;
  LabelMap binary;
};

// Sbar(x) = (1/n) sum_i S_i(T_i(x)), binarized at the threshold. With the
// majority rule each warped label is binarized before averaging.
inline MeanSpaceSegmentation fuse_mean_space(std::span<const LabelMap> labels, std::span<const Transform> forward,
                                             const FusionConfig& cfg = {}) {
  cfg.validate();
  if (labels.empty() || labels.size() != forward.size())
    throw Error(ErrorCode::count_mismatch, "labels", "one forward transform per label map is required");
  require_same_grids(labels, "labels");
  const std::size_t n = labels.size();
  std::vector<LabelMap> warped;
  warped.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    LabelMap w = warp_labels(labels[i], forward[i]);
    warped.push_back(cfg.rule == FusionRule::majority ? binarize(w, cfg.threshold) : std::move(w));
  }
  LabelMap prob(labels.front().grid, LabelKind::probabilistic);
  const double inv_n = 1.0 / static_cast<double>(n);
  parallel_for(prob.size(), [&](std::ptrdiff_t kk) {
    const auto k = static_cast<std::size_t>(kk);
    double buf[16];
    std::vector<double> heap;
    double* vals = buf;
    if (n > 16) {
      heap.resize(n);
      vals = heap.data();
    }
    for (std::size_t i = 0; i < n; ++i) vals[i] = warped[i].data[k];
    prob.data[k] = std::clamp(symmetric_sum({vals, n}) * inv_n, 0.0, 1.0);
  });
  MeanSpaceSegmentation out{prob, binarize(prob, cfg.threshold)};
  return out;
}

inline std::vector<LabelMap> propagate_probabilistic(const LabelMap& sbar, std::span<const Transform> inverse) {
  std::vector<LabelMap> out;
  out.reserve(inverse.size());
  for (const auto& t : inverse) out.push_back(warp_labels(sbar, t));
  return out;
}

// Sbar(T_i^-1) for every image, binarized: the native-space segmentations.
inline std::vector<LabelMap> propagate(const LabelMap& sbar, std::span<const Transform> inverse,
                                       const FusionConfig& cfg = {}) {
  cfg.validate();
  std::vector<LabelMap> out = propagate_probabilistic(sbar, inverse);
  for (auto& m : out) m = binarize(m, cfg.threshold);
  return out;
}

// One iteration of binary dilation with the 6-connected structuring element.
inline LabelMap dilate_one_voxel(const LabelMap& lab) {
  const GridSpec& g = lab.grid;
  LabelMap out(g, LabelKind::binary);
  const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) {
        bool on = lab.at(x, y, z) > 0.5;
        on = on || (x > 0 && lab.at(x - 1, y, z) > 0.5) || (x + 1 < nx && lab.at(x + 1, y, z) > 0.5);
        on = on || (y > 0 && lab.at(x, y - 1, z) > 0.5) || (y + 1 < ny && lab.at(x, y + 1, z) > 0.5);
        on = on || (z > 0 && lab.at(x, y, z - 1) > 0.5) || (z + 1 < nz && lab.at(x, y, z + 1) > 0.5);
        out.at(x, y, z) = on ? 1.0 : 0.0;
      }
  return out;
}

// Integer shift by +1 voxel along `axis` (2 = z, perpendicular to the axial
// plane). Voxels shifted out are dropped; vacated voxels become 0.
inline LabelMap translate_one_voxel(const LabelMap& lab, int axis = 2) {
  if (axis < 0 || axis > 2) throw Error(ErrorCode::invalid_argument, "axis", "axis must be 0, 1 or 2");
  const GridSpec& g = lab.grid;
  LabelMap out(g, LabelKind::binary);
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x) {
        int src[3] = {x, y, z};
        src[axis] -= 1;
        if (src[axis] < 0) continue;
        out.at(x, y, z) = lab.at(src[0], src[1], src[2]) > 0.5 ? 1.0 : 0.0;
      }
  return out;
}

}  // namespace meanspace
