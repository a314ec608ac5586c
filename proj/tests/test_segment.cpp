#include <gtest/gtest.h>

#include "support.hpp"

using namespace mst;

namespace {

Transform shift(const GridSpec& g, Vec3 d, Direction dir = Direction::forward) {
  Transform t;
  t.disp = VectorField(g, d);
  t.direction = dir;
  return t;
}

LabelMap ball(const GridSpec& g, Vec3 c, double r) {
  LabelMap m(g, LabelKind::binary);
  for (std::ptrdiff_t i = 0; i < g.voxels(); ++i) {
    const Vec3 p = voxel_position(g, i);
    const double d2 = (p[0] - c[0]) * (p[0] - c[0]) + (p[1] - c[1]) * (p[1] - c[1]) + (p[2] - c[2]) * (p[2] - c[2]);
    m.data[static_cast<std::size_t>(i)] = d2 <= r * r ? 1.0 : 0.0;
  }
  return m;
}

}  // namespace

TEST(FusionConfig, ThresholdMustLieStrictlyInsideTheUnitInterval) {
  for (double t : {0.0, 1.0, -0.1, std::nan("")}) {
    FusionConfig c;
    c.threshold = t;
    EXPECT_THROW(c.validate(), Error) << t;
  }
  EXPECT_NO_THROW(FusionConfig{}.validate());
}

TEST(Binarize, StrictThreshold) {
  LabelMap p(GridSpec(2, 2, 2), LabelKind::probabilistic);
  p.data = {0.5, 0.5000001, 0.2, 1.0, 0.0, 0.49, 0.51, 0.5};
  const LabelMap b = binarize(p);
  EXPECT_EQ(b.kind, LabelKind::binary);
  EXPECT_EQ(b.data, (std::vector<double>{0, 1, 0, 1, 0, 0, 1, 0}));
}

TEST(Fuse, IdenticalLabelsWithIdentityTransformsGiveThatLabel) {
  std::mt19937_64 rng(1);
  const GridSpec g(6, 5, 4);
  const LabelMap m = random_mask(g, rng);
  const std::vector<LabelMap> labels{m, m, m};
  const std::vector<Transform> id(3, identity_transform(g));
  const MeanSpaceSegmentation s = fuse_mean_space(labels, id);
  EXPECT_EQ(s.probabilistic.data, m.data);
  EXPECT_EQ(s.binary.data, m.data);
}

TEST(Fuse, DisjointLabelsGiveAnEmptyMask) {
  const GridSpec g(4, 2, 2);
  LabelMap a(g, LabelKind::binary), b(g, LabelKind::binary);
  for (int i = 0; i < 8; ++i) a.data[static_cast<std::size_t>(i)] = 1.0;
  for (int i = 8; i < 16; ++i) b.data[static_cast<std::size_t>(i)] = 1.0;
  const std::vector<LabelMap> labels{a, b};
  const std::vector<Transform> id(2, identity_transform(g));
  EXPECT_EQ(count_on(fuse_mean_space(labels, id).binary), 0);
}

TEST(Fuse, FourVoxelHandExample) {
  const GridSpec g(2, 2, 2);
  LabelMap a(g, LabelKind::probabilistic), b(g, LabelKind::probabilistic);
  a.data = {1, 1, 0, 0, 0, 0, 0, 0};
  b.data = {1, 0, 0, 0, 0, 0, 0, 0};
  const std::vector<LabelMap> labels{a, b};
  const std::vector<Transform> id(2, identity_transform(g));
  const MeanSpaceSegmentation s = fuse_mean_space(labels, id);
  EXPECT_EQ(s.probabilistic.data, (std::vector<double>{1, 0.5, 0, 0, 0, 0, 0, 0}));
  EXPECT_EQ(s.binary.data, (std::vector<double>{1, 0, 0, 0, 0, 0, 0, 0}));
}

TEST(Fuse, MajorityRuleBinarizesBeforeAveraging) {
  const GridSpec g(2, 2, 2);
  LabelMap a(g, LabelKind::probabilistic), b(g, LabelKind::probabilistic), c(g, LabelKind::probabilistic);
  a.data.assign(8, 0.6);
  b.data.assign(8, 0.6);
  c.data.assign(8, 0.0);
  const std::vector<LabelMap> labels{a, b, c};
  const std::vector<Transform> id(3, identity_transform(g));
  FusionConfig cfg;
  EXPECT_EQ(count_on(fuse_mean_space(labels, id, cfg).binary), 0);
  cfg.rule = FusionRule::majority;
  EXPECT_EQ(count_on(fuse_mean_space(labels, id, cfg).binary), 8);
}

TEST(Fuse, JointPermutationLeavesSbarBitwiseUnchanged) {
  std::mt19937_64 rng(2);
  const GridSpec g(7, 6, 5);
  std::vector<LabelMap> labels;
  std::vector<Transform> tr;
  for (int i = 0; i < 4; ++i) {
    labels.push_back(random_probabilities(g, rng));
    Transform t;
    t.disp = random_field(g, rng, 1.5);
    tr.push_back(t);
  }
  const LabelMap ref = fuse_mean_space(labels, tr).probabilistic;
  std::vector<int> order{0, 1, 2, 3};
  while (std::next_permutation(order.begin(), order.end())) {
    std::vector<LabelMap> lp;
    std::vector<Transform> tp;
    for (int k : order) lp.push_back(labels[static_cast<std::size_t>(k)]), tp.push_back(tr[static_cast<std::size_t>(k)]);
    EXPECT_EQ(fuse_mean_space(lp, tp).probabilistic.data, ref.data);
  }
}

TEST(Fuse, CountMismatchIsAnError) {
  const GridSpec g(2, 2, 2);
  const std::vector<LabelMap> labels(2, LabelMap(g, LabelKind::binary));
  const std::vector<Transform> one(1, identity_transform(g));
  try {
    fuse_mean_space(labels, one);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::count_mismatch);
  }
}

TEST(Propagate, IdentityGivesCopies) {
  std::mt19937_64 rng(3);
  const GridSpec g(5, 5, 5);
  const LabelMap m = random_mask(g, rng);
  const std::vector<Transform> id(3, Transform{VectorField(g), Direction::inverse});
  const auto out = propagate(m, id);
  ASSERT_EQ(out.size(), 3u);
  for (const auto& o : out) EXPECT_EQ(o.data, m.data);
}

TEST(Propagate, TranslationMovesTheCentroid) {
  const GridSpec g(24, 24, 24);
  const LabelMap m = ball(g, {11.5, 11.5, 11.5}, 6.0);
  const Vec3 d{1.3, -0.6, 2.2};
  const std::vector<Transform> tr{shift(g, d, Direction::inverse)};
  const LabelMap out = propagate(m, tr).front();
  const Vec3 c0 = mask_centroid(m), c1 = mask_centroid(out);
  for (int a = 0; a < 3; ++a) EXPECT_NEAR(c1[a] - c0[a], -d[a], 0.3) << "axis " << a;
}

TEST(Propagate, ProbabilisticPathIsConsistentByConstruction) {
  std::mt19937_64 rng(4);
  const GridSpec g(12, 12, 12);
  const LabelMap sbar = ball(g, {5.5, 6.0, 5.0}, 3.5);
  std::vector<VectorField> v;
  for (int i = 0; i < 3; ++i) v.push_back(smooth_random_field(g, 1.5, 2.0, 10 + i));
  v = project_constraint(v);
  std::vector<Transform> inv;
  for (const auto& f : v) inv.push_back(invert(f));
  const auto native = propagate(sbar, inv);
  // Each native mask is read off the one common mean-space mask.
  for (std::size_t i = 0; i < native.size(); ++i) EXPECT_LE(max_abs_diff(binarize(warp_labels(sbar, inv[i])).data, native[i].data), 0.0);
}

TEST(Dilate, SingleVoxelBecomesACross) {
  LabelMap m(GridSpec(5, 5, 5), LabelKind::binary);
  m.at(2, 2, 2) = 1.0;
  const LabelMap d = dilate_one_voxel(m);
  EXPECT_EQ(count_on(d), 7);
  for (auto [x, y, z] : {std::array{1, 2, 2}, {3, 2, 2}, {2, 1, 2}, {2, 3, 2}, {2, 2, 1}, {2, 2, 3}, {2, 2, 2}})
    EXPECT_EQ(d.at(x, y, z), 1.0);
}

TEST(Dilate, EmptyAndFullSaturate) {
  const GridSpec g(3, 4, 5);
  EXPECT_EQ(count_on(dilate_one_voxel(LabelMap(g, LabelKind::binary))), 0);
  LabelMap full(g, LabelKind::binary);
  full.data.assign(full.data.size(), 1.0);
  EXPECT_EQ(count_on(dilate_one_voxel(full)), g.voxels());
}

TEST(Dilate, IsExtensiveAndGrowsUnlessSaturated) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const LabelMap m = random_mask(GridSpec(6, 6, 6), rng, 0.1);
    const LabelMap d = dilate_one_voxel(m);
    for (std::size_t k = 0; k < m.data.size(); ++k)
      if (m.data[k] > 0.5) {
        EXPECT_EQ(d.data[k], 1.0);
      }
    EXPECT_GT(count_on(d), count_on(m));
  }
}

TEST(Translate, MovesAlongZAndDropsTheFarFace) {
  const GridSpec g(4, 4, 4);
  EXPECT_EQ(count_on(translate_one_voxel(LabelMap(g, LabelKind::binary))), 0);
  LabelMap m(g, LabelKind::binary);
  m.at(1, 2, 1) = 1.0;
  m.at(0, 0, 3) = 1.0;
  const LabelMap t = translate_one_voxel(m);
  EXPECT_EQ(count_on(t), 1);
  EXPECT_EQ(t.at(1, 2, 2), 1.0);
  EXPECT_THROW(translate_one_voxel(m, 3), Error);
}

TEST(Translate, PreservesVolumeAwayFromTheFarFace) {
  const GridSpec g(10, 10, 10);
  const LabelMap m = ball(g, {4.5, 4.5, 4.0}, 3.0);
  EXPECT_EQ(count_on(translate_one_voxel(m)), count_on(m));
}
