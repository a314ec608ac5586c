#include <gtest/gtest.h>

#include "support.hpp"

using namespace mst;

namespace {

LabelMap mask_of(const GridSpec& g, std::vector<double> v) {
  LabelMap m(g, LabelKind::binary);
  m.data = std::move(v);
  return m;
}

}  // namespace

TEST(Dice, Examples) {
  const GridSpec g(2, 2, 2);
  const LabelMap a = mask_of(g, {1, 1, 0, 0, 0, 0, 0, 0});
  const LabelMap b = mask_of(g, {0, 1, 1, 0, 0, 0, 0, 0});
  const LabelMap c = mask_of(g, {0, 0, 0, 0, 1, 1, 0, 0});
  EXPECT_EQ(dice(a, a), 1.0);
  EXPECT_EQ(dice(a, c), 0.0);
  EXPECT_EQ(dice(a, b), 0.5);
  const LabelMap empty(g, LabelKind::binary);
  EXPECT_EQ(dice(empty, empty), 1.0);
  EXPECT_EQ(dice(a, empty), 0.0);
}

TEST(Kappa, Examples) {
  const std::vector<double> a{1, 1, 0, 0}, b{1, 0, 0, 0};
  EXPECT_DOUBLE_EQ(cohens_kappa(a, b), 0.5);
  EXPECT_DOUBLE_EQ(cohens_kappa(std::vector<double>{1, 0}, std::vector<double>{0, 1}), -1.0);
  EXPECT_EQ(cohens_kappa(a, a), 1.0);
  const std::vector<double> zeros(5, 0.0), ones(5, 1.0);
  EXPECT_EQ(cohens_kappa(zeros, zeros), 1.0);
  EXPECT_EQ(cohens_kappa(ones, ones), 1.0);
  EXPECT_EQ(cohens_kappa(zeros, ones), 0.0);
}

TEST(Kappa, SymmetricBoundedAndOneOnlyForIdenticalMasks) {
  std::mt19937_64 rng(7);
  const GridSpec g(4, 4, 4);
  for (int trial = 0; trial < 200; ++trial) {
    const LabelMap a = random_mask(g, rng, 0.3), b = random_mask(g, rng, 0.3);
    EXPECT_EQ(cohens_kappa(a, b), cohens_kappa(b, a));
    EXPECT_EQ(dice(a, b), dice(b, a));
    EXPECT_LE(cohens_kappa(a, b), 1.0);
    if (a.data != b.data) {
      EXPECT_LT(cohens_kappa(a, b), 1.0);
    }
  }
}

TEST(Metrics, GridMismatchIsAnError) {
  const LabelMap a(GridSpec(2, 2, 2), LabelKind::binary), b(GridSpec(2, 2, 3), LabelKind::binary);
  EXPECT_THROW(dice(a, b), Error);
  EXPECT_THROW(cohens_kappa(a, b), Error);
}

TEST(PercentVariation, Examples) {
  EXPECT_EQ(percent_variation(7.0, 7.0), 0.0);
  EXPECT_NEAR(percent_variation(100.0, 102.0), 200.0 / 101.0, 1e-12);
  EXPECT_EQ(percent_variation(3.0, 5.0), -percent_variation(5.0, 3.0));
  EXPECT_NEAR(percent_variation(3.0 * 2.5, 5.0 * 2.5), percent_variation(3.0, 5.0), 1e-12);
  try {
    percent_variation(2.0, -2.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::undefined_measure);
  }
}

TEST(MaskStats, Examples) {
  const GridSpec g(2, 2, 2);
  LabelMap full(g, LabelKind::binary);
  full.data.assign(8, 1.0);
  const MaskStats s = mask_stats(Volume(g, 0.75), full);
  EXPECT_EQ(s.count, 8);
  EXPECT_EQ(s.volume, 8.0);
  EXPECT_EQ(s.mean(), 0.75);

  const GridSpec gs(2, 2, 2, {0.5, 2.0, 1.5});
  LabelMap two(gs, LabelKind::binary);
  two.data[1] = two.data[6] = 1.0;
  EXPECT_DOUBLE_EQ(mask_stats(Volume(gs, 1.0), two).volume, 3.0);
}

TEST(MaskStats, EmptyMaskHasZeroVolumeAndNoMean) {
  const GridSpec g(3, 3, 3);
  const MaskStats s = mask_stats(Volume(g, 1.0), LabelMap(g, LabelKind::binary));
  EXPECT_EQ(s.volume, 0.0);
  try {
    (void)s.mean();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::empty_mask);
  }
}

TEST(MaskStats, MatchesALoopOracle) {
  std::mt19937_64 rng(8);
  const GridSpec g(8, 8, 8, {1.0, 1.0, 2.0});
  for (int trial = 0; trial < 20; ++trial) {
    const Volume v = random_volume(g, rng);
    const LabelMap m = random_mask(g, rng);
    double sum = 0.0;
    std::int64_t n = 0;
    for (int z = 0; z < 8; ++z)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          if (m.at(x, y, z) == 1.0) sum += v.at(x, y, z), ++n;
    const MaskStats s = mask_stats(v, m);
    EXPECT_EQ(s.count, n);
    EXPECT_EQ(s.volume, 2.0 * static_cast<double>(n));
    EXPECT_EQ(s.mean(), sum / static_cast<double>(n));
  }
}

TEST(Consistency, IdenticalAlignedMasksScoreOne) {
  std::mt19937_64 rng(9);
  const GridSpec g(6, 6, 6);
  const LabelMap m = random_mask(g, rng);
  const std::vector<LabelMap> masks{m, m, m};
  const std::vector<Transform> id(3, identity_transform(g));
  EXPECT_EQ(mean_space_consistency_dice(masks, id), 1.0);
  EXPECT_EQ(min_pairwise_dice(masks), 1.0);
}

TEST(Method, NamesRoundTrip) {
  for (Method m : {Method::mean, Method::fixed, Method::dilation, Method::translation})
    EXPECT_EQ(parse_method(to_string(m)), m);
  EXPECT_THROW(parse_method("median"), Error);
}

namespace {

PhantomSeries small_group(int n, double r, std::uint64_t seed) {
  PhantomSpec s;
  s.dims = {16, 16, 16};
  s.radius = r;
  s.timepoints.assign(static_cast<std::size_t>(n), TimePointDeformation{});
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& t : s.timepoints) t.translation = {u(rng), u(rng), u(rng)};
  return make_phantom_series(s);
}

ProtocolConfig quick_protocol() {
  ProtocolConfig c;
  c.optim.max_iters = 40;
  c.optim.levels = 2;
  return c;
}

}  // namespace

TEST(BiasProtocol, MeanIsOrderIndependent) {
  const PhantomSeries s = small_group(3, 4.0, 1);
  const BiasReport r = run_bias_protocol(s.images, s.labels, Method::mean, quick_protocol());
  EXPECT_EQ(r.n, 3);
  ASSERT_EQ(r.per_timepoint.size(), 3u);
  EXPECT_EQ(r.kappa, 100.0);
  EXPECT_LE(std::abs(r.eps_volume), 0.5);
  EXPECT_LE(r.mean_velocity_norm, 1e-15);
}

TEST(BiasProtocol, DilationIncreasesVolume) {
  const PhantomSeries s = small_group(2, 4.0, 2);
  const BiasReport r = run_bias_protocol(s.images, s.labels, Method::dilation, quick_protocol());
  for (const auto& t : r.per_timepoint) EXPECT_GT(t.eps_volume, 0.0);
  EXPECT_LT(r.kappa, 100.0);
}

TEST(BiasProtocol, TranslationKeepsVolumeWithHighButImperfectAgreement) {
  PhantomSpec s;
  s.dims = {24, 24, 24};
  s.radius = 7.0;
  const PhantomSeries p = make_phantom_series(s);
  const BiasReport r = run_bias_protocol(p.images, p.labels, Method::translation, quick_protocol());
  EXPECT_EQ(r.eps_volume, 0.0);
  EXPECT_LT(r.kappa, 100.0);
  EXPECT_GT(r.kappa, 50.0);
}

TEST(BiasProtocol, FixedReportsPerTimepointMeasures) {
  const PhantomSeries s = small_group(2, 4.0, 3);
  const BiasReport r = run_bias_protocol(s.images, s.labels, Method::fixed, quick_protocol());
  ASSERT_EQ(r.per_timepoint.size(), 2u);
  for (const auto& t : r.per_timepoint) {
    EXPECT_GE(t.kappa, -1.0);
    EXPECT_LE(t.kappa, 1.0);
    EXPECT_GT(t.volume_first, 0.0);
  }
  EXPECT_GE(r.dice, 0.0);
  EXPECT_LE(r.dice, 100.0);
}

TEST(BiasProtocol, RejectsBadGroups) {
  const PhantomSeries s = small_group(2, 4.0, 4);
  const std::vector<Volume> one{s.images[0]};
  const std::vector<LabelMap> one_l{s.labels[0]};
  EXPECT_THROW(run_bias_protocol(one, one_l, Method::mean), Error);
  EXPECT_THROW(run_bias_protocol(s.images, one_l, Method::mean), Error);
}
