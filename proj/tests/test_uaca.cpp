#include <gtest/gtest.h>

#include "uacanet/uaca.hpp"
#include "uacanet/verify/checks.hpp"

using namespace uacanet;
using D = Tensor<double>;

namespace {

std::array<double, 3> areas_at(double m) {
  const auto a = area_maps(D({1, 1, 1, 1}, {m}));
  return {a.fg[0], a.bg[0], a.unc[0]};
}

// The mutation: foreground/background split at 0.4 instead of 0.5, with
// the uncertain map left as is.
AreaMaps<double> shifted_threshold(const D& m) {
  auto a = area_maps(m);
  a.fg = scalar_max(add_scalar(m, -0.4), 0.0);
  a.bg = scalar_max(rsub_scalar(m, 0.4), 0.0);
  return a;
}

}  // namespace

TEST(AreaMaps, SymmetryPoint) {
  EXPECT_EQ(areas_at(0.5), (std::array<double, 3>{0, 0, 0.5}));
}

TEST(AreaMaps, Saturation) {
  EXPECT_EQ(areas_at(1.0), (std::array<double, 3>{0.5, 0, 0}));
  EXPECT_EQ(areas_at(0.0), (std::array<double, 3>{0, 0.5, 0}));
}

TEST(AreaMaps, PointEight) {
  const auto a = areas_at(0.8);
  EXPECT_NEAR(a[0], 0.3, 1e-15);
  EXPECT_EQ(a[1], 0.0);
  EXPECT_NEAR(a[2], 0.2, 1e-15);
}

TEST(AreaMaps, IdentitiesOnTenThousandSamples) {
  const auto e = verify::area_identity_errors(10000, 11);
  EXPECT_LE(e.sum_to_half, 1e-6);
  EXPECT_LE(e.disjoint, 1e-6);
  EXPECT_LE(e.reconstruction, 1e-6);
  EXPECT_EQ(e.negativity, 0.0);
}

TEST(AreaMaps, MutatedThresholdBreaksSumIdentity) {
  const auto e = verify::area_identity_errors(10000, 11, shifted_threshold);
  EXPECT_GT(e.sum_to_half, 1e-2);
  EXPECT_GT(e.reconstruction, 1e-2);
}

TEST(ContextVectors, ZeroMapGivesZeroVector) {
  std::mt19937_64 rng(1);
  auto x = D::randn({1, 3, 4, 4}, rng);
  AreaMaps<double> a{D::zeros({1, 1, 4, 4}), D::zeros({1, 1, 4, 4}), D::zeros({1, 1, 4, 4})};
  for (const auto& v : context_vectors(x, a).items)
    for (double c : v.values()) EXPECT_EQ(c, 0.0);
}

TEST(ContextVectors, ConstantFeaturesScaleByMapMass) {
  D x = D::zeros({1, 3, 4, 4});
  const double c0[3] = {0.5, -1.25, 2.0};
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 16; ++i) x[c * 16 + i] = c0[c];
  std::mt19937_64 rng(2);
  auto mu = D::uniform({1, 1, 4, 4}, rng, 0.0, 0.5);
  double mass = 0;
  for (double v : mu.values()) mass += v;
  AreaMaps<double> a{D::zeros({1, 1, 4, 4}), D::zeros({1, 1, 4, 4}), mu};
  const auto v = context_vectors(x, a);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(v.unc()[c], c0[c] * mass, 1e-12);
}

TEST(ContextVectors, MatchesLoopOracle) {
  std::mt19937_64 rng(3);
  auto x = D::randn({1, 3, 4, 4}, rng);
  auto m = D::uniform({1, 1, 4, 4}, rng, 0.0, 1.0);
  const auto v = context_vectors(x, area_maps(m));
  const auto ov = oracle::context_vectors(oracle::Field::from(x), oracle::area_fields(oracle::Field::from(m), true));
  for (std::size_t a = 0; a < 3; ++a)
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(v.items[a][c], ov[a][0][c], 1e-12);
}

TEST(SimilarityScores, EqualVectorsGiveThirds) {
  Initializer init(4);
  std::mt19937_64 rng(4);
  UACAParams<double> p(init, 4, 8);
  auto x = D::randn({1, 4, 3, 3}, rng);
  auto v0 = D::randn({1, 4, 1}, rng);
  ContextVectors<double> v{{v0, v0, v0}};
  for (const auto& s : similarity_scores(x, v, p))
    for (double val : s.values()) EXPECT_NEAR(val, 1.0 / 3.0, 1e-15);
}

TEST(SimilarityScores, PartitionOfUnity) {
  EXPECT_LE(verify::similarity_partition_error(100, 5), 1e-6);
}

TEST(SimilarityScores, MatchesLoopOracle) {
  Initializer init(6);
  std::mt19937_64 rng(6);
  UACAParams<double> p(init, 4, 8);
  auto x = D::randn({1, 4, 2, 2}, rng);
  auto m = D::uniform({1, 1, 2, 2}, rng, 0.0, 1.0);
  const auto v = context_vectors(x, area_maps(m));
  const auto s = similarity_scores(x, v, p);
  const auto xf = oracle::Field::from(x);
  const auto os = oracle::similarity_scores(xf, oracle::context_vectors(xf, oracle::area_fields(oracle::Field::from(m), true)), p);
  for (std::size_t a = 0; a < 3; ++a) EXPECT_LT(oracle::max_rel_diff(s[a], os[a]), 1e-5);
}

TEST(ContextAggregate, OneHotScoresSelectForeground) {
  Initializer init(7);
  std::mt19937_64 rng(7);
  UACAParams<double> p(init, 4, 6);
  ContextVectors<double> v{{D::randn({1, 4, 1}, rng), D::randn({1, 4, 1}, rng), D::randn({1, 4, 1}, rng)}};
  std::vector<D> scores{D::ones({1, 1, 2, 3}), D::zeros({1, 1, 2, 3}), D::zeros({1, 1, 2, 3})};
  const auto t = context_aggregate(scores, v, p);
  const auto expected = p.delta(reshape(detail::project_vector(p.omega, v.fg()), {1, 6, 1, 1}));
  for (std::int64_t c = 0; c < 6; ++c)
    for (std::int64_t i = 0; i < 6; ++i) EXPECT_NEAR(t[c * 6 + i], expected[c], 1e-12);
}

TEST(ContextAggregate, EqualVectorsIgnoreScores) {
  Initializer init(8);
  std::mt19937_64 rng(8);
  UACAParams<double> p(init, 4, 6);
  auto v0 = D::randn({1, 4, 1}, rng);
  ContextVectors<double> v{{v0, v0, v0}};
  auto raw = softmax_over<double>({D::randn({1, 1, 3, 3}, rng), D::randn({1, 1, 3, 3}, rng), D::randn({1, 1, 3, 3}, rng)});
  const auto t = context_aggregate(raw, v, p);
  const auto expected = p.delta(reshape(detail::project_vector(p.omega, v0), {1, 6, 1, 1}));
  for (std::int64_t c = 0; c < 6; ++c)
    for (std::int64_t i = 0; i < 9; ++i) EXPECT_NEAR(t[c * 9 + i], expected[c], 1e-12);
}

TEST(ContextAggregate, MatchesLoopOracle) {
  std::mt19937_64 rng(9);
  for (int k = 0; k < 5; ++k) {
    auto inst = verify::random_uaca_instance<double>(rng);
    const auto v = context_vectors(inst.x, area_maps(inst.m));
    const auto s = similarity_scores(inst.x, v, inst.params);
    const auto xf = oracle::Field::from(inst.x);
    const auto ov = oracle::context_vectors(xf, oracle::area_fields(oracle::Field::from(inst.m), true));
    const auto ot = oracle::context_aggregate(oracle::similarity_scores(xf, ov, inst.params), ov, inst.params);
    EXPECT_LT(oracle::max_rel_diff(context_aggregate(s, v, inst.params), ot), 1e-5);
  }
}

TEST(UacaForward, ShapeAndZeroHeadIdentity) {
  Initializer init(10);
  std::mt19937_64 rng(10);
  UACAParams<double> p(init, 8, 4);
  p.head.zero_();
  auto x = D::randn({2, 8, 6, 6}, rng);
  auto g = D::randn({2, 1, 3, 3}, rng);
  const auto out = uaca_forward(x, g, p);
  EXPECT_EQ(out.logit.shape(), (Shape{2, 1, 6, 6}));
  EXPECT_EQ(out.feature.shape(), (Shape{2, 4, 6, 6}));
  EXPECT_EQ(out.logit.values(), bilinear_resize(g, 6, 6).values());
}

TEST(UacaForward, WithoutUncertaintyUsesTwoAreas) {
  Initializer init(11);
  std::mt19937_64 rng(11);
  UACAParams<double> p(init, 4, 4, false);
  auto x = D::randn({1, 4, 3, 3}, rng);
  const auto v = context_vectors(x, area_maps(D::uniform({1, 1, 3, 3}, rng, 0.0, 1.0)), p.use_uncertainty);
  EXPECT_EQ(v.size(), 2u);
  EXPECT_NO_THROW(uaca_forward(x, D::randn({1, 1, 3, 3}, rng), p));
}

TEST(UacaForward, MatchesComposedOracles) {
  const auto e = verify::oracle_errors(10, 12);
  EXPECT_LT(e.uaca_context, 1e-5);
  EXPECT_LT(e.aggregate, 1e-5);
}
