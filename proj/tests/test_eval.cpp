#include <gtest/gtest.h>

#include <cmath>

#include "ensad/eval.hpp"

using namespace ensad;

namespace {

FrechetStats stats(std::vector<double> mu, std::vector<double> diag) {
  FrechetStats s;
  s.mu = Vec(mu);
  s.sigma = Mat::diag(diag);
  s.n = 2;
  return s;
}

Dataset eval_data(double sigma_source, double sigma_trans, std::uint64_t seed = 4) {
  SyntheticSpec s;
  s.n_items = 30;
  s.d = 8;
  s.m = 3;
  s.d_img = 6;
  s.sigma_source = sigma_source;
  s.sigma_trans = sigma_trans;
  s.seed = seed;
  return generate_synthetic(s);
}

Checkpoint eval_ckpt(std::uint64_t seed = 2) {
  GanConfig g;
  g.d = 8;
  g.d_z = 4;
  g.d_img = 6;
  g.gen_hidden = {12};
  g.disc_hidden = {10};
  return init_state({8, 4, 3, 0.2, false}, g, seed);
}

}  // namespace

TEST(FitGaussian, TwoPoints) {
  const auto s = fit_gaussian({Vec{0, 0}, Vec{2, 4}});
  EXPECT_EQ(s.mu, (Vec{1, 2}));
  EXPECT_DOUBLE_EQ(s.sigma(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(s.sigma(1, 1), 8.0);
  EXPECT_DOUBLE_EQ(s.sigma(0, 1), 4.0);
  EXPECT_EQ(s.sigma(1, 0), s.sigma(0, 1));
}

TEST(FitGaussian, IdenticalPointsHaveZeroCovariance) {
  const auto s = fit_gaussian(std::vector<Vec>(5, Vec{1.5, -2, 3}));
  EXPECT_EQ(s.mu, (Vec{1.5, -2, 3}));
  EXPECT_EQ(frobenius(s.sigma), 0.0);
}

TEST(FitGaussian, StandardNormalSample) {
  SeededRng rng(1);
  std::vector<Vec> xs;
  for (int i = 0; i < 10000; ++i) xs.push_back(gaussian(rng, 3));
  const auto s = fit_gaussian(xs);
  EXPECT_LT(norm(s.mu.span()), 0.05);
  EXPECT_LT(frobenius(s.sigma - Mat::identity(3)), 0.1);
}

TEST(FitGaussian, Errors) {
  EXPECT_THROW(fit_gaussian({Vec{1}}), ValidationError);
  EXPECT_THROW(fit_gaussian({Vec{1}, Vec{1, 2}}), ValidationError);
}

TEST(FrechetDistance, SelfIsZero) {
  SeededRng rng(2);
  std::vector<Vec> xs;
  for (int i = 0; i < 200; ++i) xs.push_back(gaussian(rng, 6));
  const auto s = fit_gaussian(xs);
  const auto r = frechet_distance_detail(s, s);
  EXPECT_LE(std::abs(r.raw), 1e-8);
  EXPECT_GE(r.value, 0.0);
  EXPECT_LE(r.value, 1e-8);
}

TEST(FrechetDistance, OneDimensional) {
  // 1 + 1 + 4 - 2 * sqrt(1 * 4)
  EXPECT_NEAR(frechet_distance(stats({0}, {1}), stats({1}, {4})), 2.0, 1e-12);
}

TEST(FrechetDistance, DiagonalSeparates) {
  const auto a = stats({0, 1, -1}, {1, 4, 0.25});
  const auto b = stats({1, 1, 2}, {9, 1, 1});
  double expect = 0;
  for (int i = 0; i < 3; ++i) {
    const double dm = a.mu[i] - b.mu[i];
    const double ds = std::sqrt(a.sigma(i, i)) - std::sqrt(b.sigma(i, i));
    expect += dm * dm + ds * ds;
  }
  EXPECT_NEAR(frechet_distance(a, b), expect, 1e-10);
}

TEST(FrechetDistance, SymmetricOnRandomCovariances) {
  SeededRng rng(3);
  for (int t = 0; t < 10; ++t) {
    std::vector<Vec> xa, xb;
    for (int i = 0; i < 30; ++i) {
      xa.push_back(gaussian(rng, 4));
      Vec v = gaussian(rng, 4);
      v[0] = 2 * v[0] + v[1];
      xb.push_back(v);
    }
    const auto a = fit_gaussian(xa), b = fit_gaussian(xb);
    const double ab = frechet_distance(a, b), ba = frechet_distance(b, a);
    EXPECT_GT(ab, 0.0);
    EXPECT_NEAR(ab, ba, 1e-8);
  }
}

// Monte-Carlo oracle (numpy/scipy, 300 replicates): FD between the two halves
// of 2000 N(0, I_3) draws has mean 0.0126 and a maximum of 0.042.
TEST(FrechetDistance, DisjointHalvesOfOneSampleAreClose) {
  SeededRng rng(4);
  std::vector<Vec> a, b;
  for (int i = 0; i < 2000; ++i) (i < 1000 ? a : b).push_back(gaussian(rng, 3));
  EXPECT_LT(frechet_distance(fit_gaussian(a), fit_gaussian(b)), 0.06);
}

// Same check at 10^4 draws in dimension 8: oracle mean 0.0104, max 0.019
// over 200 replicates.
TEST(FrechetDistance, DisjointHalvesInDimensionEight) {
  SeededRng rng(5);
  std::vector<Vec> a, b;
  for (int i = 0; i < 10000; ++i) (i < 5000 ? a : b).push_back(gaussian(rng, 8));
  const double fd = frechet_distance(fit_gaussian(a), fit_gaussian(b));
  EXPECT_LT(fd, 0.5);
  EXPECT_LT(fd, 0.04);
}

TEST(FrechetDistance, DimensionMismatch) {
  EXPECT_THROW(frechet_distance(stats({0}, {1}), stats({0, 0}, {1, 1})), ValidationError);
}

TEST(Evaluate, DeterministicAndNonNegative) {
  const auto ds = eval_data(0.4, 0.2);
  const auto ck = eval_ckpt();
  for (auto s : kAllStrategies) {
    const double a = evaluate(ck, ds, 50, s, 7);
    EXPECT_GE(a, 0.0);
    EXPECT_EQ(a, evaluate(ck, ds, 50, s, 7));
  }
  EXPECT_NE(evaluate(ck, ds, 50, Strategy::ensad, 7), evaluate(ck, ds, 50, Strategy::ensad, 8));
}

TEST(Evaluate, RealFeaturesAgainstThemselvesIsZero) {
  const auto ds = eval_data(0.4, 0.2);
  const auto st = fit_gaussian(real_features(eval_ckpt(), ds));
  EXPECT_LE(frechet_distance(st, st), 1e-8);
}

TEST(Evaluate, RejectsBadInputs) {
  const auto ds = eval_data(0.4, 0.2);
  const auto ck = eval_ckpt();
  EXPECT_THROW(evaluate(ck, ds, 1, Strategy::ensad, 0), ValidationError);
  auto other = ds;
  other.d_img = 5;
  for (auto& it : other.items) it.image.data = Vec(5);
  EXPECT_THROW(evaluate(ck, other, 10, Strategy::ensad, 0), ValidationError);
}

TEST(CompareStrategies, OneRowPerStrategy) {
  const auto ds = eval_data(0.4, 0.2);
  const auto rep = compare_strategies(eval_ckpt(), ds, 40, 3);
  ASSERT_EQ(rep.results.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(rep.results[k].strategy, kAllStrategies[k]);
    EXPECT_GE(rep.results[k].fd, 0.0);
  }
  EXPECT_EQ(rep.feature_space, "disc_fd");
  const auto j = to_json(rep);
  EXPECT_EQ(j["results"].size(), 4u);
  EXPECT_EQ(j["results"][0]["strategy"], "ensad");
  EXPECT_EQ(j["n_gen"], 40);
}

TEST(CompareStrategies, MatchesSingleStrategyEvaluation) {
  const auto ds = eval_data(0.4, 0.2);
  const auto ck = eval_ckpt();
  const auto rep = compare_strategies(ck, ds, 40, 3);
  for (auto s : kAllStrategies) EXPECT_EQ(rep.fd(s), evaluate(ck, ds, 40, s, 3));
}

// Without noise every translation equals the source embedding, so the
// adapter's output is h0 and matches the untranslated baseline.
TEST(CompareStrategies, ZeroNoiseEnsAdEqualsZeroShot) {
  const auto ds = eval_data(0.0, 0.0);
  const auto rep = compare_strategies(eval_ckpt(), ds, 60, 5);
  EXPECT_NEAR(rep.fd(Strategy::ensad), rep.fd(Strategy::zero_shot), 1e-9);
  EXPECT_NEAR(rep.fd(Strategy::mean_pool), rep.fd(Strategy::zero_shot), 1e-9);
}

TEST(CompareStrategies, ThreadCountDoesNotChangeResults) {
  const auto ds = eval_data(0.4, 0.2);
  const auto ck = eval_ckpt();
  const auto a = compare_strategies(ck, ds, 40, 9, 1);
  for (unsigned t : {2u, 4u, 8u}) {
    const auto b = compare_strategies(ck, ds, 40, 9, t);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(a.results[k].fd, b.results[k].fd);
  }
}
