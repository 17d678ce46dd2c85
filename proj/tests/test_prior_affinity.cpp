// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pgma/affinity/affinity.hpp"
#include "pgma/episode/synth.hpp"
#include "pgma/prior/prior_adapter.hpp"
#include "support.hpp"

using namespace pgma;
using pgma::testing::grad_check;
using pgma::testing::randn;
using pgma::testing::randu;

namespace {

void expect_unit_range(const Tensor<double>& m) {
  for (double v : m.vec()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

// Double-loop cosine oracle.
double cosine(const Tensor<double>& a, std::size_t i, const Tensor<double>& b, std::size_t j) {
  const std::size_t d = a.dim(1);
  double dot = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < d; ++k) {
    dot += a.at(i, k) * b.at(j, k);
    na += a.at(i, k) * a.at(i, k);
    nb += b.at(j, k) * b.at(j, k);
  }
  return (na == 0 || nb == 0) ? 0.0 : dot / std::sqrt(na * nb);
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

// ---------------------------------------------------------------------------
// Min-max normalization

TEST(MinMax, HandExample) {
  auto m = prior::minmax_norm(Tensor<double>(Shape{3}, {0.2, 0.6, 1.0}));
  EXPECT_NEAR(m[0], 0.0, 1e-7);
  EXPECT_NEAR(m[1], 0.5, 1e-7);
  EXPECT_NEAR(m[2], 1.0, 1e-7);
}

TEST(MinMax, ConstantMapGivesZeros) {
  auto m = prior::minmax_norm(Tensor<double>(Shape{2, 2}, 0.37));
  for (double v : m.vec()) EXPECT_EQ(v, 0.0);
}

TEST(MinMax, UnitMapUnchangedAndIdempotent) {
  Tensor<double> u(Shape{4}, {0.0, 0.25, 1.0, 0.5});
  auto m = prior::minmax_norm(u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(m[i], u[i], 1e-7);
  Rng rng(1, "t");
  for (int trial = 0; trial < 50; ++trial) {
    auto once = prior::minmax_norm(randn({5, 5}, rng, 3.0));
    auto twice = prior::minmax_norm(once);
    for (std::size_t i = 0; i < once.size(); ++i) ASSERT_NEAR(once[i], twice[i], 1e-6);
    EXPECT_NEAR(once.min(), 0.0, 1e-6);
    EXPECT_NEAR(once.max(), 1.0, 1e-6);
  }
}

// ---------------------------------------------------------------------------
// Textual prior

TEST(TextualPrior, AlignedPixelHasRawCosineOne) {
  Tensor<double> text(Shape{3}, {0.3, -0.2, 0.9});
  Tensor<double> clip(Shape{1, 2, 3}, {0.3, -0.2, 0.9, 1.0, 0.0, 0.0});
  auto raw = prior::cosine_map<double>(clip, text);
  EXPECT_NEAR(raw[0], 1.0, 1e-12);
}

TEST(TextualPrior, SingleAlignedPixelOnOrthogonalBackground) {
  Tensor<double> text(Shape{2}, {1.0, 0.0});
  Tensor<double> clip(Shape{2, 2, 2}, {0.0, 1.0, 0.0, 2.0, 3.0, 0.0, 0.0, -1.0});
  auto p = prior::textual_prior<double>(clip, text);
  EXPECT_NEAR(p.map[2], 1.0, 1e-7);
  EXPECT_NEAR(p.map[0], 0.0, 1e-12);
  EXPECT_NEAR(p.map[1], 0.0, 1e-12);
  EXPECT_NEAR(p.map[3], 0.0, 1e-12);
  EXPECT_EQ(p.source, prior::PriorSource::TextualQuery);
}

TEST(TextualPrior, ZeroNormPixelIsZeroNotNan) {
  Tensor<double> text(Shape{2}, {1.0, 0.0});
  Tensor<double> clip(Shape{1, 3, 2}, {0.0, 0.0, 1.0, 0.0, -1.0, 0.0});
  auto raw = prior::cosine_map<double>(clip, text);
  EXPECT_EQ(raw[0], 0.0);
  auto p = prior::textual_prior<double>(clip, text);
  EXPECT_TRUE(p.map.all_finite());
}

TEST(TextualPrior, InvariantToTextScaleAndInRange) {
  Rng rng(2, "t");
  for (int trial = 0; trial < 20; ++trial) {
    auto clip = randn({4, 4, 6}, rng);
    auto text = randn({6}, rng);
    auto t3 = text;
    for (auto& v : t3.vec()) v *= 3.0;
    auto a = prior::textual_prior<double>(clip, text), b = prior::textual_prior<double>(clip, t3);
    for (std::size_t i = 0; i < a.map.size(); ++i) ASSERT_NEAR(a.map[i], b.map[i], 1e-12);
    expect_unit_range(a.map);
    auto up = prior::textual_prior<double>(clip, text, std::pair<std::size_t, std::size_t>{16, 16});
    EXPECT_EQ(up.map.shape(), (Shape{16, 16}));
    expect_unit_range(up.map);
  }
}

TEST(TextualPrior, NoiseFreeSyntheticForegroundScoresHigher) {
  SynthConfig c;
  c.feature_noise = 0.0;
  c.clip_noise = 0.0;
  SynthWorld w(c);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Episode ep = w.episode(static_cast<int>(s % 20), s);
    auto p = prior::textual_prior<double>(ep.query.clip_visual.cast<double>(), ep.text_embed.cast<double>(),
                                          std::pair{ep.query.height, ep.query.width});
    double fg = 0, bg = 0, nf = 0, nb = 0;
    for (std::size_t i = 0; i < p.map.size(); ++i) {
      if ((*ep.query_mask)[i]) fg += p.map[i], ++nf;
      else bg += p.map[i], ++nb;
    }
    EXPECT_GT(fg / nf, bg / nb) << "seed " << s;
  }
}

// ---------------------------------------------------------------------------
// Visual prior

TEST(VisualPrior, ColumnMaxThenNormalize) {
  // Two support pixels, three query pixels.
  Tensor<double> a(Shape{2, 3}, {0.9, 0.2, -0.5, 0.1, 0.4, 0.3});
  auto p = prior::visual_prior(a, 1, 3);
  const double raw[3] = {0.9, 0.4, 0.3};
  for (int j = 0; j < 3; ++j) EXPECT_NEAR(p.map[j], (raw[j] - 0.3) / (0.6 + 1e-8), 1e-9);
  EXPECT_FALSE(p.degenerate);
}

TEST(VisualPrior, AllZeroAffinityIsZeroAndFlagged) {
  auto p = prior::visual_prior(Tensor<double>(Shape{4, 4}), 2, 2);
  for (double v : p.map.vec()) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(p.degenerate);
}

TEST(VisualPrior, ArgmaxMatchesBruteForceNearestNeighbour) {
  Rng rng(3, "t");
  auto f = randn({4, 4, 5}, rng);
  auto fq = affinity::masked_flatten<double, double>(f);
  auto a = affinity::cosine_affinity(fq, fq);
  auto p = prior::visual_prior(a, 4, 4);
  // Identical images: every query pixel's best support match is itself, so
  // the raw map is constant 1 and normalizes to zeros.
  for (std::size_t j = 0; j < 16; ++j) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 16; ++i)
      if (cosine(fq, i, fq, j) > cosine(fq, best, fq, j)) best = i;
    EXPECT_EQ(best, j);
    EXPECT_NEAR(p.map[j], 0.0, 1e-6);
  }
}

TEST(VisualPrior, InvariantToSupportPixelPermutation) {
  Rng rng(4, "t");
  auto a = randu({6, 4}, rng, -1, 1);
  std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  Tensor<double> b(a.shape());
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 4; ++j) b.at(i, j) = a.at(perm[i], j);
  EXPECT_TRUE(prior::visual_prior(a, 2, 2).map == prior::visual_prior(b, 2, 2).map);
}

// ---------------------------------------------------------------------------
// Support priors

TEST(SupportPrior, FullMaskIsOnesAtEveryLevel) {
  Mask ones(Shape{32, 32}, 1);
  for (std::size_t g : {16u, 8u, 5u, 3u}) {
    auto p = prior::support_gt_prior<double>(ones, g, g);
    for (double v : p.map.vec()) EXPECT_NEAR(v, 1.0, 1e-12);
  }
}

TEST(SupportPrior, CheckerboardAveragesToQuarter) {
  Mask m(Shape{2, 2}, {1, 0, 0, 0});
  EXPECT_NEAR(prior::support_gt_prior<double>(m, 1, 1).map[0], 0.25, 1e-12);
}

TEST(SupportPrior, AreaResizePreservesMeanAtNonIntegerRatios) {
  Rng rng(5, "t");
  Mask m(Shape{30, 30});
  for (auto& v : m.vec()) v = rng.bernoulli(0.3);
  double mean_in = 0;
  for (auto v : m.vec()) mean_in += v;
  mean_in /= m.size();
  auto p = prior::area_resize<double>(m, 7, 11);
  double mean_out = 0;
  for (double v : p.vec()) mean_out += v;
  EXPECT_NEAR(mean_out / p.size(), mean_in, 1e-12);
  expect_unit_range(p);
}

TEST(SupportPrior, BlobSurvivesDownUpSampling) {
  for (int seed = 0; seed < 10; ++seed) {
    Rng rng(seed, "blob");
    Mask m(Shape{32, 32});
    const double cx = rng.uniform(10, 22), cy = rng.uniform(10, 22), r = rng.uniform(5, 9);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) m[y * 32 + x] = (x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy) < r * r;
    auto down = prior::support_gt_prior<double>(m, 16, 16).map;
    auto up = prior::resize(down, 32, 32);
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
      const bool a = m[i], b = up[i] >= 0.5;
      inter += a && b;
      uni += a || b;
    }
    EXPECT_GE(static_cast<double>(inter) / uni, 0.8) << seed;
  }
}

// ---------------------------------------------------------------------------
// Parameter-free affinities

TEST(MaskedFlatten, Cases) {
  Rng rng(6, "t");
  auto f = randn({2, 2, 3}, rng);
  auto plain = affinity::masked_flatten<double, double>(f);
  EXPECT_EQ(plain.shape(), (Shape{4, 3}));
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(plain[i], f[i]);
  Tensor<double> ones(Shape{2, 2}, 1.0);
  EXPECT_TRUE(affinity::masked_flatten<double>(f, &ones) == plain);
  Tensor<double> zero(Shape{2, 2});
  const auto zeroed = affinity::masked_flatten<double>(f, &zero);
  for (double v : zeroed.vec()) EXPECT_EQ(v, 0.0);
  Tensor<double> single(Shape{2, 2}, {0, 0, 1, 0});
  auto s = affinity::masked_flatten<double>(f, &single);
  for (std::size_t r = 0; r < 4; ++r) {
    bool nonzero = false;
    for (std::size_t k = 0; k < 3; ++k) nonzero = nonzero || s.at(r, k) != 0.0;
    EXPECT_EQ(nonzero, r == 2);
  }
  Tensor<double> wrong(Shape{3, 2});
  EXPECT_THROW(affinity::masked_flatten<double>(f, &wrong), ShapeError);
}

TEST(Affinity, MatchesBruteForceOn100Instances) {
  Rng rng(7, "t");
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t hs = 2 + trial % 3, hq = 3, d = 4;
    auto fs = randn({hs, hs, d}, rng), fq = randn({hq, hq, d}, rng);
    // Half the instances use a (possibly fractional) support mask.
    Tensor<double> mask = randu({hs, hs}, rng, 0, 1);
    for (auto& v : mask.vec()) v = v < 0.3 ? 0.0 : (trial % 4 == 0 ? v : 1.0);
    auto fs_hat = trial % 2 ? affinity::masked_flatten<double>(fs, &mask) : affinity::masked_flatten<double, double>(fs);
    auto fq_hat = affinity::masked_flatten<double, double>(fq);
    auto asq = affinity::cross_affinity(fs_hat, fq_hat).matrix;
    auto ass = affinity::self_affinity(fs_hat, affinity::AffinityKind::SelfSS).matrix;
    auto aqq = affinity::self_affinity(fq_hat).matrix;
    for (std::size_t i = 0; i < hs * hs; ++i) {
      for (std::size_t j = 0; j < hq * hq; ++j) worst = std::max(worst, std::abs(asq.at(i, j) - cosine(fs_hat, i, fq_hat, j)));
      for (std::size_t j = 0; j < hs * hs; ++j) worst = std::max(worst, std::abs(ass.at(i, j) - cosine(fs_hat, i, fs_hat, j)));
    }
    for (std::size_t i = 0; i < hq * hq; ++i)
      for (std::size_t j = 0; j < hq * hq; ++j) worst = std::max(worst, std::abs(aqq.at(i, j) - cosine(fq_hat, i, fq_hat, j)));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Affinity, SelfIsSymmetricWithUnitDiagonal) {
  Rng rng(8, "t");
  auto f = affinity::masked_flatten<double, double>(randn({4, 4, 6}, rng));
  auto a = affinity::self_affinity(f).matrix;
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_NEAR(a.at(i, i), 1.0, 1e-5);
    for (std::size_t j = 0; j < 16; ++j) {
      EXPECT_EQ(a.at(i, j), a.at(j, i));
      EXPECT_LE(std::abs(a.at(i, j)), 1.0 + 1e-9);
    }
  }
}

TEST(Affinity, IdenticalInputsGiveSymmetricCross) {
  Rng rng(9, "t");
  auto f = affinity::masked_flatten<double, double>(randn({3, 3, 4}, rng));
  auto a = affinity::cross_affinity(f, f).matrix;
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_NEAR(a.at(i, i), 1.0, 1e-9);
    for (std::size_t j = 0; j < 9; ++j) EXPECT_NEAR(a.at(i, j), a.at(j, i), 1e-9);
  }
}

TEST(Affinity, OrthogonalSetsGiveZero) {
  Tensor<double> a(Shape{2, 4}, {1, 0, 0, 0, 0, 2, 0, 0});
  Tensor<double> b(Shape{3, 4}, {0, 0, 1, 0, 0, 0, 0, 3, 0, 0, 1, 1});
  const auto ab = affinity::cross_affinity(a, b);
  for (double v : ab.matrix.vec()) EXPECT_EQ(v, 0.0);
}

TEST(Affinity, MaskedSupportRowsAndColumnsAreZero) {
  Rng rng(10, "t");
  auto f = randn({2, 2, 3}, rng);
  Tensor<double> mask(Shape{2, 2}, {1, 0, 1, 0});
  auto a = affinity::self_affinity(affinity::masked_flatten<double>(f, &mask)).matrix;
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(a.at(1, i), 0.0);
    EXPECT_EQ(a.at(i, 3), 0.0);
  }
}

TEST(Affinity, InvariantToPositivePerPixelScaling) {
  Rng rng(11, "t");
  auto fs = randn({3, 3, 5}, rng), fq = randn({3, 3, 5}, rng);
  auto c = randu({3, 3}, rng, 0.1, 10.0);
  auto scaled = fs;
  for (std::size_t p = 0; p < 9; ++p)
    for (std::size_t k = 0; k < 5; ++k) scaled[p * 5 + k] *= c[p];
  auto a = affinity::cross_affinity(affinity::masked_flatten<double, double>(fs), affinity::masked_flatten<double, double>(fq));
  auto b = affinity::cross_affinity(affinity::masked_flatten<double, double>(scaled), affinity::masked_flatten<double, double>(fq));
  for (std::size_t i = 0; i < a.matrix.size(); ++i) EXPECT_NEAR(a.matrix[i], b.matrix[i], 1e-12);
}

TEST(Affinity, SupportPermutationPermutesRows) {
  Rng rng(12, "t");
  auto fs = affinity::masked_flatten<double, double>(randn({2, 2, 4}, rng));
  auto fq = affinity::masked_flatten<double, double>(randn({2, 2, 4}, rng));
  const std::size_t perm[4] = {2, 0, 3, 1};
  Tensor<double> ps(fs.shape());
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t k = 0; k < 4; ++k) ps.at(i, k) = fs.at(perm[i], k);
  auto a = affinity::cross_affinity(fs, fq).matrix, b = affinity::cross_affinity(ps, fq).matrix;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(b.at(i, j), a.at(perm[i], j));
}

// ---------------------------------------------------------------------------
// High-order affinities

TEST(HighOrder, ShapeSweep) {
  for (std::size_t gs = 2; gs <= 6; ++gs)
    for (std::size_t gq : {2u, 4u, 6u}) {
      const std::size_t Ls = gs * gs, Lq = gq * gq;
      Rng rng(gs * 10 + gq, "init");
      ParamStore<double> ps;
      affinity::add_high_order_params(ps, 0, affinity::HighOrderDims{Ls, Lq, 16, 4, 16}, rng);
      Graph<double> g;
      auto ass = g.constant(randu({Ls, Ls}, rng, -1, 1));
      auto asq = g.constant(randu({Ls, Lq}, rng, -1, 1));
      auto aqq = g.constant(randu({Lq, Lq}, rng, -1, 1));
      auto hsq = affinity::high_order_cross(g, ps, 0, ass, asq, 4);
      EXPECT_EQ(hsq.shape(), (Shape{Ls, Lq}));
      auto hqq = affinity::high_order_self(g, ps, 0, hsq, aqq, 4);
      EXPECT_EQ(hqq.shape(), (Shape{Lq, Lq}));
      if (Ls == Lq) EXPECT_EQ(affinity::high_order_self_query_only(g, ps, 0, aqq, 4).shape(), (Shape{Lq, Lq}));
      else EXPECT_THROW(affinity::high_order_self_query_only(g, ps, 0, aqq, 4), ShapeError);
    }
}

TEST(HighOrder, RejectsMismatchedLevelDims) {
  Rng rng(1, "init");
  ParamStore<double> ps;
  affinity::add_high_order_params(ps, 0, affinity::HighOrderDims{4, 4, 8, 2, 8}, rng);
  Graph<double> g;
  auto ass = g.constant(Tensor<double>(Shape{9, 9}));
  auto asq = g.constant(Tensor<double>(Shape{9, 4}));
  EXPECT_THROW(affinity::high_order_cross(g, ps, 0, ass, asq, 2), ShapeError);
}

TEST(HighOrder, ZeroedBranchesPreserveCorrelation) {
  const std::size_t Ls = 16, Lq = 16;
  Rng rng(13, "init");
  ParamStore<double> ps;
  affinity::add_high_order_params(ps, 0, affinity::HighOrderDims{Ls, Lq, 16, 4, 16}, rng);
  affinity::zero_high_order_branches(ps, 0);
  auto fs = affinity::masked_flatten<double, double>(randn({4, 4, 8}, rng));
  auto fq = affinity::masked_flatten<double, double>(randn({4, 4, 8}, rng));
  Graph<double> g;
  auto asq_t = affinity::cross_affinity(fs, fq).matrix;
  auto hsq = affinity::high_order_cross(g, ps, 0, g.constant(affinity::self_affinity(fs).matrix), g.constant(asq_t), 4);
  EXPECT_GT(pearson(asq_t.vec(), hsq.value().vec()), 0.9);
  auto aqq_t = affinity::self_affinity(fq).matrix;
  auto hqq = affinity::high_order_self(g, ps, 0, hsq, g.constant(aqq_t), 4);
  EXPECT_GT(pearson(aqq_t.vec(), hqq.value().vec()), 0.9);
}

TEST(HighOrder, EveryParameterReceivesGradient) {
  const std::size_t Ls = 9, Lq = 9;
  Rng rng(14, "init");
  ParamStore<double> ps;
  affinity::add_high_order_params(ps, 0, affinity::HighOrderDims{Ls, Lq, 8, 2, 8}, rng);
  Graph<double> g;
  auto hsq = affinity::high_order_cross(g, ps, 0, g.constant(randu({Ls, Ls}, rng, -1, 1)),
                                        g.constant(randu({Ls, Lq}, rng, -1, 1)), 2);
  auto hqq = affinity::high_order_self(g, ps, 0, hsq, g.constant(randu({Lq, Lq}, rng, -1, 1)), 2);
  auto w = g.constant(randn({Lq, Lq}, rng));
  auto w2 = g.constant(randn({Ls, Lq}, rng));
  g.backward(add(sum_all(mul(hqq, w)), sum_all(mul(hsq, w2))));
  const auto grads = g.param_grads();
  EXPECT_EQ(grads.size(), ps.size());
  for (const auto& [p, grad] : grads) {
    double n = 0;
    for (double v : grad.vec()) n += v * v;
    EXPECT_GT(n, 0.0) << p->name;
  }
}

TEST(HighOrder, FiniteDifferenceThroughBothBlocks) {
  const std::size_t Ls = 4, Lq = 4;
  Rng rng(15, "init");
  ParamStore<double> ps;
  affinity::add_high_order_params(ps, 0, affinity::HighOrderDims{Ls, Lq, 8, 2, 8}, rng);
  auto ass = randu({Ls, Ls}, rng, -1, 1), asq = randu({Ls, Lq}, rng, -1, 1), aqq = randu({Lq, Lq}, rng, -1, 1);
  const double err = grad_check(
      [&](Graph<double>& g, const std::vector<Var<double>>& v) {
        auto hsq = affinity::high_order_cross(g, ps, 0, v[0], v[1], 2);
        return affinity::high_order_self(g, ps, 0, hsq, v[2], 2);
      },
      {ass, asq, aqq});
  EXPECT_LT(err, 1e-3);
}

TEST(HighOrder, DeterministicGivenParams) {
  Rng rng(16, "init");
  ParamStore<double> ps;
  affinity::add_high_order_params(ps, 0, affinity::HighOrderDims{4, 4, 8, 2, 8}, rng);
  auto ass = randu({4, 4}, rng, -1, 1), asq = randu({4, 4}, rng, -1, 1);
  Graph<double> g1, g2;
  auto a = affinity::high_order_cross(g1, ps, 0, g1.constant(ass), g1.constant(asq), 2).value();
  auto b = affinity::high_order_cross(g2, ps, 0, g2.constant(ass), g2.constant(asq), 2).value();
  EXPECT_TRUE(a == b);
}
