// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "pgma/core/nn.hpp"
#include "pgma/core/ops.hpp"
#include "support.hpp"

using namespace pgma;
using pgma::testing::grad_check;
using pgma::testing::randn;
using pgma::testing::randu;
using V = std::vector<Var<double>>;

namespace {

constexpr double kOpTol = 1e-4;

// Moves entries away from zero so kinked ops are differentiable at the point.
Tensor<double> away_from_zero(Tensor<double> t, double margin = 0.1) {
  for (auto& v : t.vec()) v = v >= 0 ? v + margin : v - margin;
  return t;
}

}  // namespace

TEST(OpsGrad, Matmul) {
  Rng rng(1, "t");
  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      auto a = randn(ta ? Shape{4, 3} : Shape{3, 4}, rng);
      auto b = randn(tb ? Shape{5, 4} : Shape{4, 5}, rng);
      EXPECT_LT(grad_check([&](Graph<double>&, const V& v) { return matmul(v[0], v[1], ta, tb); }, {a, b}), kOpTol);
    }
}

TEST(OpsGrad, ShapeOps) {
  Rng rng(2, "t");
  auto a = randn({3, 4}, rng);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return transpose(v[0]); }, {a}), kOpTol);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return reshape(v[0], Shape{2, 6}); }, {a}), kOpTol);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return slice(v[0], 1, 1, 2); }, {a}), kOpTol);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return slice(v[0], 0, 2, 1); }, {a}), kOpTol);
  auto x = randn({2, 3, 2}, rng), y = randn({2, 3, 3}, rng), z = randn({2, 3, 1}, rng);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return concat(v, 2); }, {x, y, z}), kOpTol);
  auto p = randn({2, 3}, rng), q = randn({1, 3}, rng);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return concat(v, 0); }, {p, q}), kOpTol);
}

TEST(OpsGrad, Elementwise) {
  Rng rng(3, "t");
  auto a = randn({3, 4}, rng), b = randn({3, 4}, rng);
  auto pos = randu({3, 4}, rng, 0.5, 2.0);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return add(v[0], v[1]); }, {a, b}), kOpTol);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return sub(v[0], v[1]); }, {a, b}), kOpTol);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return mul(v[0], v[1]); }, {a, b}), kOpTol);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return div(v[0], v[1]); }, {a, pos}), kOpTol);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return scale(v[0], 2.5); }, {a}), kOpTol);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return add_scalar(v[0], -1.0); }, {a}), kOpTol);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return log(v[0]); }, {pos}), kOpTol);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return sigmoid(v[0]); }, {a}), kOpTol);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return gelu(v[0]); }, {a}), kOpTol);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return relu(v[0]); }, {away_from_zero(a)}), kOpTol);
  // Same variable on both sides accumulates two contributions.
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return mul(v[0], v[0]); }, {a}), kOpTol);
}

TEST(OpsGrad, MaximumAndClamp) {
  Rng rng(4, "t");
  auto a = randn({4, 4}, rng);
  auto b = a;
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = a[i] + (i % 2 ? 0.5 : -0.5);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return maximum(v[0], v[1]); }, {a, b}), kOpTol);
  Tensor<double> c(Shape{6}, {-2.0, -0.7, 0.1, 0.4, 0.8, 3.0});
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return clamp(v[0], -1.0, 1.0); }, {c}), kOpTol);
}

TEST(OpsGrad, BiasAndRowScale) {
  Rng rng(5, "t");
  auto a = randn({3, 4}, rng), bias = randn({4}, rng), rows = randn({3}, rng);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return add_bias(v[0], v[1]); }, {a, bias}), kOpTol);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return scale_rows(v[0], v[1]); }, {a, rows}), kOpTol);
  auto x3 = randn({2, 3, 4}, rng);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return add_bias(v[0], v[1]); }, {x3, bias}), kOpTol);
}

TEST(OpsGrad, Reductions) {
  Rng rng(6, "t");
  auto a = randn({3, 5}, rng);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return sum_all(v[0]); }, {a}), kOpTol);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return mean_all(v[0]); }, {a}), kOpTol);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return max_along(v[0], 0); }, {a}), kOpTol);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return max_along(v[0], 1); }, {a}), kOpTol);
}

TEST(OpsGrad, SoftmaxBothAxes) {
  Rng rng(7, "t");
  auto a = randn({4, 5}, rng, 2.0);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return softmax(v[0], 0); }, {a}), kOpTol);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return softmax(v[0], 1); }, {a}), kOpTol);
}

TEST(OpsGrad, LayerNorm) {
  Rng rng(8, "t");
  auto x = randn({3, 6}, rng), gamma = randn({6}, rng), beta = randn({6}, rng);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return layer_norm(v[0], v[1], v[2]); }, {x, gamma, beta}),
            kOpTol);
  auto x3 = randn({2, 2, 6}, rng);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return layer_norm(v[0], v[1], v[2]); }, {x3, gamma, beta}),
            kOpTol);
}

TEST(OpsGrad, MinMaxNormalize) {
  Rng rng(9, "t");
  auto x = randn({5, 5}, rng);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return minmax_normalize(v[0]); }, {x}), kOpTol);
}

TEST(OpsGrad, Conv2d) {
  Rng rng(10, "t");
  for (std::size_t k : {1u, 3u}) {
    auto x = randn({4, 5, 3}, rng), w = randn({k * k * 3, 2}, rng), b = randn({2}, rng);
    EXPECT_LT(grad_check([k](Graph<double>&, const V& v) { return conv2d(v[0], v[1], v[2], k); }, {x, w, b}), kOpTol)
        << "k=" << k;
  }
}

TEST(OpsGrad, ResizeBilinear) {
  Rng rng(11, "t");
  auto x = randn({3, 4, 2}, rng);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return resize_bilinear(v[0], 6, 8); }, {x}), kOpTol);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return resize_bilinear(v[0], 2, 3); }, {x}), kOpTol);
  EXPECT_LT(grad_check([](Graph<double>&, const V& v) { return resize_bilinear(v[0], 5, 5); }, {x}), kOpTol);
}

TEST(OpsGrad, MultiHeadAttention) {
  Rng rng(12, "t");
  ParamStore<double> ps;
  nn::add_attention(ps, "att", nn::AttentionDims{5, 4, 8, 2, 5}, rng);
  auto q = randn({3, 5}, rng), kv = randn({6, 4}, rng);
  EXPECT_LT(grad_check(
                [&](Graph<double>& g, const V& v) { return nn::multi_head_attention(g, ps, "att", v[0], v[1], 2); },
                {q, kv}),
            kOpTol);
}

// ---------------------------------------------------------------------------
// Forward values

TEST(OpsValue, MatmulMatchesLoops) {
  Rng rng(20, "t");
  auto a = randn({3, 4}, rng), b = randn({4, 2}, rng);
  Graph<double> g;
  auto c = matmul(g.constant(a), g.constant(b)).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 4; ++k) s += a.at(i, k) * b.at(k, j);
      EXPECT_NEAR(c.at(i, j), s, 1e-12);
    }
}

TEST(OpsValue, SoftmaxIsShiftInvariantAndNormalized) {
  Rng rng(21, "t");
  auto a = randn({4, 6}, rng, 3.0);
  Graph<double> g;
  auto s = softmax(g.constant(a), 1).value();
  auto s2 = softmax(add_scalar(g.constant(a), 1000.0), 1).value();
  for (std::size_t i = 0; i < 4; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < 6; ++j) row += s.at(i, j);
    EXPECT_NEAR(row, 1.0, 1e-12);
  }
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], s2[i], 1e-12);
}

TEST(OpsValue, GeluUsesErf) {
  Graph<double> g;
  auto y = gelu(g.constant(Tensor<double>(Shape{3}, {-1.0, 0.0, 2.0}))).value();
  for (auto [i, x] : {std::pair{0, -1.0}, {1, 0.0}, {2, 2.0}}) {
    EXPECT_NEAR(y[i], 0.5 * x * (1 + std::erf(x / std::sqrt(2.0))), 1e-12);
  }
}

TEST(OpsValue, SigmoidIsStableForLargeInputs) {
  Graph<double> g;
  auto y = sigmoid(g.constant(Tensor<double>(Shape{2}, {-800.0, 800.0}))).value();
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 1.0);
}

TEST(OpsValue, MinMaxNormalizeRangeAndConstant) {
  Graph<double> g;
  auto y = minmax_normalize(g.constant(Tensor<double>(Shape{4}, {2.0, 4.0, 3.0, 6.0}))).value();
  EXPECT_NEAR(y[0], 0.0, 1e-12);
  EXPECT_NEAR(y[3], 4.0 / (4.0 + 1e-8), 1e-12);
  auto c = minmax_normalize(g.constant(Tensor<double>(Shape{3}, 5.0))).value();
  for (auto v : c.vec()) EXPECT_EQ(v, 0.0);
}

TEST(OpsValue, Conv3x3MatchesDirectSum) {
  Rng rng(22, "t");
  auto x = randn({4, 3, 2}, rng), w = randn({18, 3}, rng), b = randn({3}, rng);
  Graph<double> g;
  auto y = conv2d(g.constant(x), g.constant(w), g.constant(b), 3).value();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j)
      for (std::size_t o = 0; o < 3; ++o) {
        double s = b[o];
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = i + dy, xx = j + dx;
            if (yy < 0 || yy >= 4 || xx < 0 || xx >= 3) continue;
            for (std::size_t c = 0; c < 2; ++c) {
              const std::size_t row = ((dy + 1) * 3 + (dx + 1)) * 2 + c;
              s += x.at(yy, xx, c) * w.at(row, o);
            }
          }
        EXPECT_NEAR(y.at(i, j, o), s, 1e-10);
      }
}

TEST(OpsValue, ResizeKeepsConstantsAndIdentity) {
  Graph<double> g;
  auto c = resize_bilinear(g.constant(Tensor<double>(Shape{3, 3, 1}, 0.7)), 7, 5).value();
  for (auto v : c.vec()) EXPECT_NEAR(v, 0.7, 1e-12);
  Rng rng(23, "t");
  auto x = randn({4, 4, 2}, rng);
  auto y = resize_bilinear(g.constant(x), 4, 4).value();
  EXPECT_TRUE(y == x);
}

TEST(OpsValue, ResizeDownsamplesByAveragingPairs) {
  // Half-pixel centers: a 2x downsample samples midway between pixel pairs.
  Tensor<double> x(Shape{1, 4, 1}, {0.0, 2.0, 4.0, 6.0});
  Graph<double> g;
  auto y = resize_bilinear(g.constant(x), 1, 2).value();
  EXPECT_NEAR(y[0], 1.0, 1e-12);
  EXPECT_NEAR(y[1], 5.0, 1e-12);
}

TEST(OpsErrors, ShapeMismatchesNameBothShapes) {
  Graph<double> g;
  auto a = g.constant(Tensor<double>(Shape{2, 3}));
  auto b = g.constant(Tensor<double>(Shape{2, 3}));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.op(), "matmul");
    EXPECT_EQ(e.lhs(), (Shape{2, 3}));
    EXPECT_EQ(e.rhs(), (Shape{2, 3}));
  }
  EXPECT_THROW(add(a, g.constant(Tensor<double>(Shape{3, 2}))), ShapeError);
  EXPECT_THROW(conv2d(g.constant(Tensor<double>(Shape{2, 2, 1})), g.constant(Tensor<double>(Shape{4, 1})),
                      g.constant(Tensor<double>(Shape{1})), 3),
               ShapeError);
}

TEST(Graph, BackwardRejectsNonScalarAndReuse) {
  Graph<double> g;
  auto x = g.leaf(Tensor<double>(Shape{3}, 1.0));
  EXPECT_THROW(g.backward(x), ShapeError);
  auto s = sum_all(x);
  g.backward(s);
  EXPECT_THROW(g.backward(s), std::logic_error);
}

TEST(Graph, FanOutAccumulates) {
  Graph<double> g;
  auto x = g.leaf(Tensor<double>(Shape{2}, {1.0, 2.0}));
  auto y = sum_all(add(mul(x, x), scale(x, 3.0)));
  g.backward(y);
  auto gx = g.grad(x);
  EXPECT_NEAR(gx[0], 5.0, 1e-12);
  EXPECT_NEAR(gx[1], 7.0, 1e-12);
}

TEST(Graph, ConstantsGetNoGradientAndNoClosures) {
  Graph<double> g;
  auto c = g.constant(Tensor<double>(Shape{2}, 1.0));
  auto y = sum_all(mul(c, c));
  EXPECT_FALSE(y.requires_grad());
  g.backward(y);
  EXPECT_EQ(g.last_backward_visits(), 0u);
}
