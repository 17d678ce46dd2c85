// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0
//
// Segmentation losses on probability maps.

#pragma once

#include <stdexcept>

#include "pgma/core/ops.hpp"

namespace pgma::train {

inline constexpr double kProbClamp = 1e-7;

template <typename T>
struct LossParts {
  Var<T> total, dice, ce;
};

// 1 - 2*sum(y*p) / (sum(y^2) + sum(p^2)). A tiny floor keeps the empty/empty
// case finite.
template <typename T>
Var<T> dice_loss(Var<T> pred, Var<T> gt) {
  if (pred.shape() != gt.shape()) throw ShapeError("dice_loss", pred.shape(), gt.shape());
  Var<T> inter = sum_all(mul(pred, gt));
  Var<T> denom = add_scalar(add(sum_all(mul(gt, gt)), sum_all(mul(pred, pred))), T(1e-12));
  return add_scalar(scale(div(inter, denom), T(-2)), T(1));
}

// Pixel-mean binary cross-entropy with predictions clamped to [eps, 1 - eps].
template <typename T>
Var<T> ce_loss(Var<T> pred, Var<T> gt) {
  if (pred.shape() != gt.shape()) throw ShapeError("ce_loss", pred.shape(), gt.shape());
  const T eps = T(kProbClamp);
  Var<T> p = clamp(pred, eps, T(1) - eps);
  Var<T> one_minus_p = add_scalar(scale(p, T(-1)), T(1));
  Var<T> one_minus_y = add_scalar(scale(gt, T(-1)), T(1));
  Var<T> ll = add(mul(gt, log(p)), mul(one_minus_y, log(one_minus_p)));
  return scale(mean_all(ll), T(-1));
}

template <typename T>
LossParts<T> total_loss(Var<T> pred, Var<T> gt, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("total_loss: lambda must be in [0, 1]");
  Var<T> d = dice_loss(pred, gt);
  Var<T> c = ce_loss(pred, gt);
  Var<T> t = add(scale(d, static_cast<T>(lambda)), scale(c, static_cast<T>(1.0 - lambda)));
  return {t, d, c};
}

// Loss on raw logits (sigmoid applied here).
template <typename T>
LossParts<T> logit_loss(Var<T> logits, Var<T> gt, double lambda) {
  return total_loss(sigmoid(logits), gt, lambda);
}

}  // namespace pgma::train
