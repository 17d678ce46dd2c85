// Copyright (c) 2026, The pgma Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <vector>

#include "pgma/episode/episode.hpp"

namespace pgma::train {

// Foreground wherever logit > 0.
template <typename T>
Mask threshold_logits(const Tensor<T>& logits) {
  Mask m(logits.shape());
  for (std::size_t i = 0; i < logits.size(); ++i) m[i] = logits[i] > T(0) ? 1 : 0;
  return m;
}

struct Overlap {
  std::size_t inter = 0, uni = 0;
};

inline Overlap overlap(const Mask& pred, const Mask& gt, bool foreground = true) {
  if (pred.shape() != gt.shape()) throw ShapeError("iou", pred.shape(), gt.shape());
  Overlap o;
  const std::uint8_t want = foreground ? 1 : 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = (pred[i] != 0) == (want == 1), b = (gt[i] != 0) == (want == 1);
    o.inter += a && b;
    o.uni += a || b;
  }
  return o;
}

// |pred & gt| / |pred | gt|; 1 when both are empty.
inline double iou(const Mask& pred, const Mask& gt) {
  const Overlap o = overlap(pred, gt);
  return o.uni == 0 ? 1.0 : static_cast<double>(o.inter) / static_cast<double>(o.uni);
}

// Class IoU is computed from intersections and unions summed over all
// episodes of the class; mIoU averages classes. FB-IoU averages the
// foreground and background IoU accumulated over all episodes.
class IouAccumulator {
 public:
  void add(int class_id, const Mask& pred, const Mask& gt) {
    const Overlap f = overlap(pred, gt, true), b = overlap(pred, gt, false);
    auto& c = per_class_[class_id];
    c.inter += f.inter;
    c.uni += f.uni;
    fg_.inter += f.inter;
    fg_.uni += f.uni;
    bg_.inter += b.inter;
    bg_.uni += b.uni;
    ++episodes_;
  }

  std::map<int, double> per_class() const {
    std::map<int, double> out;
    for (const auto& [c, o] : per_class_) out[c] = ratio(o);
    return out;
  }

  double miou() const {
    if (per_class_.empty()) return 0.0;
    double s = 0;
    for (const auto& [c, v] : per_class()) s += v;
    return s / static_cast<double>(per_class_.size());
  }

  double fbiou() const { return 0.5 * (ratio(fg_) + ratio(bg_)); }
  std::size_t episodes() const { return episodes_; }

 private:
  static double ratio(const Overlap& o) {
    return o.uni == 0 ? 1.0 : static_cast<double>(o.inter) / static_cast<double>(o.uni);
  }

  std::map<int, Overlap> per_class_;
  Overlap fg_, bg_;
  std::size_t episodes_ = 0;
};

}  // namespace pgma::train
