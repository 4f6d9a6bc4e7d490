#pragma once

#include "segxray/mask.hpp"

namespace segxray {

// Dice coefficient 2|P∩G| / (|P|+|G|); two empty masks count as a perfect
// match (1.0).
inline double dice(const Mask& pred, const Mask& gt) {
  if (pred.h != gt.h || pred.w != gt.w) throw ShapeError("dice: shape mismatch");
  int64_t inter = 0, total = 0;
  for (size_t i = 0; i < pred.v.size(); ++i) {
    const bool p = pred.v[i], g = gt.v[i];
    inter += (p && g) ? 1 : 0;
    total += (p ? 1 : 0) + (g ? 1 : 0);
  }
  if (total == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

// Intersection over union; an empty union scores 0.
inline double iou(const Mask& a, const Mask& b) {
  if (a.h != b.h || a.w != b.w) throw ShapeError("iou: shape mismatch");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    const bool p = a.v[i], g = b.v[i];
    inter += (p && g) ? 1 : 0;
    uni += (p || g) ? 1 : 0;
  }
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

struct SegMetrics {
  double dice_wt = 0.0;
  double dice_tc = 0.0;
  double dice_et = 0.0;
};

}  // namespace segxray
