#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "segxray/errors.hpp"
#include "segxray/mask.hpp"
#include "segxray/rng.hpp"
#include "segxray/tensor.hpp"

namespace segxray {

// Label values of the synthetic phantoms.
enum Label : uint8_t {
  kBackground = 0,
  kBrainOnly = 1,
  kEdema = 2,
  kCoreNonEnhancing = 3,
  kEnhancing = 4,
};

// Model target classes: healthy brain folds into background; the three
// tumor labels map onto channels 1..3.
inline int class_of_label(uint8_t label) { return label <= kBrainOnly ? 0 : label - 1; }
constexpr int kNumClasses = 4;

// Per-region, per-channel mean intensities. The four channels play the role
// of four acquisition modalities: the enhancing core is brightest in
// channel 3, edema stands out in channels 1-2, the non-enhancing core is
// dark in channel 1.
constexpr double kIntensityProfile[5][4] = {
    {0.05, 0.05, 0.05, 0.05},  // background
    {0.50, 0.45, 0.40, 0.35},  // healthy brain
    {0.60, 0.72, 0.75, 0.45},  // edema
    {0.35, 0.22, 0.55, 0.30},  // non-enhancing core
    {0.55, 0.60, 0.50, 0.92},  // enhancing core
};
constexpr double kNoiseSigma = 0.05;

struct SyntheticSample {
  Tensor image;                // (4, h, w), values in [0, 1]
  std::vector<uint8_t> labels; // row-major h*w, Label values
  Mask brain, wt, tc, et;
  uint64_t base_seed = 0;
  int index = 0;
  bool tumor = false;

  int h() const { return brain.h; }
  int w() const { return brain.w; }
  Mask ed() const {
    Mask out(wt.h, wt.w);
    for (size_t i = 0; i < wt.v.size(); ++i) out.v[i] = (wt.v[i] && !tc.v[i]) ? 1 : 0;
    return out;
  }
};

namespace detail {

// Star-convex blob: radius modulated by low harmonics. Bounding the total
// wobble A keeps r within [r0(1-A), r0(1+A)], which the nesting margins
// below rely on.
struct Blob {
  double cy = 0, cx = 0, r0 = 0;
  double amp[3] = {0, 0, 0};
  double phase[3] = {0, 0, 0};

  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double d = std::sqrt(dy * dy + dx * dx);
    if (d < 1e-9) return true;
    const double th = std::atan2(dy, dx);
    double r = r0;
    for (int j = 0; j < 3; ++j) r += r0 * amp[j] * std::cos((j + 2) * th + phase[j]);
    return d <= r;
  }
};

inline Blob draw_blob(RngStream& rng, double cy, double cx, double max_offset, double r_lo,
                      double r_hi, double a2, double a34) {
  Blob b;
  const double ang = rng.next_uniform(0.0, 2.0 * std::numbers::pi);
  const double off = rng.next_uniform(0.0, max_offset);
  b.cy = cy + off * std::sin(ang);
  b.cx = cx + off * std::cos(ang);
  b.r0 = rng.next_uniform(r_lo, r_hi);
  b.amp[0] = rng.next_uniform(0.0, a2);
  b.amp[1] = rng.next_uniform(0.0, a34);
  b.amp[2] = rng.next_uniform(0.0, a34);
  for (int j = 0; j < 3; ++j) b.phase[j] = rng.next_uniform(0.0, 2.0 * std::numbers::pi);
  return b;
}

}  // namespace detail

// Deterministic in (base_seed, index); every draw comes from a substream of
// that pair. Nesting et ⊆ tc ⊆ wt ⊆ brain holds by construction: each
// child's circumscribed radius plus center offset stays inside the parent's
// inscribed radius.
inline SyntheticSample generate_sample(uint64_t base_seed, int index, int h, int w, bool tumor) {
  if (h < 32 || w < 32) throw InvalidSpecError("phantom extent must be >= 32");
  RngStream rng = RngStream{base_seed, 0}.substream(static_cast<uint64_t>(index));

  const double s = 0.5 * std::min(h, w);
  const double icy = 0.5 * h, icx = 0.5 * w;

  detail::Blob brain = detail::draw_blob(rng, icy, icx, 0.04 * s, 0.68 * s, 0.78 * s, 0.10, 0.03);
  // wobble ≤ 0.16 -> brain inscribed radius ≥ 0.84 * r0 ≥ 0.571 s
  detail::Blob wt, tc, et;
  if (tumor) {
    wt = detail::draw_blob(rng, brain.cy, brain.cx, 0.25 * s, 0.17 * s, 0.23 * s, 0.08, 0.02);
    // wt circumscribed ≤ 1.12 * 0.23 s + 0.25 s = 0.508 s < brain inscribed
    tc = detail::draw_blob(rng, wt.cy, wt.cx, 0.11 * wt.r0, 0.52 * wt.r0, 0.65 * wt.r0, 0.06,
                           0.02);
    // tc circumscribed ≤ 1.10 * 0.65 + 0.11 = 0.825 (in wt.r0 units) < wt inscribed 0.88
    et = detail::draw_blob(rng, tc.cy, tc.cx, 0.15 * tc.r0, 0.45 * tc.r0, 0.60 * tc.r0, 0.06,
                           0.02);
    // et circumscribed ≤ 1.10 * 0.60 + 0.15 = 0.81 (in tc.r0 units) < tc inscribed 0.90
  }

  SyntheticSample out;
  out.base_seed = base_seed;
  out.index = index;
  out.tumor = tumor;
  out.brain = Mask(h, w);
  out.wt = Mask(h, w);
  out.tc = Mask(h, w);
  out.et = Mask(h, w);
  out.labels.assign(static_cast<size_t>(h) * w, kBackground);

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double py = y + 0.5, px = x + 0.5;
      if (!brain.contains(py, px)) continue;
      const size_t i = static_cast<size_t>(y) * w + x;
      out.brain.v[i] = 1;
      uint8_t label = kBrainOnly;
      if (tumor && wt.contains(py, px)) {
        out.wt.v[i] = 1;
        label = kEdema;
        if (tc.contains(py, px)) {
          out.tc.v[i] = 1;
          label = kCoreNonEnhancing;
          if (et.contains(py, px)) {
            out.et.v[i] = 1;
            label = kEnhancing;
          }
        }
      }
      out.labels[i] = label;
    }

  out.image = Tensor({4, h, w});
  const uint64_t noise_key = rng.substream(0x50153).seed;
  for (int c = 0; c < 4; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const size_t i = static_cast<size_t>(y) * w + x;
        const uint64_t ni = (static_cast<uint64_t>(c) * h + y) * w + x;
        double v = kIntensityProfile[out.labels[i]][c] + kNoiseSigma * normal_at(noise_key, ni);
        out.image[static_cast<int64_t>(c) * h * w + static_cast<int64_t>(i)] =
            static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  return out;
}

// Lazily indexable dataset; sample i is a pure function of (base_seed, i).
struct DatasetHandle {
  int count = 0;
  uint64_t base_seed = 0;
  int h = 64, w = 64;
  double tumor_fraction = 0.9;

  int tumor_count() const {
    return static_cast<int>(std::llround(tumor_fraction * count));
  }

  // Evenly strided assignment: exactly tumor_count() samples are tumor-bearing.
  bool is_tumor(int i) const {
    const int64_t tc = tumor_count();
    return (static_cast<int64_t>(i + 1) * tc) / count > (static_cast<int64_t>(i) * tc) / count;
  }

  SyntheticSample sample(int i) const { return generate_sample(base_seed, i, h, w, is_tumor(i)); }
};

inline std::vector<SyntheticSample> generate_dataset(const DatasetHandle& hd) {
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<size_t>(hd.count));
  for (int i = 0; i < hd.count; ++i) out.push_back(hd.sample(i));
  return out;
}

}  // namespace segxray
