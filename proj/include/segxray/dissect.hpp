#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "segxray/checkpoint.hpp"
#include "segxray/mask.hpp"
#include "segxray/metrics.hpp"
#include "segxray/model.hpp"
#include "segxray/phantom.hpp"
#include "segxray/resize.hpp"

namespace segxray {

// Pixel values of one (layer, filter) channel pooled over a dataset. Kept in
// full (sorted on demand); quantiles need no subsampling at this scale.
struct ActivationDistribution {
  std::string layer;
  int filter = 0;
  std::vector<float> values;

  size_t sample_size() const { return values.size(); }
};

inline ActivationDistribution collect_distribution(Model& m, const DatasetHandle& data,
                                                   const std::string& layer, int filter) {
  const LayerRef* ref = m.find_layer(layer);
  if (ref == nullptr) throw InvalidSpecError("unknown layer '" + layer + "'");
  if (filter < 0 || filter >= ref->channels)
    throw InvalidSpecError("filter " + std::to_string(filter) + " out of range for layer " + layer);
  ActivationDistribution dist;
  dist.layer = layer;
  dist.filter = filter;
  for (int i = 0; i < data.count; ++i) {
    SyntheticSample s = data.sample(i);
    m.graph.forward({{m.input, to_batch(s.image)}}, Mode::eval);
    const Tensor& v = m.graph.value(ref->node_id);
    const float* plane = v.data() + v.idx4(0, filter, 0, 0);
    dist.values.insert(dist.values.end(), plane, plane + static_cast<int64_t>(v.dim(2)) * v.dim(3));
  }
  return dist;
}

// Smallest sample value v with at most 1% of samples strictly greater:
// sorted ascending, that is a[n-1-k] with k = floor(0.01 n).
inline float activation_threshold(const ActivationDistribution& dist) {
  if (dist.values.empty()) throw InvalidSpecError("threshold of an empty distribution");
  std::vector<float> sorted = dist.values;
  std::sort(sorted.begin(), sorted.end());
  const size_t n = sorted.size();
  const size_t k = static_cast<size_t>(0.01 * static_cast<double>(n));
  return sorted[n - 1 - k];
}

// Raw concept mask: activation upsampled to image resolution, then
// inclusively thresholded.
inline Mask concept_mask_raw(const Tensor& act_plane, float threshold, int out_h, int out_w) {
  Tensor up = bilinear_resize_plane(act_plane, out_h, out_w);
  Mask m(out_h, out_w);
  for (size_t i = 0; i < m.v.size(); ++i) m.v[i] = up[static_cast<int64_t>(i)] >= threshold ? 1 : 0;
  return m;
}

namespace detail {

inline Mask postprocess_once(const Mask& m, const Mask& brain) {
  return largest_component4(mask_and(median3x3_fixpoint(m), brain));
}

}  // namespace detail

// Despeckle, clip to the brain, keep the largest 4-connected component —
// iterated to a stable state so the whole operation is idempotent. In the
// (rare) event the chain cycles, the smallest state of the cycle is the
// canonical result, which keeps determinism and idempotence.
inline Mask postprocess_mask(const Mask& raw, const Mask& brain) {
  Mask m = raw;
  std::vector<Mask> seen;
  for (int iter = 0; iter < 256; ++iter) {
    Mask next = detail::postprocess_once(m, brain);
    if (next == m) return m;
    for (size_t i = 0; i < seen.size(); ++i) {
      if (seen[i] == next) {
        // cycle: pick the canonical member
        Mask best = next;
        for (size_t j = i; j < seen.size(); ++j) {
          const Mask& cand = seen[j];
          if (cand.count() < best.count() || (cand.count() == best.count() && cand.v < best.v))
            best = cand;
        }
        return best;
      }
    }
    seen.push_back(next);
    m = std::move(next);
  }
  return m;
}

enum class ConceptId { brain = 0, wt = 1, tc = 2, et = 3, ed = 4 };
constexpr int kConceptCount = 5;

inline const char* concept_name(ConceptId c) {
  switch (c) {
    case ConceptId::brain: return "brain";
    case ConceptId::wt: return "wt";
    case ConceptId::tc: return "tc";
    case ConceptId::et: return "et";
    case ConceptId::ed: return "ed";
  }
  return "?";
}

struct DetectorEntry {
  std::string layer;
  int filter = 0;
  ConceptId best_concept = ConceptId::brain;
  double mean_iou = 0.0;
  std::array<double, kConceptCount> concept_iou{};
  bool is_detector = false;
  float threshold = 0.0f;
};

struct DetectorReport {
  double detector_iou_threshold = 0.04;
  std::vector<DetectorEntry> entries;  // sorted by mean_iou descending
};

struct DissectConfig {
  std::vector<std::string> layers;  // empty selects every analysis layer
  double detector_iou = 0.04;
};

// Full dissection pass: pool each filter's activation distribution over the
// dataset, threshold at the top percentile, clean the per-image masks, and
// score them against the explicit concepts.
inline DetectorReport assign_detectors(const Checkpoint& ckpt, const DatasetHandle& data,
                                       const DissectConfig& cfg = {}) {
  if (cfg.detector_iou <= 0.0 || cfg.detector_iou > 1.0)
    throw InvalidSpecError("detector iou threshold must be in (0, 1]");
  Model m = instantiate_model<float>(ckpt);

  std::vector<LayerRef> layers;
  if (cfg.layers.empty()) {
    layers = m.layers;
  } else {
    for (const auto& name : cfg.layers) {
      const LayerRef* ref = m.find_layer(name);
      if (ref == nullptr) throw InvalidSpecError("unknown layer '" + name + "'");
      layers.push_back(*ref);
    }
  }

  // one forward per image; keep per-layer activations and gt masks around
  struct PerImage {
    std::vector<Tensor> acts;  // (c, h, w) per requested layer
    std::array<Mask, kConceptCount> gt;
  };
  std::vector<PerImage> cache(static_cast<size_t>(data.count));
  for (int i = 0; i < data.count; ++i) {
    SyntheticSample s = data.sample(i);
    m.graph.forward({{m.input, to_batch(s.image)}}, Mode::eval);
    PerImage& pi = cache[static_cast<size_t>(i)];
    for (const LayerRef& l : layers) {
      const Tensor& v = m.graph.value(l.node_id);
      Tensor copy({v.dim(1), v.dim(2), v.dim(3)});
      std::copy(v.data(), v.data() + v.size(), copy.data());
      pi.acts.push_back(std::move(copy));
    }
    pi.gt[0] = s.brain;
    pi.gt[1] = s.wt;
    pi.gt[2] = s.tc;
    pi.gt[3] = s.et;
    pi.gt[4] = s.ed();
  }
  const int h = data.h, w = data.w;

  DetectorReport report;
  report.detector_iou_threshold = cfg.detector_iou;
  for (size_t li = 0; li < layers.size(); ++li) {
    const LayerRef& l = layers[li];
    const int lh = cache[0].acts[li].dim(1), lw = cache[0].acts[li].dim(2);
    const int64_t plane = static_cast<int64_t>(lh) * lw;
    for (int k = 0; k < l.channels; ++k) {
      ActivationDistribution dist;
      dist.layer = l.name;
      dist.filter = k;
      dist.values.reserve(static_cast<size_t>(plane) * cache.size());
      for (const PerImage& pi : cache) {
        const float* p = pi.acts[li].data() + static_cast<int64_t>(k) * plane;
        dist.values.insert(dist.values.end(), p, p + plane);
      }
      const float threshold = activation_threshold(dist);

      std::array<double, kConceptCount> sums{};
      for (const PerImage& pi : cache) {
        Tensor act({lh, lw});
        std::copy(pi.acts[li].data() + static_cast<int64_t>(k) * plane,
                  pi.acts[li].data() + static_cast<int64_t>(k + 1) * plane, act.data());
        Mask cleaned = postprocess_mask(concept_mask_raw(act, threshold, h, w), pi.gt[0]);
        for (int c = 0; c < kConceptCount; ++c) sums[static_cast<size_t>(c)] += iou(cleaned, pi.gt[static_cast<size_t>(c)]);
      }

      DetectorEntry e;
      e.layer = l.name;
      e.filter = k;
      e.threshold = threshold;
      for (int c = 0; c < kConceptCount; ++c) {
        e.concept_iou[static_cast<size_t>(c)] = sums[static_cast<size_t>(c)] / data.count;
        if (e.concept_iou[static_cast<size_t>(c)] > e.mean_iou) {
          e.mean_iou = e.concept_iou[static_cast<size_t>(c)];
          e.best_concept = static_cast<ConceptId>(c);
        }
      }
      e.is_detector = e.mean_iou >= cfg.detector_iou;
      report.entries.push_back(std::move(e));
    }
  }

  std::stable_sort(report.entries.begin(), report.entries.end(),
                   [](const DetectorEntry& a, const DetectorEntry& b) { return a.mean_iou > b.mean_iou; });
  return report;
}

}  // namespace segxray
