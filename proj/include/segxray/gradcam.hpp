#pragma once

#include <string>
#include <vector>

#include "segxray/checkpoint.hpp"
#include "segxray/mask.hpp"
#include "segxray/metrics.hpp"
#include "segxray/model.hpp"
#include "segxray/resize.hpp"

namespace segxray {

// Output channel selector. Single class indices address one softmax
// channel; the composite names sum the member classes' probability maps
// (whole tumor = every tumor class, core = the two inner classes).
struct ChannelSpec {
  std::vector<int> classes;
  std::string name;
};

inline ChannelSpec parse_channel_spec(const std::string& s, int out_channels) {
  if (s == "bg") return {{0}, "bg"};
  if (s == "ed") return {{1}, "ed"};
  if (s == "tcne") return {{2}, "tcne"};
  if (s == "et") return {{3}, "et"};
  if (s == "wt") return {{1, 2, 3}, "wt"};
  if (s == "tc") return {{2, 3}, "tc"};
  try {
    const int c = std::stoi(s);
    if (c < 0 || c >= out_channels) throw InvalidSpecError("channel index out of range: " + s);
    return {{c}, s};
  } catch (const std::invalid_argument&) {
    throw InvalidSpecError("unknown channel spec '" + s + "'");
  }
}

struct ClassScore {
  std::string channel;
  double value = 0.0;
  int64_t pixels = 0;  // spatial size of the output map
};

// Spatially pooled output for the chosen channel; post-softmax by default,
// the raw logit map with pre_softmax.
template <typename T>
ClassScore class_score_t(ModelT<T>& m, const TensorT<T>& image, const ChannelSpec& ch,
                         bool pre_softmax = false) {
  m.graph.forward({{m.input, to_batch(image)}}, Mode::eval);
  const TensorT<T>& logits = m.graph.value(m.logits);
  const TensorT<T> probs = pre_softmax ? logits : softmax_channels(logits);
  const int h = logits.dim(2), w = logits.dim(3);
  ClassScore out;
  out.channel = ch.name;
  out.pixels = static_cast<int64_t>(h) * w;
  double acc = 0.0;
  for (int c : ch.classes)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) acc += probs.at4(0, c, y, x);
  out.value = acc / static_cast<double>(out.pixels);
  return out;
}

inline ClassScore class_score(Model& m, const Tensor& image, const ChannelSpec& ch,
                              bool pre_softmax = false) {
  return class_score_t(m, image, ch, pre_softmax);
}

// Seed gradient of the pooled channel score with respect to the logits.
template <typename T>
TensorT<T> pooled_score_seed(const TensorT<T>& logits, const ChannelSpec& ch, bool pre_softmax) {
  const int c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  const double inv_p = 1.0 / (static_cast<double>(h) * w);
  TensorT<T> seed(logits.shape());
  if (pre_softmax) {
    for (int k : ch.classes)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) seed.at4(0, k, y, x) = static_cast<T>(inv_p);
    return seed;
  }
  const TensorT<T> p = softmax_channels(logits);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double q = 0.0;
      for (int k : ch.classes) q += p.at4(0, k, y, x);
      for (int k = 0; k < c; ++k) {
        const bool member = std::find(ch.classes.begin(), ch.classes.end(), k) != ch.classes.end();
        seed.at4(0, k, y, x) =
            static_cast<T>(inv_p * p.at4(0, k, y, x) * ((member ? 1.0 : 0.0) - q));
      }
    }
  return seed;
}

// Per-filter importance: spatial mean of the layer adjoint.
template <typename T>
std::vector<T> importances_from_adjoint(const TensorT<T>& adjoint) {
  const int c = adjoint.dim(1);
  const int64_t plane = static_cast<int64_t>(adjoint.dim(2)) * adjoint.dim(3);
  std::vector<T> beta(static_cast<size_t>(c));
  for (int k = 0; k < c; ++k) {
    T acc = T(0);
    const T* p = adjoint.data() + adjoint.idx4(0, k, 0, 0);
    for (int64_t i = 0; i < plane; ++i) acc += p[i];
    beta[static_cast<size_t>(k)] = acc / static_cast<T>(plane);
  }
  return beta;
}

// relu(sum_k beta_k * A_k), accumulated in ascending filter order so the map
// is bit-reproducible from (beta, A).
template <typename T>
TensorT<T> weighted_activation_map(const std::vector<T>& beta, const TensorT<T>& activation) {
  const int c = activation.dim(1), h = activation.dim(2), w = activation.dim(3);
  if (static_cast<int>(beta.size()) != c)
    throw ShapeError("weighted_activation_map: importance count != channels");
  TensorT<T> map({h, w});
  for (int k = 0; k < c; ++k) {
    const T b = beta[static_cast<size_t>(k)];
    const T* p = activation.data() + activation.idx4(0, k, 0, 0);
    for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) map[i] += b * p[i];
  }
  for (int64_t i = 0; i < map.size(); ++i) map[i] = std::max(map[i], T(0));
  return map;
}

struct GradCamMap {
  std::string layer;
  std::string channel;
  std::vector<float> beta;
  Tensor map_layer;  // (h_l, w_l), non-negative
  Tensor map_input;  // bilinear copy at image resolution
  int64_t activation_pixels = 0;
};

// One forward and one backward produce the maps for every analysis layer:
// each layer reads its own adjoint from the shared reverse sweep.
inline std::vector<GradCamMap> layerwise_gradcam(Model& m, const Tensor& image,
                                                 const ChannelSpec& ch, bool pre_softmax = false) {
  m.graph.forward({{m.input, to_batch(image)}}, Mode::eval);
  const Tensor& logits = m.graph.value(m.logits);
  m.graph.backward(m.logits, pooled_score_seed(logits, ch, pre_softmax));

  const int ih = image.dim(1), iw = image.dim(2);
  std::vector<GradCamMap> maps;
  maps.reserve(m.layers.size());
  for (const LayerRef& l : m.layers) {
    GradCamMap g;
    g.layer = l.name;
    g.channel = ch.name;
    const Tensor& act = m.graph.value(l.node_id);
    g.beta = importances_from_adjoint(m.graph.adjoint(l.node_id));
    g.map_layer = weighted_activation_map(g.beta, act);
    g.map_input = bilinear_resize_plane(g.map_layer, ih, iw);
    g.activation_pixels = static_cast<int64_t>(act.dim(2)) * act.dim(3);
    maps.push_back(std::move(g));
  }
  return maps;
}

inline GradCamMap gradcam_map(Model& m, const Tensor& image, const std::string& layer,
                              const ChannelSpec& ch, bool pre_softmax = false) {
  if (m.find_layer(layer) == nullptr) throw InvalidSpecError("unknown layer '" + layer + "'");
  for (auto& g : layerwise_gradcam(m, image, ch, pre_softmax))
    if (g.layer == layer) return g;
  throw InvalidSpecError("unknown layer '" + layer + "'");
}

inline std::vector<float> importances(Model& m, const Tensor& image, const std::string& layer,
                                      const ChannelSpec& ch, bool pre_softmax = false) {
  return gradcam_map(m, image, layer, ch, pre_softmax).beta;
}

// Binarize at 80% of the map maximum (the top fifth of the normalized
// range) and score against a ground-truth mask. A zero map gives an empty
// attention mask.
inline Mask attention_mask(const Tensor& map_input, double top_fraction = 0.2) {
  float mx = 0.0f;
  for (int64_t i = 0; i < map_input.size(); ++i) mx = std::max(mx, map_input[i]);
  Mask m(map_input.dim(0), map_input.dim(1));
  if (mx <= 0.0f) return m;
  const float cut = static_cast<float>((1.0 - top_fraction) * mx);
  for (size_t i = 0; i < m.v.size(); ++i)
    m.v[i] = map_input[static_cast<int64_t>(i)] >= cut ? 1 : 0;
  return m;
}

inline double attention_iou(const Tensor& map_input, const Mask& gt) {
  return iou(attention_mask(map_input), gt);
}

}  // namespace segxray
