#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "segxray/graph.hpp"
#include "segxray/rng.hpp"

namespace segxray {

enum class Family { plain, skip, residual };

inline const char* family_name(Family f) {
  switch (f) {
    case Family::plain: return "plain";
    case Family::skip: return "skip";
    case Family::residual: return "residual";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  if (s == "plain") return Family::plain;
  if (s == "skip") return Family::skip;
  if (s == "residual") return Family::residual;
  throw InvalidSpecError("unknown architecture family '" + s + "'");
}

// Three tiny encoder-decoder variants sharing one trunk: `plain` has no
// encoder-to-decoder wiring, `skip` concatenates encoder stage outputs into
// the mirrored decoder stage, `residual` adds identity shortcuts inside each
// conv block on top of the skip wiring.
struct ArchSpec {
  Family family = Family::skip;
  int depth = 3;
  int base_channels = 8;
  int in_channels = 4;
  int out_channels = 4;

  void validate() const {
    if (depth < 1) throw InvalidSpecError("depth must be >= 1");
    if (base_channels < 1) throw InvalidSpecError("base_channels must be >= 1");
    if (in_channels < 1 || out_channels < 1)
      throw InvalidSpecError("channel counts must be >= 1");
  }

  bool operator==(const ArchSpec&) const = default;
};

// Named handle on an internal rectified conv output; these are the units
// the analysis passes address.
struct LayerRef {
  std::string name;
  int node_id = -1;
  int channels = 0;
};

template <typename T>
struct ModelT {
  ArchSpec spec;
  GraphT<T> graph;
  int input = -1;
  int logits = -1;
  std::vector<LayerRef> layers;

  const LayerRef* find_layer(const std::string& name) const {
    for (const auto& l : layers)
      if (l.name == name) return &l;
    return nullptr;
  }
};

using Model = ModelT<float>;
using Model64 = ModelT<double>;

namespace detail {

template <typename T>
class ModelBuilder {
 public:
  ModelBuilder(ModelT<T>& m, uint64_t init_seed) : m_(m), rng_{init_seed, 0} {}

  int conv(int x, int cin, int cout, int k, const std::string& name) {
    TensorT<T> w({cout, cin, k, k});
    RngStream sub = rng_.substream(param_index_++);
    const double stddev = std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
    for (int64_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(stddev * sub.next_normal());
    int wp = m_.graph.add_parameter(name + ".w", std::move(w));
    return m_.graph.add_conv2d(x, wp, 1, k / 2, name + ".conv");
  }

  int affine(int x, int c, const std::string& name) {
    ++param_index_;  // keep substream assignment stable across families
    int s = m_.graph.add_parameter(name + ".g", TensorT<T>::full({c}, T(1)));
    int b = m_.graph.add_parameter(name + ".b", TensorT<T>({c}));
    return m_.graph.add_affine_scale_bias(x, s, b, name + ".affine");
  }

  // conv + affine + relu (+ dropout); registers the relu as an analysis layer
  int unit(int x, int cin, int cout, const std::string& name) {
    int y = conv(x, cin, cout, 3, name);
    y = affine(y, cout, name);
    int r = m_.graph.add_relu(y, name + ".relu");
    m_.layers.push_back({name, r, cout});
    return m_.graph.add_dropout(r, 0.0, stream_id_++, name + ".drop");
  }

  int block(int x, int cin, int cout, const std::string& name) {
    if (m_.spec.family != Family::residual) {
      int y = unit(x, cin, cout, name + ".c0");
      return unit(y, cout, cout, name + ".c1");
    }
    int y = unit(x, cin, cout, name + ".c0");
    int z = conv(y, cout, cout, 3, name + ".c1");
    z = affine(z, cout, name + ".c1");
    int sc = cin == cout ? x : conv(x, cin, cout, 1, name + ".sc");
    int sum = m_.graph.add_add(z, sc, name + ".add");
    int r = m_.graph.add_relu(sum, name + ".c1.relu");
    m_.layers.push_back({name + ".c1", r, cout});
    return m_.graph.add_dropout(r, 0.0, stream_id_++, name + ".c1.drop");
  }

  uint64_t next_stream() { return stream_id_++; }

 private:
  ModelT<T>& m_;
  RngStream rng_;
  uint64_t param_index_ = 0;
  uint64_t stream_id_ = 0;
};

}  // namespace detail

// Deterministic in (spec, init_seed): parameter shapes, names, and values
// depend on nothing else. Inputs must be spatially divisible by 2^depth.
template <typename T>
ModelT<T> build_model_t(const ArchSpec& spec, uint64_t init_seed) {
  spec.validate();
  ModelT<T> m;
  m.spec = spec;
  detail::ModelBuilder<T> b(m, init_seed);
  auto& g = m.graph;

  m.input = g.add_input("image");

  std::vector<int> ch(static_cast<size_t>(spec.depth));
  for (int i = 0; i < spec.depth; ++i) ch[static_cast<size_t>(i)] = spec.base_channels << i;
  const int ch_bott = spec.base_channels << spec.depth;

  std::vector<int> enc(static_cast<size_t>(spec.depth));
  int t = m.input;
  int cin = spec.in_channels;
  for (int i = 0; i < spec.depth; ++i) {
    const std::string name = "e" + std::to_string(i);
    t = b.block(t, cin, ch[static_cast<size_t>(i)], name);
    enc[static_cast<size_t>(i)] = t;
    t = g.add_max_pool2d(t, 2, 2, name + ".pool");
    cin = ch[static_cast<size_t>(i)];
  }

  t = b.block(t, cin, ch_bott, "b");
  cin = ch_bott;

  for (int i = spec.depth - 1; i >= 0; --i) {
    const std::string name = "d" + std::to_string(i);
    const int cout = ch[static_cast<size_t>(i)];
    t = g.add_upsample_nearest2x(t, name + ".ups");
    t = b.unit(t, cin, cout, name + ".u");
    cin = cout;
    if (spec.family != Family::plain) {
      t = g.add_concat_channels({t, enc[static_cast<size_t>(i)]}, name + ".cat");
      cin = 2 * cout;
    }
    t = b.block(t, cin, cout, name);
    cin = cout;
  }

  int head = b.conv(t, cin, spec.out_channels, 1, "head");
  m.logits = b.affine(head, spec.out_channels, "head");
  return m;
}

inline Model build_model(const ArchSpec& spec, uint64_t init_seed) {
  return build_model_t<float>(spec, init_seed);
}

// Per-pixel softmax over the channel axis of (n, c, h, w) logits.
template <typename T>
TensorT<T> softmax_channels(const TensorT<T>& logits) {
  const int n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  TensorT<T> out(logits.shape());
  for (int b = 0; b < n; ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        T mx = logits.at4(b, 0, y, x);
        for (int k = 1; k < c; ++k) mx = std::max(mx, logits.at4(b, k, y, x));
        T z = T(0);
        for (int k = 0; k < c; ++k) {
          const T e = std::exp(logits.at4(b, k, y, x) - mx);
          out.at4(b, k, y, x) = e;
          z += e;
        }
        for (int k = 0; k < c; ++k) out.at4(b, k, y, x) /= z;
      }
  return out;
}

// Ties resolve to the lowest class index.
template <typename T>
std::vector<uint8_t> argmax_channels(const TensorT<T>& probs) {
  const int c = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
  std::vector<uint8_t> out(static_cast<size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int best = 0;
      T bv = probs.at4(0, 0, y, x);
      for (int k = 1; k < c; ++k)
        if (probs.at4(0, k, y, x) > bv) {
          bv = probs.at4(0, k, y, x);
          best = k;
        }
      out[static_cast<size_t>(y) * w + x] = static_cast<uint8_t>(best);
    }
  return out;
}

// (4, h, w) image -> (1, 4, h, w) batch of one.
template <typename T>
TensorT<T> to_batch(const TensorT<T>& image) {
  if (image.rank() != 3) throw ShapeError("expected a (c, h, w) image");
  TensorT<T> out({1, image.dim(0), image.dim(1), image.dim(2)});
  std::copy(image.data(), image.data() + image.size(), out.data());
  return out;
}

template <typename T>
struct PredictionT {
  TensorT<T> probs;             // (1, out_channels, h, w), sums to 1 per pixel
  std::vector<uint8_t> classes; // per-pixel argmax, row-major
};

using Prediction = PredictionT<float>;

template <typename T>
PredictionT<T> predict(ModelT<T>& m, const TensorT<T>& image, Mode mode, RngStream rng = {}) {
  m.graph.forward({{m.input, to_batch(image)}}, mode, rng);
  PredictionT<T> out;
  out.probs = softmax_channels(m.graph.value(m.logits));
  out.classes = argmax_channels(out.probs);
  return out;
}

}  // namespace segxray
