#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "segxray/checkpoint.hpp"
#include "segxray/metrics.hpp"
#include "segxray/model.hpp"
#include "segxray/phantom.hpp"

namespace segxray {

// Composite tumor regions in class-index space: whole tumor is any tumor
// class, core excludes edema, enhancing is the innermost class.
inline bool class_in_composite(int cls, int composite /*0=wt 1=tc 2=et*/) {
  switch (composite) {
    case 0: return cls >= 1;
    case 1: return cls >= 2;
    default: return cls == 3;
  }
}

inline Mask composite_mask(const std::vector<uint8_t>& classes, int h, int w, int composite) {
  Mask m(h, w);
  for (size_t i = 0; i < m.v.size(); ++i)
    m.v[i] = class_in_composite(classes[i], composite) ? 1 : 0;
  return m;
}

template <typename T>
struct LossResult {
  double total = 0.0;
  double cross_entropy = 0.0;
  double soft_dice = 0.0;
  TensorT<T> dlogits;
};

// Mean of per-pixel cross-entropy and soft-Dice over the three composite
// regions, with the gradient w.r.t. the logits in closed form. Keeping the
// softmax outside the graph keeps the primitive op set minimal; backward()
// is seeded with dlogits.
template <typename T>
LossResult<T> seg_loss(const TensorT<T>& logits, const std::vector<uint8_t>& labels) {
  const int n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  const int64_t m = static_cast<int64_t>(n) * h * w;
  if (static_cast<int64_t>(labels.size()) != m)
    throw ShapeError("seg_loss: label count does not match logits");

  TensorT<T> p = softmax_channels(logits);
  LossResult<T> out;
  out.dlogits = TensorT<T>(logits.shape());

  // cross-entropy and its gradient in logit space
  double ce = 0.0;
  for (int b = 0; b < n; ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int64_t pix = (static_cast<int64_t>(b) * h + y) * w + x;
        const int target = labels[static_cast<size_t>(pix)];
        ce -= std::log(std::max(static_cast<double>(p.at4(b, target, y, x)), 1e-12));
        for (int k = 0; k < c; ++k)
          out.dlogits.at4(b, k, y, x) =
              static_cast<T>(0.5 * (p.at4(b, k, y, x) - (k == target ? 1 : 0)) / static_cast<double>(m));
      }
  out.cross_entropy = ce / static_cast<double>(m);

  // batch soft-Dice per composite; dL/dp accumulates here, then maps
  // through the softmax jacobian
  constexpr double kEps = 1.0;
  TensorT<T> dldp(logits.shape());
  double dice_loss = 0.0;
  for (int comp = 0; comp < 3; ++comp) {
    double inter = 0.0, psum = 0.0, gsum = 0.0;
    for (int b = 0; b < n; ++b)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const int64_t pix = (static_cast<int64_t>(b) * h + y) * w + x;
          const bool g = class_in_composite(labels[static_cast<size_t>(pix)], comp);
          double q = 0.0;
          for (int k = 0; k < c; ++k)
            if (class_in_composite(k, comp)) q += p.at4(b, k, y, x);
          inter += g ? q : 0.0;
          psum += q;
          gsum += g ? 1.0 : 0.0;
        }
    const double num = 2.0 * inter + kEps;
    const double den = psum + gsum + kEps;
    dice_loss += 1.0 - num / den;
    for (int b = 0; b < n; ++b)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const int64_t pix = (static_cast<int64_t>(b) * h + y) * w + x;
          const bool g = class_in_composite(labels[static_cast<size_t>(pix)], comp);
          // d(1 - num/den)/dq = -(2g*den - num)/den^2
          const double dq = -((g ? 2.0 : 0.0) * den - num) / (den * den);
          for (int k = 0; k < c; ++k)
            if (class_in_composite(k, comp))
              dldp.at4(b, k, y, x) += static_cast<T>(dq / 3.0);
        }
  }
  out.soft_dice = dice_loss / 3.0;

  for (int b = 0; b < n; ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double dot = 0.0;
        for (int k = 0; k < c; ++k)
          dot += static_cast<double>(dldp.at4(b, k, y, x)) * p.at4(b, k, y, x);
        for (int k = 0; k < c; ++k)
          out.dlogits.at4(b, k, y, x) += static_cast<T>(
              0.5 * p.at4(b, k, y, x) * (static_cast<double>(dldp.at4(b, k, y, x)) - dot));
      }

  out.total = 0.5 * out.cross_entropy + 0.5 * out.soft_dice;
  return out;
}

struct TrainConfig {
  double lr = 0.08;
  int epochs = 30;
  int batch = 8;
  double momentum = 0.9;
  uint64_t seed = 1;
  double dropout = 0.0;
  // early stop after this many epochs without validation-Dice improvement;
  // only active when a validation set is supplied
  int patience = 10;
  double min_delta = 1e-4;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double val_dice_wt = -1.0;
};

struct TrainResult {
  Checkpoint ckpt;
  std::vector<EpochStats> curve;
  int best_epoch = -1;
};

inline SegMetrics evaluate_mean(Model& m, const DatasetHandle& data) {
  SegMetrics acc{};
  for (int i = 0; i < data.count; ++i) {
    SyntheticSample s = data.sample(i);
    Prediction pred = predict(m, s.image, Mode::eval);
    acc.dice_wt += dice(composite_mask(pred.classes, s.h(), s.w(), 0), s.wt);
    acc.dice_tc += dice(composite_mask(pred.classes, s.h(), s.w(), 1), s.tc);
    acc.dice_et += dice(composite_mask(pred.classes, s.h(), s.w(), 2), s.et);
  }
  acc.dice_wt /= data.count;
  acc.dice_tc /= data.count;
  acc.dice_et /= data.count;
  return acc;
}

// Momentum SGD over shuffled mini-batches. Deterministic in (model, data,
// config): shuffling and dropout masks derive from counter-based streams.
inline TrainResult train(Model& m, const DatasetHandle& data, const DatasetHandle* val,
                         const TrainConfig& cfg) {
  if (data.count <= 0) throw InvalidSpecError("training dataset is empty");
  if (cfg.lr < 0) throw InvalidSpecError("learning rate must be >= 0");
  m.graph.set_dropout_rate(cfg.dropout);

  const std::vector<int> param_ids = m.graph.parameters();
  std::vector<Tensor> velocity;
  velocity.reserve(param_ids.size());
  for (int id : param_ids) velocity.emplace_back(m.graph.value(id).shape());

  // cache the dataset once; samples are small
  std::vector<SyntheticSample> samples = generate_dataset(data);
  const int h = data.h, w = data.w;

  RngStream shuffle_rng = RngStream{cfg.seed, 0}.substream(0x5F0FFE);
  TrainResult result;
  double best_val = -1.0;
  int since_best = 0;
  std::vector<Tensor> best_params;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    RngStream er = shuffle_rng.substream(static_cast<uint64_t>(epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(er.next_u64() % i)]);

    double epoch_loss = 0.0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch));
      const int bs = static_cast<int>(end - start);
      Tensor batch({bs, 4, h, w});
      std::vector<uint8_t> labels(static_cast<size_t>(bs) * h * w);
      for (int b = 0; b < bs; ++b) {
        const SyntheticSample& s = samples[static_cast<size_t>(order[start + static_cast<size_t>(b)])];
        std::copy(s.image.data(), s.image.data() + s.image.size(),
                  batch.data() + batch.idx4(b, 0, 0, 0));
        for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i)
          labels[static_cast<size_t>(b) * h * w + static_cast<size_t>(i)] =
              static_cast<uint8_t>(class_of_label(s.labels[static_cast<size_t>(i)]));
      }

      RngStream fwd_rng{mix64(cfg.seed, 0xF0D0), mix64(static_cast<uint64_t>(epoch), batches)};
      m.graph.forward({{m.input, batch}}, Mode::train, fwd_rng);
      LossResult<float> loss = seg_loss(m.graph.value(m.logits), labels);
      if (!std::isfinite(loss.total))
        throw DivergenceError("training loss became non-finite at epoch " + std::to_string(epoch));
      m.graph.backward(m.logits, loss.dlogits);

      for (size_t pi = 0; pi < param_ids.size(); ++pi) {
        Tensor& vel = velocity[pi];
        auto& node = m.graph.node(param_ids[pi]);
        const Tensor& grad = node.adjoint;
        for (int64_t i = 0; i < vel.size(); ++i) {
          vel[i] = static_cast<float>(cfg.momentum * vel[i] - cfg.lr * grad[i]);
          node.value[i] += vel[i];
        }
      }
      epoch_loss += loss.total;
      ++batches;
    }

    EpochStats st;
    st.epoch = epoch;
    st.loss = epoch_loss / std::max(1, batches);
    if (val != nullptr && val->count > 0) {
      st.val_dice_wt = evaluate_mean(m, *val).dice_wt;
      if (st.val_dice_wt > best_val + cfg.min_delta) {
        best_val = st.val_dice_wt;
        since_best = 0;
        result.best_epoch = epoch;
        best_params.clear();
        for (int id : param_ids) best_params.push_back(m.graph.value(id));
      } else {
        ++since_best;
      }
    }
    result.curve.push_back(st);
    if (val != nullptr && since_best >= cfg.patience) break;
  }

  if (!best_params.empty())
    for (size_t pi = 0; pi < param_ids.size(); ++pi)
      m.graph.node(param_ids[pi]).value = best_params[pi];

  TrainMeta meta;
  meta.seed = cfg.seed;
  meta.epochs = static_cast<int>(result.curve.size());
  meta.dropout = cfg.dropout;
  meta.final_loss = result.curve.empty() ? 0.0 : result.curve.back().loss;
  meta.final_val_dice_wt = best_val;
  result.ckpt = checkpoint_from_model(m, meta);
  return result;
}

}  // namespace segxray
