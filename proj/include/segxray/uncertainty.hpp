#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "segxray/checkpoint.hpp"
#include "segxray/imageio.hpp"
#include "segxray/model.hpp"

namespace segxray {

// Stochastic forward passes with dropout left on at test time. Each pass t
// uses the substream (seed, t), so the set is reproducible and individual
// samples are independent of execution order.
struct PosteriorSamples {
  int count = 0;
  double rate = 0.2;
  uint64_t seed = 0;
  std::vector<Tensor> probs;  // (1, c, h, w) per sample, post-softmax
};

inline PosteriorSamples sample_posterior(const Checkpoint& ckpt, const Tensor& image, int count,
                                         double rate, uint64_t seed) {
  if (count < 1) throw InvalidSpecError("posterior sample count must be >= 1");
  if (rate < 0.0 || rate >= 1.0) throw InvalidSpecError("dropout rate must be in [0, 1)");
  Model m = instantiate_model<float>(ckpt);
  m.graph.set_dropout_rate(rate);
  PosteriorSamples out;
  out.count = count;
  out.rate = rate;
  out.seed = seed;
  out.probs.reserve(static_cast<size_t>(count));
  for (int t = 0; t < count; ++t) {
    Prediction p = predict(m, image, Mode::mc_dropout, RngStream{seed, static_cast<uint64_t>(t)});
    out.probs.push_back(std::move(p.probs));
  }
  return out;
}

struct PosteriorStats {
  Tensor mean;         // (1, c, h, w)
  Tensor variance;     // (1, c, h, w); biased estimator, divisor T
  Tensor uncertainty;  // (h, w); channel mean of the variance
  std::vector<uint8_t> prediction;  // argmax of the mean, ties to lowest class
};

// Elementwise mean and (1/T) sum p^2 - mean^2, accumulated in double; tiny
// negatives from cancellation clamp to zero so the variance stays
// nonnegative. With identical samples (dropout rate 0) the sums are exact
// and the variance is exactly zero.
template <typename T>
void posterior_moments(const std::vector<TensorT<T>>& samples, TensorT<T>& mean,
                       TensorT<T>& variance) {
  if (samples.empty()) throw InvalidSpecError("posterior moments of an empty sample set");
  mean = TensorT<T>(samples[0].shape());
  variance = TensorT<T>(samples[0].shape());
  const int64_t n = samples[0].size();
  std::vector<double> sum(static_cast<size_t>(n), 0.0), sum_sq(static_cast<size_t>(n), 0.0);
  for (const auto& s : samples) {
    if (!s.same_shape(mean)) throw ShapeError("posterior samples disagree in shape");
    for (int64_t i = 0; i < n; ++i) {
      const double v = static_cast<double>(s[i]);
      sum[static_cast<size_t>(i)] += v;
      sum_sq[static_cast<size_t>(i)] += v * v;
    }
  }
  const double inv_t = 1.0 / static_cast<double>(samples.size());
  for (int64_t i = 0; i < n; ++i) {
    const double m = sum[static_cast<size_t>(i)] * inv_t;
    mean[i] = static_cast<T>(m);
    variance[i] = static_cast<T>(std::max(0.0, sum_sq[static_cast<size_t>(i)] * inv_t - m * m));
  }
}

inline PosteriorStats posterior_stats(const PosteriorSamples& samples) {
  PosteriorStats st;
  posterior_moments(samples.probs, st.mean, st.variance);
  const int c = st.mean.dim(1), h = st.mean.dim(2), w = st.mean.dim(3);
  st.uncertainty = Tensor({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int k = 0; k < c; ++k) acc += st.variance.at4(0, k, y, x);
      st.uncertainty[static_cast<int64_t>(y) * w + x] = acc / static_cast<float>(c);
    }
  st.prediction = argmax_channels(st.mean);
  return st;
}

struct UncertaintyAssociation {
  bool valid = false;  // false when the image has no misclassified pixels
  int64_t misclassified_pixels = 0;
  double misclassified_mean = 0.0;
  double correct_mean = 0.0;
  double ratio = 0.0;
};

// Mean uncertainty over wrongly vs correctly predicted pixels; images
// without errors are skipped (valid = false).
inline UncertaintyAssociation associate(const PosteriorStats& st,
                                        const std::vector<uint8_t>& gt_classes) {
  if (gt_classes.size() != st.prediction.size())
    throw ShapeError("associate: ground-truth size mismatch");
  UncertaintyAssociation a;
  double mis = 0.0, cor = 0.0;
  int64_t mis_n = 0, cor_n = 0;
  for (size_t i = 0; i < gt_classes.size(); ++i) {
    const double u = st.uncertainty[static_cast<int64_t>(i)];
    if (st.prediction[i] != gt_classes[i]) {
      mis += u;
      ++mis_n;
    } else {
      cor += u;
      ++cor_n;
    }
  }
  if (mis_n == 0) return a;
  a.valid = true;
  a.misclassified_pixels = mis_n;
  a.misclassified_mean = mis / static_cast<double>(mis_n);
  a.correct_mean = cor_n > 0 ? cor / static_cast<double>(cor_n) : 0.0;
  a.ratio = a.correct_mean > 0.0 ? a.misclassified_mean / a.correct_mean
                                 : std::numeric_limits<double>::infinity();
  return a;
}

// Ground truth | mean prediction | per-image-normalized uncertainty in red
// over the grayscale first channel.
inline ImageRGB render_uncertainty(const PosteriorStats& st, const Tensor& image,
                                   const std::vector<uint8_t>& gt_classes) {
  const int h = st.uncertainty.dim(0), w = st.uncertainty.dim(1);
  Tensor ch0({h, w});
  std::copy(image.data(), image.data() + static_cast<int64_t>(h) * w, ch0.data());
  std::vector<ImageRGB> panels;
  panels.push_back(render_classes(gt_classes, h, w));
  panels.push_back(render_classes(st.prediction, h, w));
  panels.push_back(render_plane(st.uncertainty, Palette::red_overlay, &ch0));
  return hstack(panels);
}

}  // namespace segxray
