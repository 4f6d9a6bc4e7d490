#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "segxray/checkpoint.hpp"
#include "segxray/model.hpp"
#include "segxray/rng.hpp"

namespace segxray {

// --- total variation --------------------------------------------------------
// Anisotropic form: absolute differences of horizontal and vertical
// neighbors, summed over channels; terms that would step outside the image
// are omitted.

template <typename T>
double total_variation(const TensorT<T>& img) {
  if (img.rank() != 3 || img.dim(1) < 2 || img.dim(2) < 2)
    throw ShapeError("total_variation expects a (c, h, w) image with extents >= 2");
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  double acc = 0.0;
  for (int ch = 0; ch < c; ++ch) {
    const T* p = img.data() + static_cast<int64_t>(ch) * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const T v = p[y * w + x];
        if (x + 1 < w) acc += std::abs(static_cast<double>(p[y * w + x + 1] - v));
        if (y + 1 < h) acc += std::abs(static_cast<double>(p[(y + 1) * w + x] - v));
      }
  }
  return acc;
}

template <typename T>
TensorT<T> total_variation_grad(const TensorT<T>& img) {
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  TensorT<T> grad(img.shape());
  auto sign = [](double d) { return d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0); };
  for (int ch = 0; ch < c; ++ch) {
    const T* p = img.data() + static_cast<int64_t>(ch) * h * w;
    T* g = grad.data() + static_cast<int64_t>(ch) * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const T v = p[y * w + x];
        if (x + 1 < w) {
          const double s = sign(static_cast<double>(p[y * w + x + 1]) - static_cast<double>(v));
          g[y * w + x + 1] += static_cast<T>(s);
          g[y * w + x] -= static_cast<T>(s);
        }
        if (y + 1 < h) {
          const double s = sign(static_cast<double>(p[(y + 1) * w + x]) - static_cast<double>(v));
          g[(y + 1) * w + x] += static_cast<T>(s);
          g[y * w + x] -= static_cast<T>(s);
        }
      }
  }
  return grad;
}

// --- kernel two-sample statistic --------------------------------------------

template <typename T>
double gaussian_kernel(const T* a, const T* b, int64_t n, double sigma) {
  if (sigma <= 0.0) throw InvalidSpecError("kernel bandwidth must be positive");
  double d2 = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    d2 += d * d;
  }
  return std::exp(-d2 / (2.0 * sigma * sigma));
}

template <typename T>
double gaussian_kernel(const TensorT<T>& a, const TensorT<T>& b, double sigma) {
  if (!a.same_shape(b)) throw ShapeError("gaussian_kernel: shape mismatch");
  return gaussian_kernel(a.data(), b.data(), a.size(), sigma);
}

struct PatchSet {
  int patch = 7;
  std::vector<std::pair<int, int>> pos;  // top-left corners, shared across channels
};

inline PatchSet sample_patches(int h, int w, int patch, int count, RngStream rng) {
  if (patch > h || patch > w) throw ShapeError("patch larger than image");
  PatchSet ps;
  ps.patch = patch;
  ps.pos.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i)
    ps.pos.emplace_back(rng.next_int(0, h - patch), rng.next_int(0, w - patch));
  return ps;
}

namespace detail {

template <typename T>
std::vector<T> extract_patch(const TensorT<T>& img, int ch, int py, int px, int patch) {
  const int h = img.dim(1), w = img.dim(2);
  std::vector<T> out(static_cast<size_t>(patch) * patch);
  const T* p = img.data() + static_cast<int64_t>(ch) * h * w;
  for (int y = 0; y < patch; ++y)
    for (int x = 0; x < patch; ++x)
      out[static_cast<size_t>(y) * patch + x] = p[(py + y) * w + (px + x)];
  return out;
}

}  // namespace detail

// Channel-wise kernel two-sample statistic between patch sets of x and a
// template s drawn at the same positions; identical images at shared
// positions cancel exactly to zero.
template <typename T>
double style_loss(const TensorT<T>& x, const TensorT<T>& s, double sigma, const PatchSet& ps) {
  if (!x.same_shape(s)) throw ShapeError("style_loss: shape mismatch");
  const int c = x.dim(0);
  const size_t n = ps.pos.size();
  double acc = 0.0;
  for (int ch = 0; ch < c; ++ch) {
    std::vector<std::vector<T>> xp(n), sp(n);
    for (size_t i = 0; i < n; ++i) {
      xp[i] = detail::extract_patch(x, ch, ps.pos[i].first, ps.pos[i].second, ps.patch);
      sp[i] = detail::extract_patch(s, ch, ps.pos[i].first, ps.pos[i].second, ps.patch);
    }
    const int64_t dim = static_cast<int64_t>(ps.patch) * ps.patch;
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < n; ++j)
        acc += gaussian_kernel(xp[i].data(), xp[j].data(), dim, sigma) +
               gaussian_kernel(sp[i].data(), sp[j].data(), dim, sigma) -
               2.0 * gaussian_kernel(xp[i].data(), sp[j].data(), dim, sigma);
  }
  return acc;
}

template <typename T>
TensorT<T> style_loss_grad(const TensorT<T>& x, const TensorT<T>& s, double sigma,
                           const PatchSet& ps) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const size_t n = ps.pos.size();
  const int64_t dim = static_cast<int64_t>(ps.patch) * ps.patch;
  TensorT<T> grad(x.shape());
  const double inv_s2 = 1.0 / (sigma * sigma);
  for (int ch = 0; ch < c; ++ch) {
    std::vector<std::vector<T>> xp(n), sp(n);
    for (size_t i = 0; i < n; ++i) {
      xp[i] = detail::extract_patch(x, ch, ps.pos[i].first, ps.pos[i].second, ps.patch);
      sp[i] = detail::extract_patch(s, ch, ps.pos[i].first, ps.pos[i].second, ps.patch);
    }
    std::vector<std::vector<double>> pgrad(n, std::vector<double>(static_cast<size_t>(dim), 0.0));
    for (size_t m = 0; m < n; ++m)
      for (size_t j = 0; j < n; ++j) {
        const double kxx = gaussian_kernel(xp[m].data(), xp[j].data(), dim, sigma);
        const double kxs = gaussian_kernel(xp[m].data(), sp[j].data(), dim, sigma);
        for (int64_t t = 0; t < dim; ++t) {
          const double dxx = static_cast<double>(xp[m][static_cast<size_t>(t)]) -
                             static_cast<double>(xp[j][static_cast<size_t>(t)]);
          const double dxs = static_cast<double>(xp[m][static_cast<size_t>(t)]) -
                             static_cast<double>(sp[j][static_cast<size_t>(t)]);
          // d/dx_m [k(x_m, x_j)] appears twice by symmetry of the double sum
          pgrad[m][static_cast<size_t>(t)] +=
              2.0 * kxx * (-dxx * inv_s2) - 2.0 * kxs * (-dxs * inv_s2);
        }
      }
    T* g = grad.data() + static_cast<int64_t>(ch) * h * w;
    for (size_t m = 0; m < n; ++m) {
      const auto [py, px] = ps.pos[m];
      for (int y = 0; y < ps.patch; ++y)
        for (int x2 = 0; x2 < ps.patch; ++x2)
          g[(py + y) * w + (px + x2)] +=
              static_cast<T>(pgrad[m][static_cast<size_t>(y) * ps.patch + x2]);
    }
  }
  return grad;
}

// Bandwidth from the median pairwise patch distance of the template.
template <typename T>
double median_heuristic_sigma(const TensorT<T>& s, const PatchSet& ps) {
  const int c = s.dim(0);
  std::vector<double> d2s;
  for (int ch = 0; ch < c; ++ch) {
    std::vector<std::vector<T>> sp(ps.pos.size());
    for (size_t i = 0; i < ps.pos.size(); ++i)
      sp[i] = detail::extract_patch(s, ch, ps.pos[i].first, ps.pos[i].second, ps.patch);
    for (size_t i = 0; i < sp.size(); ++i)
      for (size_t j = i + 1; j < sp.size(); ++j) {
        double d2 = 0.0;
        for (size_t t = 0; t < sp[i].size(); ++t) {
          const double d = static_cast<double>(sp[i][t]) - static_cast<double>(sp[j][t]);
          d2 += d * d;
        }
        d2s.push_back(d2);
      }
  }
  if (d2s.empty()) return 1.0;
  std::nth_element(d2s.begin(), d2s.begin() + static_cast<std::ptrdiff_t>(d2s.size() / 2), d2s.end());
  const double med = d2s[d2s.size() / 2];
  return med > 0 ? std::sqrt(med / 2.0) : 1.0;
}

// --- jitter -------------------------------------------------------------------
// Integer shift with reflected borders followed by a small bilinear rotation
// about the image center. The transform is linear in the image for fixed
// parameters, so the gradient maps back through the transpose.

struct JitterParams {
  int dy = 0, dx = 0;
  double angle = 0.0;  // radians
};

inline JitterParams sample_jitter(RngStream& rng, int max_shift, double max_rot_deg) {
  JitterParams p;
  p.dy = max_shift > 0 ? rng.next_int(-max_shift, max_shift) : 0;
  p.dx = max_shift > 0 ? rng.next_int(-max_shift, max_shift) : 0;
  p.angle = max_rot_deg > 0 ? rng.next_uniform(-max_rot_deg, max_rot_deg) * std::numbers::pi / 180.0
                            : 0.0;
  return p;
}

namespace detail {

inline int reflect_index(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

}  // namespace detail

template <typename T>
TensorT<T> jitter_apply(const TensorT<T>& img, const JitterParams& p) {
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  TensorT<T> shifted(img.shape());
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        shifted[(static_cast<int64_t>(ch) * h + y) * w + x] =
            img[(static_cast<int64_t>(ch) * h + detail::reflect_index(y + p.dy, h)) * w +
                detail::reflect_index(x + p.dx, w)];
  if (p.angle == 0.0) return shifted;

  TensorT<T> out(img.shape());
  const double cy = 0.5 * (h - 1), cx = 0.5 * (w - 1);
  const double ca = std::cos(p.angle), sa = std::sin(p.angle);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double ry = cy + (y - cy) * ca - (x - cx) * sa;
      const double rx = cx + (y - cy) * sa + (x - cx) * ca;
      const int y0 = static_cast<int>(std::floor(ry)), x0 = static_cast<int>(std::floor(rx));
      const double wy = ry - y0, wx = rx - x0;
      for (int ch = 0; ch < c; ++ch) {
        auto at = [&](int yy, int xx) {
          return shifted[(static_cast<int64_t>(ch) * h + detail::reflect_index(yy, h)) * w +
                         detail::reflect_index(xx, w)];
        };
        out[(static_cast<int64_t>(ch) * h + y) * w + x] = static_cast<T>(
            at(y0, x0) * (1 - wy) * (1 - wx) + at(y0, x0 + 1) * (1 - wy) * wx +
            at(y0 + 1, x0) * wy * (1 - wx) + at(y0 + 1, x0 + 1) * wy * wx);
      }
    }
  return out;
}

// Transpose of jitter_apply: scatters a gradient at the transformed image
// back onto the original pixels.
template <typename T>
TensorT<T> jitter_adjoint(const TensorT<T>& grad_out, const JitterParams& p, int h, int w) {
  const int c = grad_out.dim(0);
  TensorT<T> grad_shifted(grad_out.shape());
  if (p.angle == 0.0) {
    grad_shifted = grad_out;
  } else {
    const double cy = 0.5 * (h - 1), cx = 0.5 * (w - 1);
    const double ca = std::cos(p.angle), sa = std::sin(p.angle);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double ry = cy + (y - cy) * ca - (x - cx) * sa;
        const double rx = cx + (y - cy) * sa + (x - cx) * ca;
        const int y0 = static_cast<int>(std::floor(ry)), x0 = static_cast<int>(std::floor(rx));
        const double wy = ry - y0, wx = rx - x0;
        const double ws[4] = {(1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx};
        const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
        const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
        for (int ch = 0; ch < c; ++ch) {
          const T g = grad_out[(static_cast<int64_t>(ch) * h + y) * w + x];
          for (int t = 0; t < 4; ++t)
            grad_shifted[(static_cast<int64_t>(ch) * h + detail::reflect_index(ys[t], h)) * w +
                         detail::reflect_index(xs[t], w)] += static_cast<T>(ws[t] * g);
        }
      }
  }
  TensorT<T> grad_in(grad_out.shape());
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        grad_in[(static_cast<int64_t>(ch) * h + detail::reflect_index(y + p.dy, h)) * w +
                detail::reflect_index(x + p.dx, w)] +=
            grad_shifted[(static_cast<int64_t>(ch) * h + y) * w + x];
  return grad_in;
}

// --- activation maximization -------------------------------------------------

struct RegConfig {
  double lambda_l2 = 1e-4;
  double tv_weight = 1e-3;
  double gamma_style = 0.0;
  double sigma = 0.0;  // 0 selects the median heuristic
  int jitter_max_shift = 2;
  double jitter_max_rot = 5.0;  // degrees
  int steps = 256;
  double step_size = 4.0;
  int patch = 7;
  int patch_samples = 64;

  void validate() const {
    if (steps < 1) throw InvalidSpecError("steps must be >= 1");
    if (!(lambda_l2 >= 0 && tv_weight >= 0 && gamma_style >= 0))
      throw InvalidSpecError("regularizer weights must be >= 0");
  }
};

struct TraceRow {
  int step = 0;
  double activation = 0.0;
  double tv = 0.0;
  double style = 0.0;
  double l2 = 0.0;
  double objective = 0.0;
};

struct PreImage {
  Tensor x;  // best iterate, clamped to [0, 1]
  std::vector<TraceRow> trace;
  std::string layer;
  int filter = 0;
  int best_step = -1;
  double best_objective = 0.0;
  double sigma_used = 0.0;
};

// Gradient ascent from mid-gray noise. Each step jitters the candidate,
// reads the mean activation of the chosen filter, maps that gradient back
// through the jitter transpose, and subtracts the regularizer gradients
// evaluated on the un-jittered image.
inline PreImage activation_maximize(Model& m, const std::string& layer, int filter,
                                    const RegConfig& reg, const Tensor* template_img,
                                    uint64_t seed) {
  reg.validate();
  const LayerRef* ref = m.find_layer(layer);
  if (ref == nullptr) throw InvalidSpecError("unknown layer '" + layer + "'");
  if (filter < 0 || filter >= ref->channels)
    throw InvalidSpecError("filter " + std::to_string(filter) + " out of range");
  const bool use_style = reg.gamma_style > 0.0 && template_img != nullptr;

  RngStream root{seed, 0};
  const int h = template_img != nullptr ? template_img->dim(1) : 64;
  const int w = template_img != nullptr ? template_img->dim(2) : 64;

  Tensor x({4, h, w});
  RngStream init = root.substream(1);
  for (int64_t i = 0; i < x.size(); ++i)
    x[i] = static_cast<float>(init.next_uniform(0.4, 0.6));

  double sigma = reg.sigma;
  if (use_style && sigma <= 0.0) {
    PatchSet ps = sample_patches(h, w, reg.patch, reg.patch_samples, root.substream(2));
    sigma = median_heuristic_sigma(*template_img, ps);
  }

  PreImage out;
  out.layer = layer;
  out.filter = filter;
  out.sigma_used = sigma;

  for (int step = 0; step < reg.steps; ++step) {
    RngStream srng = root.substream(100 + static_cast<uint64_t>(step));
    JitterParams jp = sample_jitter(srng, reg.jitter_max_shift, reg.jitter_max_rot);
    const bool jitter_on = jp.dy != 0 || jp.dx != 0 || jp.angle != 0.0;
    Tensor xj = jitter_on ? jitter_apply(x, jp) : x;

    m.graph.forward({{m.input, to_batch(xj)}}, Mode::eval);
    const Tensor& act = m.graph.value(ref->node_id);
    const int64_t plane = static_cast<int64_t>(act.dim(2)) * act.dim(3);
    double act_mean = 0.0;
    {
      const float* p = act.data() + act.idx4(0, filter, 0, 0);
      for (int64_t i = 0; i < plane; ++i) act_mean += p[i];
      act_mean /= static_cast<double>(plane);
    }
    Tensor seed_grad(act.shape());
    {
      float* p = seed_grad.data() + seed_grad.idx4(0, filter, 0, 0);
      for (int64_t i = 0; i < plane; ++i) p[i] = static_cast<float>(1.0 / static_cast<double>(plane));
    }
    m.graph.backward(ref->node_id, seed_grad);
    const Tensor& dxj4 = m.graph.adjoint(m.input);
    Tensor dxj({4, h, w});
    std::copy(dxj4.data(), dxj4.data() + dxj4.size(), dxj.data());
    Tensor grad = jitter_on ? jitter_adjoint(dxj, jp, h, w) : dxj;

    TraceRow row;
    row.step = step;
    row.activation = act_mean;
    row.tv = total_variation(x);
    row.l2 = 0.0;
    for (int64_t i = 0; i < x.size(); ++i) row.l2 += static_cast<double>(x[i]) * x[i];

    if (reg.tv_weight > 0.0) {
      Tensor tvg = total_variation_grad(x);
      for (int64_t i = 0; i < x.size(); ++i)
        grad[i] -= static_cast<float>(reg.tv_weight * tvg[i]);
    }
    if (use_style) {
      PatchSet ps = sample_patches(h, w, reg.patch, reg.patch_samples,
                                   root.substream(5000 + static_cast<uint64_t>(step)));
      row.style = style_loss(x, *template_img, sigma, ps);
      Tensor sg = style_loss_grad(x, *template_img, sigma, ps);
      for (int64_t i = 0; i < x.size(); ++i)
        grad[i] -= static_cast<float>(reg.gamma_style * sg[i]);
    }
    for (int64_t i = 0; i < x.size(); ++i)
      grad[i] -= static_cast<float>(2.0 * reg.lambda_l2 * x[i]);

    row.objective = row.activation - reg.tv_weight * row.tv - reg.gamma_style * row.style -
                    reg.lambda_l2 * row.l2;
    if (!std::isfinite(row.objective))
      throw DivergenceError("pre-image objective became non-finite at step " +
                            std::to_string(step));
    out.trace.push_back(row);
    if (out.best_step < 0 || row.objective > out.best_objective) {
      out.best_step = step;
      out.best_objective = row.objective;
      out.x = x;
    }

    for (int64_t i = 0; i < x.size(); ++i)
      x[i] = std::clamp(x[i] + static_cast<float>(reg.step_size) * grad[i], 0.0f, 1.0f);
  }
  return out;
}

inline PreImage activation_maximize(const Checkpoint& ckpt, const std::string& layer, int filter,
                                    const RegConfig& reg, const Tensor* template_img,
                                    uint64_t seed) {
  Model m = instantiate_model<float>(ckpt);
  return activation_maximize(m, layer, filter, reg, template_img, seed);
}

}  // namespace segxray
