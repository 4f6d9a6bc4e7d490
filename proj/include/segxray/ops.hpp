#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "segxray/errors.hpp"
#include "segxray/rng.hpp"
#include "segxray/tensor.hpp"

// Forward/backward kernels for the primitive op set. All tensors are
// (n, c, h, w) unless noted. Backward kernels accumulate into the input
// adjoints (+=), so fan-out sums contributions per the chain rule.
namespace segxray::ops {

struct Conv2dAttrs {
  int kh = 3, kw = 3;
  int stride = 1;
  int pad = 0;
};

struct PoolAttrs {
  int k = 2;
  int stride = 2;
};

inline int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
void require_4d(const TensorT<T>& t, const std::string& who) {
  if (t.rank() != 4) throw ShapeError(who + ": expected 4-d value, got rank " + std::to_string(t.rank()));
}

// --- conv2d ---------------------------------------------------------------
// x (n, ci, h, w) * w (co, ci, kh, kw) -> y (n, co, ho, wo), zero padding.

template <typename T>
std::vector<int> conv2d_shape(const TensorT<T>& x, const TensorT<T>& w, const Conv2dAttrs& a,
                              const std::string& who) {
  require_4d(x, who);
  if (w.rank() != 4) throw ShapeError(who + ": kernel must be 4-d");
  if (w.dim(1) != x.dim(1))
    throw ShapeError(who + ": kernel expects " + std::to_string(w.dim(1)) + " input channels, got " +
                     std::to_string(x.dim(1)));
  if (w.dim(2) != a.kh || w.dim(3) != a.kw) throw ShapeError(who + ": kernel extent mismatch");
  int ho = conv_out_extent(x.dim(2), a.kh, a.stride, a.pad);
  int wo = conv_out_extent(x.dim(3), a.kw, a.stride, a.pad);
  if (ho < 1 || wo < 1) throw ShapeError(who + ": output extent < 1");
  return {x.dim(0), w.dim(0), ho, wo};
}

template <typename T>
void conv2d_forward(TensorT<T>& y, const TensorT<T>& x, const TensorT<T>& w, const Conv2dAttrs& a) {
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wi = x.dim(3);
  const int co = w.dim(0), ho = y.dim(2), wo = y.dim(3);
  y.fill(T(0));
  for (int b = 0; b < n; ++b) {
    for (int oc = 0; oc < co; ++oc) {
      for (int ic = 0; ic < ci; ++ic) {
        for (int ky = 0; ky < a.kh; ++ky) {
          for (int kx = 0; kx < a.kw; ++kx) {
            const T wv = w.at4(oc, ic, ky, kx);
            if (wv == T(0)) continue;
            for (int oy = 0; oy < ho; ++oy) {
              const int iy = oy * a.stride + ky - a.pad;
              if (iy < 0 || iy >= h) continue;
              // valid ox range so the inner loop is branch-free
              int ox0 = 0, ox1 = wo;
              while (ox0 < wo && ox0 * a.stride + kx - a.pad < 0) ++ox0;
              while (ox1 > ox0 && (ox1 - 1) * a.stride + kx - a.pad >= wi) --ox1;
              T* yrow = y.data() + y.idx4(b, oc, oy, 0);
              const T* xrow = x.data() + x.idx4(b, ic, iy, 0) + (kx - a.pad);
              if (a.stride == 1) {
                for (int ox = ox0; ox < ox1; ++ox) yrow[ox] += wv * xrow[ox];
              } else {
                for (int ox = ox0; ox < ox1; ++ox) yrow[ox] += wv * xrow[ox * a.stride];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward(TensorT<T>& dx, TensorT<T>& dw, const TensorT<T>& dy, const TensorT<T>& x,
                     const TensorT<T>& w, const Conv2dAttrs& a) {
  const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wi = x.dim(3);
  const int co = w.dim(0), ho = dy.dim(2), wo = dy.dim(3);
  for (int b = 0; b < n; ++b) {
    for (int oc = 0; oc < co; ++oc) {
      for (int ic = 0; ic < ci; ++ic) {
        for (int ky = 0; ky < a.kh; ++ky) {
          for (int kx = 0; kx < a.kw; ++kx) {
            const T wv = w.at4(oc, ic, ky, kx);
            T wgrad = T(0);
            for (int oy = 0; oy < ho; ++oy) {
              const int iy = oy * a.stride + ky - a.pad;
              if (iy < 0 || iy >= h) continue;
              int ox0 = 0, ox1 = wo;
              while (ox0 < wo && ox0 * a.stride + kx - a.pad < 0) ++ox0;
              while (ox1 > ox0 && (ox1 - 1) * a.stride + kx - a.pad >= wi) --ox1;
              const T* dyrow = dy.data() + dy.idx4(b, oc, oy, 0);
              const T* xrow = x.data() + x.idx4(b, ic, iy, 0) + (kx - a.pad);
              T* dxrow = dx.data() + dx.idx4(b, ic, iy, 0) + (kx - a.pad);
              if (a.stride == 1) {
                for (int ox = ox0; ox < ox1; ++ox) {
                  wgrad += dyrow[ox] * xrow[ox];
                  dxrow[ox] += wv * dyrow[ox];
                }
              } else {
                for (int ox = ox0; ox < ox1; ++ox) {
                  wgrad += dyrow[ox] * xrow[ox * a.stride];
                  dxrow[ox * a.stride] += wv * dyrow[ox];
                }
              }
            }
            dw.at4(oc, ic, ky, kx) += wgrad;
          }
        }
      }
    }
  }
}

// --- pointwise ------------------------------------------------------------

template <typename T>
void relu_forward(TensorT<T>& y, const TensorT<T>& x) {
  for (int64_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward(TensorT<T>& dx, const TensorT<T>& dy, const TensorT<T>& x) {
  for (int64_t i = 0; i < x.size(); ++i)
    if (x[i] > T(0)) dx[i] += dy[i];
}

template <typename T>
void sigmoid_forward(TensorT<T>& y, const TensorT<T>& x) {
  for (int64_t i = 0; i < x.size(); ++i) y[i] = T(1) / (T(1) + std::exp(-x[i]));
}

template <typename T>
void sigmoid_backward(TensorT<T>& dx, const TensorT<T>& dy, const TensorT<T>& y) {
  for (int64_t i = 0; i < y.size(); ++i) dx[i] += dy[i] * y[i] * (T(1) - y[i]);
}

template <typename T>
void add_forward(TensorT<T>& y, const TensorT<T>& a, const TensorT<T>& b) {
  for (int64_t i = 0; i < y.size(); ++i) y[i] = a[i] + b[i];
}

template <typename T>
void add_backward_into(TensorT<T>& dx, const TensorT<T>& dy) {
  for (int64_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
}

// --- max_pool2d -----------------------------------------------------------
// Ties resolve to the first index in row-major window scan; the backward
// pass recomputes that argmax, so the routing is identical by construction.

template <typename T>
void max_pool2d_forward(TensorT<T>& y, const TensorT<T>& x, const PoolAttrs& a) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = y.dim(2), wo = y.dim(3);
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          for (int ky = 0; ky < a.k; ++ky)
            for (int kx = 0; kx < a.k; ++kx) {
              const int iy = oy * a.stride + ky, ix = ox * a.stride + kx;
              if (iy >= h || ix >= w) continue;
              const T v = x.at4(b, ch, iy, ix);
              if (v > best) best = v;
            }
          y.at4(b, ch, oy, ox) = best;
        }
}

template <typename T>
void max_pool2d_backward(TensorT<T>& dx, const TensorT<T>& dy, const TensorT<T>& x,
                         const PoolAttrs& a) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = dy.dim(2), wo = dy.dim(3);
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          int by = -1, bx = -1;
          for (int ky = 0; ky < a.k; ++ky)
            for (int kx = 0; kx < a.k; ++kx) {
              const int iy = oy * a.stride + ky, ix = ox * a.stride + kx;
              if (iy >= h || ix >= w) continue;
              const T v = x.at4(b, ch, iy, ix);
              if (v > best) {
                best = v;
                by = iy;
                bx = ix;
              }
            }
          dx.at4(b, ch, by, bx) += dy.at4(b, ch, oy, ox);
        }
}

// --- upsample_nearest2x ---------------------------------------------------

template <typename T>
void upsample_nearest2x_forward(TensorT<T>& y, const TensorT<T>& x) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < 2 * h; ++oy) {
        const T* xrow = x.data() + x.idx4(b, ch, oy / 2, 0);
        T* yrow = y.data() + y.idx4(b, ch, oy, 0);
        for (int ox = 0; ox < 2 * w; ++ox) yrow[ox] = xrow[ox / 2];
      }
}

template <typename T>
void upsample_nearest2x_backward(TensorT<T>& dx, const TensorT<T>& dy) {
  const int n = dx.dim(0), c = dx.dim(1), h = dx.dim(2), w = dx.dim(3);
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < 2 * h; ++oy) {
        const T* dyrow = dy.data() + dy.idx4(b, ch, oy, 0);
        T* dxrow = dx.data() + dx.idx4(b, ch, oy / 2, 0);
        for (int ox = 0; ox < 2 * w; ++ox) dxrow[ox / 2] += dyrow[ox];
      }
}

// --- concat_channels ------------------------------------------------------

template <typename T>
void concat_channels_forward(TensorT<T>& y, const std::vector<const TensorT<T>*>& xs) {
  const int n = y.dim(0), h = y.dim(2), w = y.dim(3);
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int b = 0; b < n; ++b) {
    int co = 0;
    for (const TensorT<T>* x : xs) {
      for (int ch = 0; ch < x->dim(1); ++ch, ++co) {
        const T* src = x->data() + x->idx4(b, ch, 0, 0);
        T* dst = y.data() + y.idx4(b, co, 0, 0);
        std::copy(src, src + plane, dst);
      }
    }
  }
}

template <typename T>
void concat_channels_backward(std::vector<TensorT<T>*>& dxs, const TensorT<T>& dy) {
  const int n = dy.dim(0), h = dy.dim(2), w = dy.dim(3);
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int b = 0; b < n; ++b) {
    int co = 0;
    for (TensorT<T>* dx : dxs) {
      for (int ch = 0; ch < dx->dim(1); ++ch, ++co) {
        const T* src = dy.data() + dy.idx4(b, co, 0, 0);
        T* dst = dx->data() + dx->idx4(b, ch, 0, 0);
        for (int64_t i = 0; i < plane; ++i) dst[i] += src[i];
      }
    }
  }
}

// --- dropout --------------------------------------------------------------
// Inverted scaling: kept units divide by keep-probability, so eval mode is
// the plain identity. The Bernoulli mask is a pure function of
// (rng key, element index); rate 0 keeps everything exactly.

template <typename T>
void dropout_forward(TensorT<T>& y, TensorT<T>& mask, const TensorT<T>& x, double rate,
                     uint64_t key) {
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (int64_t i = 0; i < x.size(); ++i) {
    const bool keep = uniform01_at(key, static_cast<uint64_t>(i)) >= rate;
    mask[i] = keep ? scale : T(0);
    y[i] = x[i] * mask[i];
  }
}

template <typename T>
void dropout_backward(TensorT<T>& dx, const TensorT<T>& dy, const TensorT<T>& mask) {
  for (int64_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * mask[i];
}

// --- global_average_pool --------------------------------------------------
// (n, c, h, w) -> (n, c, 1, 1)

template <typename T>
void global_average_pool_forward(TensorT<T>& y, const TensorT<T>& x) {
  const int n = x.dim(0), c = x.dim(1);
  const int64_t plane = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const T* src = x.data() + x.idx4(b, ch, 0, 0);
      T acc = T(0);
      for (int64_t i = 0; i < plane; ++i) acc += src[i];
      y.at4(b, ch, 0, 0) = acc / static_cast<T>(plane);
    }
}

template <typename T>
void global_average_pool_backward(TensorT<T>& dx, const TensorT<T>& dy) {
  const int n = dx.dim(0), c = dx.dim(1);
  const int64_t plane = static_cast<int64_t>(dx.dim(2)) * dx.dim(3);
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const T g = dy.at4(b, ch, 0, 0) / static_cast<T>(plane);
      T* dst = dx.data() + dx.idx4(b, ch, 0, 0);
      for (int64_t i = 0; i < plane; ++i) dst[i] += g;
    }
}

// --- affine_scale_bias ----------------------------------------------------
// Per-channel y = x * scale[c] + bias[c]; scale and bias are rank-1 (c).

template <typename T>
void affine_forward(TensorT<T>& y, const TensorT<T>& x, const TensorT<T>& scale,
                    const TensorT<T>& bias) {
  const int n = x.dim(0), c = x.dim(1);
  const int64_t plane = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const T s = scale[ch], o = bias[ch];
      const T* src = x.data() + x.idx4(b, ch, 0, 0);
      T* dst = y.data() + y.idx4(b, ch, 0, 0);
      for (int64_t i = 0; i < plane; ++i) dst[i] = src[i] * s + o;
    }
}

template <typename T>
void affine_backward(TensorT<T>& dx, TensorT<T>& dscale, TensorT<T>& dbias, const TensorT<T>& dy,
                     const TensorT<T>& x, const TensorT<T>& scale) {
  const int n = x.dim(0), c = x.dim(1);
  const int64_t plane = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  for (int b = 0; b < n; ++b)
    for (int ch = 0; ch < c; ++ch) {
      const T s = scale[ch];
      const T* src = x.data() + x.idx4(b, ch, 0, 0);
      const T* g = dy.data() + dy.idx4(b, ch, 0, 0);
      T* dst = dx.data() + dx.idx4(b, ch, 0, 0);
      T ds = T(0), db = T(0);
      for (int64_t i = 0; i < plane; ++i) {
        dst[i] += g[i] * s;
        ds += g[i] * src[i];
        db += g[i];
      }
      dscale[ch] += ds;
      dbias[ch] += db;
    }
}

}  // namespace segxray::ops
