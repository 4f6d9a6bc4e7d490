#pragma once

#include <algorithm>
#include <cmath>

#include "segxray/tensor.hpp"

namespace segxray {

// Bilinear 2-d resize with half-pixel centers and clamped edges.
template <typename T>
TensorT<T> bilinear_resize_plane(const TensorT<T>& src, int dh, int dw) {
  if (src.rank() != 2) throw ShapeError("bilinear_resize_plane expects a (h, w) tensor");
  const int sh = src.dim(0), sw = src.dim(1);
  TensorT<T> out({dh, dw});
  auto at = [&](int y, int x) {
    y = std::clamp(y, 0, sh - 1);
    x = std::clamp(x, 0, sw - 1);
    return src[static_cast<int64_t>(y) * sw + x];
  };
  for (int y = 0; y < dh; ++y) {
    const double fy = (y + 0.5) * sh / dh - 0.5;
    const int y0 = static_cast<int>(std::floor(fy));
    const double wy = fy - y0;
    for (int x = 0; x < dw; ++x) {
      const double fx = (x + 0.5) * sw / dw - 0.5;
      const int x0 = static_cast<int>(std::floor(fx));
      const double wx = fx - x0;
      const double v = at(y0, x0) * (1 - wy) * (1 - wx) + at(y0, x0 + 1) * (1 - wy) * wx +
                       at(y0 + 1, x0) * wy * (1 - wx) + at(y0 + 1, x0 + 1) * wy * wx;
      out[static_cast<int64_t>(y) * dw + x] = static_cast<T>(v);
    }
  }
  return out;
}

// Channel k of a (1, c, h, w) value as a (h, w) plane.
template <typename T>
TensorT<T> channel_plane(const TensorT<T>& value, int k) {
  if (value.rank() != 4 || value.dim(0) != 1) throw ShapeError("channel_plane expects (1, c, h, w)");
  TensorT<T> out({value.dim(2), value.dim(3)});
  const T* src = value.data() + value.idx4(0, k, 0, 0);
  std::copy(src, src + out.size(), out.data());
  return out;
}

}  // namespace segxray
