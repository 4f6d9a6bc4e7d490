#pragma once

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "segxray/errors.hpp"
#include "segxray/mask.hpp"
#include "segxray/tensor.hpp"

namespace segxray {

struct ImageRGB {
  int w = 0, h = 0;
  std::vector<uint8_t> px;  // row-major, 3 bytes per pixel

  ImageRGB() = default;
  ImageRGB(int h_, int w_) : w(w_), h(h_), px(static_cast<size_t>(w_) * h_ * 3, 0) {}

  void set(int y, int x, uint8_t r, uint8_t g, uint8_t b) {
    const size_t i = (static_cast<size_t>(y) * w + x) * 3;
    px[i] = r;
    px[i + 1] = g;
    px[i + 2] = b;
  }
};

namespace detail {

inline void put_be32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

inline void png_chunk(std::vector<uint8_t>& out, const char type[4],
                      const std::vector<uint8_t>& data) {
  put_be32(out, static_cast<uint32_t>(data.size()));
  std::vector<uint8_t> block(type, type + 4);
  block.insert(block.end(), data.begin(), data.end());
  out.insert(out.end(), block.begin(), block.end());
  put_be32(out, static_cast<uint32_t>(crc32(0L, block.data(), static_cast<uInt>(block.size()))));
}

// Minimal PNG encoder with pinned settings (filter 0, zlib level 6), so
// identical pixels always produce identical bytes.
inline void write_png(const std::filesystem::path& path, int w, int h, int channels,
                      const uint8_t* pixels) {
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(h) * (static_cast<size_t>(w) * channels + 1));
  for (int y = 0; y < h; ++y) {
    raw.push_back(0);  // filter: none
    const uint8_t* row = pixels + static_cast<size_t>(y) * w * channels;
    raw.insert(raw.end(), row, row + static_cast<size_t>(w) * channels);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> z(bound);
  if (compress2(z.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw Error("io", "png compression failed");
  z.resize(bound);

  std::vector<uint8_t> out{137, 80, 78, 71, 13, 10, 26, 10};
  std::vector<uint8_t> ihdr;
  put_be32(ihdr, static_cast<uint32_t>(w));
  put_be32(ihdr, static_cast<uint32_t>(h));
  ihdr.push_back(8);                                      // bit depth
  ihdr.push_back(channels == 1 ? 0 : 2);                  // gray or truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  png_chunk(out, "IHDR", ihdr);
  png_chunk(out, "IDAT", z);
  png_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw MissingFileError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

}  // namespace detail

inline void write_png_rgb(const std::filesystem::path& path, const ImageRGB& img) {
  detail::write_png(path, img.w, img.h, 3, img.px.data());
}

inline void write_png_gray(const std::filesystem::path& path, int w, int h,
                           const std::vector<uint8_t>& pixels) {
  detail::write_png(path, w, h, 1, pixels.data());
}

enum class Palette { gray, jet, red_overlay };

inline Palette parse_palette(const std::string& s) {
  if (s == "gray") return Palette::gray;
  if (s == "jet") return Palette::jet;
  if (s == "red-overlay") return Palette::red_overlay;
  throw ConfigError("unknown palette '" + s + "'");
}

// Per-image min->0, max->255 normalization; a constant image maps to 0.
inline std::vector<uint8_t> normalize_u8(const Tensor& t, bool fixed_range = false) {
  std::vector<uint8_t> out(static_cast<size_t>(t.size()));
  float lo = 0.0f, hi = 1.0f;
  if (!fixed_range) {
    lo = hi = t.size() ? t[0] : 0.0f;
    for (int64_t i = 1; i < t.size(); ++i) {
      lo = std::min(lo, t[i]);
      hi = std::max(hi, t[i]);
    }
  }
  const float range = hi - lo;
  for (int64_t i = 0; i < t.size(); ++i) {
    const double v = range > 0 ? (t[i] - lo) / range : 0.0;
    out[static_cast<size_t>(i)] =
        static_cast<uint8_t>(std::clamp<long>(std::lround(255.0 * v), 0, 255));
  }
  return out;
}

inline void jet_color(double v, uint8_t& r, uint8_t& g, uint8_t& b) {
  auto seg = [](double x) { return std::clamp(1.5 - std::abs(x), 0.0, 1.0); };
  r = static_cast<uint8_t>(std::lround(255.0 * seg(4.0 * v - 3.0)));
  g = static_cast<uint8_t>(std::lround(255.0 * seg(4.0 * v - 2.0)));
  b = static_cast<uint8_t>(std::lround(255.0 * seg(4.0 * v - 1.0)));
}

// 2-d tensor -> image under a palette; red_overlay expects `base` (same
// shape) as the grayscale backdrop.
inline ImageRGB render_plane(const Tensor& plane, Palette pal, const Tensor* base = nullptr,
                             bool fixed_range = false) {
  if (plane.rank() != 2) throw ShapeError("render_plane expects a (h, w) tensor");
  const int h = plane.dim(0), w = plane.dim(1);
  const std::vector<uint8_t> v8 = normalize_u8(plane, fixed_range);
  ImageRGB img(h, w);
  std::vector<uint8_t> base8;
  if (pal == Palette::red_overlay) {
    if (base == nullptr || !base->same_shape(plane))
      throw ShapeError("red_overlay needs a base plane of matching shape");
    base8 = normalize_u8(*base, fixed_range);
  }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const size_t i = static_cast<size_t>(y) * w + x;
      switch (pal) {
        case Palette::gray:
          img.set(y, x, v8[i], v8[i], v8[i]);
          break;
        case Palette::jet: {
          uint8_t r, g, b;
          jet_color(v8[i] / 255.0, r, g, b);
          img.set(y, x, r, g, b);
          break;
        }
        case Palette::red_overlay: {
          const double a = v8[i] / 255.0;
          const double g0 = base8[i];
          img.set(y, x, static_cast<uint8_t>(std::lround(g0 + (255.0 - g0) * a)),
                  static_cast<uint8_t>(std::lround(g0 * (1.0 - a))),
                  static_cast<uint8_t>(std::lround(g0 * (1.0 - a))));
          break;
        }
      }
    }
  return img;
}

// Fixed colors for the four output classes (background, edema,
// non-enhancing core, enhancing core).
inline void class_color(int cls, uint8_t& r, uint8_t& g, uint8_t& b) {
  switch (cls) {
    case 1: r = 60; g = 180; b = 75; break;    // edema: green
    case 2: r = 0; g = 130; b = 200; break;    // non-enhancing core: blue
    case 3: r = 230; g = 25; b = 75; break;    // enhancing core: red
    default: r = 30; g = 30; b = 30; break;    // background
  }
}

inline ImageRGB render_classes(const std::vector<uint8_t>& classes, int h, int w) {
  ImageRGB img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      uint8_t r, g, b;
      class_color(classes[static_cast<size_t>(y) * w + x], r, g, b);
      img.set(y, x, r, g, b);
    }
  return img;
}

// Binary mask painted over a grayscale plane.
inline ImageRGB render_mask_overlay(const Mask& m, const Tensor& base) {
  if (base.rank() != 2 || base.dim(0) != m.h || base.dim(1) != m.w)
    throw ShapeError("render_mask_overlay: base plane must match the mask");
  const std::vector<uint8_t> base8 = normalize_u8(base);
  ImageRGB img(m.h, m.w);
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      const size_t i = static_cast<size_t>(y) * m.w + x;
      const uint8_t g0 = base8[i];
      if (m.v[i])
        img.set(y, x, static_cast<uint8_t>(179 + (76 * g0) / 255),
                static_cast<uint8_t>((76 * g0) / 255), static_cast<uint8_t>((76 * g0) / 255));
      else
        img.set(y, x, g0, g0, g0);
    }
  return img;
}

inline ImageRGB hstack(const std::vector<ImageRGB>& panels) {
  if (panels.empty()) return {};
  int w = 0;
  for (const auto& p : panels) w += p.w;
  ImageRGB out(panels[0].h, w);
  int x0 = 0;
  for (const auto& p : panels) {
    for (int y = 0; y < p.h; ++y)
      for (int x = 0; x < p.w; ++x) {
        const size_t src = (static_cast<size_t>(y) * p.w + x) * 3;
        out.set(y, x0 + x, p.px[src], p.px[src + 1], p.px[src + 2]);
      }
    x0 += p.w;
  }
  return out;
}

}  // namespace segxray
