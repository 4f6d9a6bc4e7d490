#pragma once

#include <cstdint>
#include <vector>

#include "segxray/errors.hpp"

namespace segxray {

// Binary image; v is row-major, one byte per pixel, nonzero = set.
struct Mask {
  int h = 0, w = 0;
  std::vector<uint8_t> v;

  Mask() = default;
  Mask(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, 0) {}

  uint8_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  uint8_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
  int64_t count() const {
    int64_t n = 0;
    for (uint8_t b : v) n += b ? 1 : 0;
    return n;
  }
  bool empty_mask() const { return count() == 0; }
  bool operator==(const Mask&) const = default;
};

inline Mask mask_and(const Mask& a, const Mask& b) {
  if (a.h != b.h || a.w != b.w) throw ShapeError("mask_and: shape mismatch");
  Mask out(a.h, a.w);
  for (size_t i = 0; i < a.v.size(); ++i) out.v[i] = (a.v[i] && b.v[i]) ? 1 : 0;
  return out;
}

// One pass of the 3x3 binary median (majority of the 9-window, zero-padded
// borders).
inline Mask median3x3(const Mask& m) {
  Mask out(m.h, m.w);
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      int ones = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < m.h && xx >= 0 && xx < m.w && m.at(yy, xx)) ++ones;
        }
      out.at(y, x) = ones >= 5 ? 1 : 0;
    }
  return out;
}

// Iterates the median to a genuine fixed point. Majority dynamics settle
// into cycles of period at most 2; a period-2 pair is resolved by taking the
// intersection, which strictly shrinks the mask, so this terminates.
inline Mask median3x3_fixpoint(const Mask& m0) {
  Mask prev = m0;
  Mask cur = median3x3(prev);
  while (cur != prev) {
    Mask next = median3x3(cur);
    if (next == prev) {
      // period-2 cycle: the intersection is strictly smaller than both
      // states, so restarting from it terminates.
      prev = mask_and(cur, prev);
      cur = median3x3(prev);
      continue;
    }
    prev = std::move(cur);
    cur = std::move(next);
  }
  return cur;
}

// Largest 4-connected component; among equal sizes the component whose
// first pixel appears earliest in row-major order wins. Empty stays empty.
inline Mask largest_component4(const Mask& m) {
  Mask out(m.h, m.w);
  std::vector<int32_t> label(m.v.size(), -1);
  int best_label = -1;
  int64_t best_size = 0;
  int next = 0;
  std::vector<int32_t> stack;
  for (int y0 = 0; y0 < m.h; ++y0)
    for (int x0 = 0; x0 < m.w; ++x0) {
      const int32_t start = y0 * m.w + x0;
      if (!m.v[static_cast<size_t>(start)] || label[static_cast<size_t>(start)] >= 0) continue;
      int64_t sz = 0;
      stack.assign(1, start);
      label[static_cast<size_t>(start)] = next;
      while (!stack.empty()) {
        const int32_t p = stack.back();
        stack.pop_back();
        ++sz;
        const int y = p / m.w, x = p % m.w;
        const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
        for (int d = 0; d < 4; ++d) {
          const int yy = y + dy[d], xx = x + dx[d];
          if (yy < 0 || yy >= m.h || xx < 0 || xx >= m.w) continue;
          const int32_t q = yy * m.w + xx;
          if (m.v[static_cast<size_t>(q)] && label[static_cast<size_t>(q)] < 0) {
            label[static_cast<size_t>(q)] = next;
            stack.push_back(q);
          }
        }
      }
      if (sz > best_size) {  // strict: ties keep the earlier (smaller top-left) label
        best_size = sz;
        best_label = next;
      }
      ++next;
    }
  if (best_label >= 0)
    for (size_t i = 0; i < m.v.size(); ++i) out.v[i] = label[i] == best_label ? 1 : 0;
  return out;
}

inline int component_count4(const Mask& m) {
  std::vector<char> seen(m.v.size(), 0);
  int count = 0;
  std::vector<int32_t> stack;
  for (int32_t start = 0; start < static_cast<int32_t>(m.v.size()); ++start) {
    if (!m.v[static_cast<size_t>(start)] || seen[static_cast<size_t>(start)]) continue;
    ++count;
    stack.assign(1, start);
    seen[static_cast<size_t>(start)] = 1;
    while (!stack.empty()) {
      const int32_t p = stack.back();
      stack.pop_back();
      const int y = p / m.w, x = p % m.w;
      const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
      for (int d = 0; d < 4; ++d) {
        const int yy = y + dy[d], xx = x + dx[d];
        if (yy < 0 || yy >= m.h || xx < 0 || xx >= m.w) continue;
        const int32_t q = yy * m.w + xx;
        if (m.v[static_cast<size_t>(q)] && !seen[static_cast<size_t>(q)]) {
          seen[static_cast<size_t>(q)] = 1;
          stack.push_back(q);
        }
      }
    }
  }
  return count;
}

}  // namespace segxray
