#include <catch2/catch_amalgamated.hpp>

#include "segxray/phantom.hpp"

using namespace segxray;

namespace {

bool subset(const Mask& inner, const Mask& outer) {
  for (size_t i = 0; i < inner.v.size(); ++i)
    if (inner.v[i] && !outer.v[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("tumor-free samples have empty tumor masks but a brain") {
  SyntheticSample s = generate_sample(11, 0, 64, 64, false);
  REQUIRE(s.wt.empty_mask());
  REQUIRE(s.tc.empty_mask());
  REQUIRE(s.et.empty_mask());
  REQUIRE(s.brain.count() > 0);
}

TEST_CASE("generation is bit-identical for the same (seed, index)") {
  SyntheticSample a = generate_sample(42, 7, 64, 64, true);
  SyntheticSample b = generate_sample(42, 7, 64, 64, true);
  REQUIRE(a.image == b.image);
  REQUIRE(a.labels == b.labels);
  REQUIRE(a.brain == b.brain);
  REQUIRE(a.wt == b.wt);
  SyntheticSample c = generate_sample(42, 8, 64, 64, true);
  REQUIRE(a.image != c.image);
}

TEST_CASE("nesting is strict and proper over many seeds") {
  for (uint64_t seed = 0; seed < 25; ++seed)
    for (int idx = 0; idx < 40; ++idx) {
      SyntheticSample s = generate_sample(seed * 1000, idx, 64, 64, true);
      INFO("seed=" << seed << " idx=" << idx);
      REQUIRE(subset(s.et, s.tc));
      REQUIRE(subset(s.tc, s.wt));
      REQUIRE(subset(s.wt, s.brain));
      REQUIRE(s.et.count() > 0);
      REQUIRE(s.tc.count() > s.et.count());
      REQUIRE(s.wt.count() > s.tc.count());
      REQUIRE(s.brain.count() > s.wt.count());
    }
}

TEST_CASE("label map and derived masks agree") {
  SyntheticSample s = generate_sample(5, 3, 64, 64, true);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const uint8_t lab = s.labels[static_cast<size_t>(y) * 64 + x];
      REQUIRE(s.brain.at(y, x) == (lab >= kBrainOnly ? 1 : 0));
      REQUIRE(s.wt.at(y, x) == (lab >= kEdema ? 1 : 0));
      REQUIRE(s.tc.at(y, x) == (lab >= kCoreNonEnhancing ? 1 : 0));
      REQUIRE(s.et.at(y, x) == (lab == kEnhancing ? 1 : 0));
    }
}

TEST_CASE("image values stay in [0, 1]") {
  SyntheticSample s = generate_sample(123, 0, 64, 64, true);
  for (float v : s.image.storage()) {
    REQUIRE(v >= 0.0f);
    REQUIRE(v <= 1.0f);
  }
}

TEST_CASE("tumor contrast clears one noise sigma in at least two channels") {
  for (int idx = 0; idx < 20; ++idx) {
    SyntheticSample s = generate_sample(77, idx, 64, 64, true);
    int strong = 0;
    for (int c = 0; c < 4; ++c) {
      double wt_sum = 0, rest_sum = 0;
      int64_t wt_n = 0, rest_n = 0;
      for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) {
          const float v = s.image[static_cast<int64_t>(c) * 64 * 64 + y * 64 + x];
          if (s.wt.at(y, x)) {
            wt_sum += v;
            ++wt_n;
          } else if (s.brain.at(y, x)) {
            rest_sum += v;
            ++rest_n;
          }
        }
      if (std::abs(wt_sum / wt_n - rest_sum / rest_n) >= kNoiseSigma) ++strong;
    }
    REQUIRE(strong >= 2);
  }
}

TEST_CASE("dataset handles are stable, ordered, and hit the tumor quota") {
  DatasetHandle hd{.count = 200, .base_seed = 99, .h = 64, .w = 64, .tumor_fraction = 0.9};
  REQUIRE(hd.tumor_count() == 180);
  int tumors = 0;
  for (int i = 0; i < hd.count; ++i) tumors += hd.is_tumor(i) ? 1 : 0;
  REQUIRE(tumors == 180);

  DatasetHandle empty{.count = 0, .base_seed = 1};
  REQUIRE(generate_dataset(empty).empty());

  DatasetHandle small{.count = 6, .base_seed = 5, .h = 32, .w = 32, .tumor_fraction = 0.5};
  auto a = generate_dataset(small);
  auto b = generate_dataset(small);
  REQUIRE(a.size() == 6);
  for (size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].image == b[i].image);
    REQUIRE(a[i].labels == b[i].labels);
  }
}

TEST_CASE("small extents are rejected") {
  REQUIRE_THROWS_AS(generate_sample(1, 0, 16, 64, true), InvalidSpecError);
}
