#include <catch2/catch_amalgamated.hpp>

#include "segxray/metrics.hpp"
#include "segxray/rng.hpp"
#include "support/oracles.hpp"

using namespace segxray;
using Catch::Approx;

namespace {

Mask random_mask(int h, int w, double p, uint64_t seed) {
  Mask m(h, w);
  RngStream rng{seed, 0};
  for (auto& b : m.v) b = rng.next_f64() < p ? 1 : 0;
  return m;
}

}  // namespace

TEST_CASE("dice of identical nonempty masks is 1") {
  Mask a = random_mask(8, 8, 0.4, 3);
  REQUIRE(a.count() > 0);
  REQUIRE(dice(a, a) == 1.0);
}

TEST_CASE("dice of disjoint nonempty masks is 0") {
  Mask a(4, 4), b(4, 4);
  a.at(0, 0) = 1;
  b.at(3, 3) = 1;
  REQUIRE(dice(a, b) == 0.0);
}

TEST_CASE("dice of all-ones vs left column is 2/3") {
  Mask p(2, 2), g(2, 2);
  p.v.assign(4, 1);
  g.at(0, 0) = g.at(1, 0) = 1;
  REQUIRE(dice(p, g) == Approx(2.0 / 3.0));
}

TEST_CASE("dice of two empty masks is 1 by convention") {
  Mask a(4, 4), b(4, 4);
  REQUIRE(dice(a, b) == 1.0);
}

TEST_CASE("dice is symmetric and permutation-invariant") {
  for (uint64_t s = 0; s < 10; ++s) {
    Mask a = random_mask(8, 8, 0.3, s);
    Mask b = random_mask(8, 8, 0.5, s + 100);
    REQUIRE(dice(a, b) == dice(b, a));

    // apply the same pixel permutation (a rotation of the flat layout) to both
    Mask ar(8, 8), br(8, 8);
    for (size_t i = 0; i < a.v.size(); ++i) {
      ar.v[(i + 17) % a.v.size()] = a.v[i];
      br.v[(i + 17) % a.v.size()] = b.v[i];
    }
    REQUIRE(dice(ar, br) == dice(a, b));
  }
}

TEST_CASE("iou identical masks score 1, disjoint masks 0") {
  Mask a = random_mask(8, 8, 0.4, 9);
  REQUIRE(iou(a, a) == 1.0);
  Mask b(8, 8), c(8, 8);
  b.at(0, 0) = 1;
  c.at(7, 7) = 1;
  REQUIRE(iou(b, c) == 0.0);
  REQUIRE(iou(Mask(3, 3), Mask(3, 3)) == 0.0);  // empty union
}

TEST_CASE("iou matches the brute-force oracle on random 8x8 pairs") {
  for (uint64_t s = 0; s < 50; ++s) {
    Mask a = random_mask(8, 8, 0.4, s);
    Mask b = random_mask(8, 8, 0.4, s + 1000);
    REQUIRE(iou(a, b) == oracles::iou_bruteforce(a, b));
  }
}

TEST_CASE("iou matches brute force on every 3x3 mask against a fixed gt set") {
  std::vector<Mask> gts;
  for (uint32_t bits : {0u, 1u, 0x1FFu, 0x0AAu, 0x155u, 0x1B0u}) {
    Mask g(3, 3);
    for (int i = 0; i < 9; ++i) g.v[static_cast<size_t>(i)] = (bits >> i) & 1u;
    gts.push_back(g);
  }
  for (uint32_t bits = 0; bits < 512; ++bits) {
    Mask m(3, 3);
    for (int i = 0; i < 9; ++i) m.v[static_cast<size_t>(i)] = (bits >> i) & 1u;
    for (const Mask& g : gts) REQUIRE(iou(m, g) == oracles::iou_bruteforce(m, g));
  }
}

TEST_CASE("dice and iou reject shape mismatches") {
  REQUIRE_THROWS_AS(dice(Mask(2, 2), Mask(2, 3)), ShapeError);
  REQUIRE_THROWS_AS(iou(Mask(2, 2), Mask(3, 2)), ShapeError);
}
