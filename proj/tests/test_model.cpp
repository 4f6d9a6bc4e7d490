#include <catch2/catch_amalgamated.hpp>

#include "segxray/model.hpp"

using namespace segxray;
using Catch::Approx;

namespace {

int64_t param_count(const Model& m) {
  int64_t n = 0;
  for (int id : m.graph.parameters()) n += m.graph.value(id).size();
  return n;
}

Tensor random_image(int c, int h, int w, uint64_t seed) {
  Tensor t({c, h, w});
  RngStream rng{seed, 0};
  for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.next_f64());
  return t;
}

}  // namespace

TEST_CASE("output spatial shape equals input shape times out_channels") {
  ArchSpec spec{.family = Family::plain, .depth = 1, .base_channels = 2};
  Model m = build_model(spec, 3);
  m.graph.forward({{m.input, Tensor({1, 4, 16, 16})}}, Mode::eval);
  REQUIRE(m.graph.value(m.logits).shape() == std::vector<int>{1, 4, 16, 16});
}

TEST_CASE("skip family has strictly more parameters than plain") {
  ArchSpec plain{.family = Family::plain};
  ArchSpec skip{.family = Family::skip};
  REQUIRE(param_count(build_model(skip, 1)) > param_count(build_model(plain, 1)));
}

TEST_CASE("identical (spec, seed) builds identical parameters") {
  ArchSpec spec{.family = Family::residual, .depth = 2, .base_channels = 4};
  Model a = build_model(spec, 99);
  Model b = build_model(spec, 99);
  auto ids = a.graph.parameters();
  REQUIRE(ids == b.graph.parameters());
  for (int id : ids) REQUIRE(a.graph.value(id) == b.graph.value(id));

  Model c = build_model(spec, 100);
  bool any_diff = false;
  for (int id : ids) any_diff = any_diff || !(a.graph.value(id) == c.graph.value(id));
  REQUIRE(any_diff);
}

TEST_CASE("invalid specs are rejected") {
  REQUIRE_THROWS_AS(build_model({.family = Family::plain, .depth = 0}, 1), InvalidSpecError);
  REQUIRE_THROWS_AS(build_model({.family = Family::plain, .base_channels = 0}, 1),
                    InvalidSpecError);
}

TEST_CASE("all three families run forward and layers are registered in order") {
  for (Family f : {Family::plain, Family::skip, Family::residual}) {
    ArchSpec spec{.family = f, .depth = 2, .base_channels = 4};
    Model m = build_model(spec, 5);
    m.graph.forward({{m.input, Tensor({1, 4, 32, 32})}}, Mode::eval);
    REQUIRE(!m.layers.empty());
    int prev = -1;
    for (const auto& l : m.layers) {
      REQUIRE(l.node_id > prev);
      prev = l.node_id;
      REQUIRE(m.graph.value(l.node_id).dim(1) == l.channels);
    }
    REQUIRE(m.find_layer(m.layers.front().name) != nullptr);
    REQUIRE(m.find_layer("no-such-layer") == nullptr);
  }
}

TEST_CASE("softmax probabilities sum to one per pixel") {
  Model m = build_model({.family = Family::skip, .depth = 2, .base_channels = 4}, 11);
  Tensor img = random_image(4, 32, 32, 1);
  Prediction p = predict(m, img, Mode::eval);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      float s = 0;
      for (int c = 0; c < 4; ++c) s += p.probs.at4(0, c, y, x);
      REQUIRE(s == Approx(1.0).margin(1e-6));
    }
}

TEST_CASE("eval-mode prediction is repeatable") {
  Model m = build_model({.family = Family::plain, .depth = 2, .base_channels = 4}, 21);
  Tensor img = random_image(4, 32, 32, 2);
  Prediction a = predict(m, img, Mode::eval);
  Prediction b = predict(m, img, Mode::eval);
  REQUIRE(a.probs == b.probs);
  REQUIRE(a.classes == b.classes);
}

TEST_CASE("argmax ties resolve to the lowest class index") {
  Tensor probs({1, 3, 1, 1});
  probs[0] = 0.4f;
  probs[1] = 0.4f;
  probs[2] = 0.2f;
  REQUIRE(argmax_channels(probs)[0] == 0);
}
