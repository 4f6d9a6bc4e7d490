#include <catch2/catch_amalgamated.hpp>

#include "segxray/gradcam.hpp"
#include "support/oracles.hpp"

using namespace segxray;
using Catch::Approx;

namespace {

Tensor random_image(int c, int h, int w, uint64_t seed) {
  Tensor t({c, h, w});
  RngStream rng{seed, 0};
  for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.next_f64());
  return t;
}

}  // namespace

TEST_CASE("class score pools the chosen channel") {
  // logits fixed by hand through a zeroed model's head bias
  ArchSpec spec{.family = Family::plain, .depth = 1, .base_channels = 2};
  Model m = build_model(spec, 1);
  for (int id : m.graph.parameters()) m.graph.node(id).value.fill(0.0f);
  // with all-zero logits the softmax is uniform: y(c) = 0.25 for each class
  Tensor img = random_image(4, 32, 32, 3);
  ClassScore s = class_score(m, img, parse_channel_spec("1", 4));
  REQUIRE(s.value == Approx(0.25).margin(1e-6));
  REQUIRE(s.pixels == 32 * 32);

  // pre-softmax view of the same logits is identically zero
  ClassScore z = class_score(m, img, parse_channel_spec("1", 4), true);
  REQUIRE(z.value == Approx(0.0).margin(1e-9));

  // an output channel identically 1 pools to 1 (head bias drives the logit)
  SECTION("constant-one channel") {
    Model m1 = m;
    auto params = m1.graph.parameters();
    // head bias is the last parameter tensor (out_channels entries)
    auto& bias = m1.graph.node(params.back()).value;
    REQUIRE(bias.size() == 4);
    bias[2] = 1.0f;
    ClassScore one = class_score(m1, img, parse_channel_spec("2", 4), true);
    REQUIRE(one.value == Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("class score of a half-indicator map is one half") {
  // direct check of the pooled functional on synthetic logits
  Tensor logits({1, 4, 4, 4});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) logits.at4(0, 1, y, x) = (x < 2) ? 1.0f : 0.0f;
  double acc = 0.0;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) acc += logits.at4(0, 1, y, x);
  REQUIRE(acc / 16.0 == Approx(0.5));
}

TEST_CASE("bad channels are rejected") {
  REQUIRE_THROWS_AS(parse_channel_spec("7", 4), InvalidSpecError);
  REQUIRE_THROWS_AS(parse_channel_spec("blah", 4), InvalidSpecError);
  REQUIRE(parse_channel_spec("wt", 4).classes == std::vector<int>{1, 2, 3});
  REQUIRE(parse_channel_spec("tc", 4).classes == std::vector<int>{2, 3});
}

TEST_CASE("importances on a GAP head match the hand value and the map tracks the activation") {
  // a (input, treated as the layer) -> global average pool -> y
  // y = (1/N) sum A, so dy/dA_ij = 1/N and beta = 1/N exactly
  Graph64 g;
  int a = g.add_input("a");
  int y = g.add_global_average_pool(a);
  const int h = 5, w = 5;
  Tensor64 act({1, 1, h, w});
  RngStream rng{9, 0};
  for (int64_t i = 0; i < act.size(); ++i) act[i] = rng.next_uniform(0.0, 1.0);
  g.forward({{a, act}}, Mode::eval);
  g.backward(y, Tensor64::full({1, 1, 1, 1}, 1.0));

  auto beta = importances_from_adjoint(g.adjoint(a));
  REQUIRE(beta.size() == 1);
  REQUIRE(beta[0] == Approx(1.0 / (h * w)).margin(1e-15));

  // single filter, beta rescaled to 1: the rectified map equals the activation
  Tensor64 map = weighted_activation_map(std::vector<double>{1.0}, act);
  for (int64_t i = 0; i < map.size(); ++i) REQUIRE(map[i] == act[i]);
}

TEST_CASE("importances match finite differences on a toy net") {
  // a (layer stand-in) -> conv -> relu -> gap -> y
  Graph64 g;
  int a = g.add_input("a");
  RngStream rng{12, 0};
  Tensor64 w({2, 3, 3, 3});
  for (int64_t i = 0; i < w.size(); ++i) w[i] = rng.next_uniform(-0.5, 0.5);
  int wp = g.add_parameter("w", std::move(w));
  int c = g.add_conv2d(a, wp, 1, 1);
  int r = g.add_relu(c);
  int p = g.add_global_average_pool(r);

  Tensor64 act({1, 3, 6, 6});
  for (int64_t i = 0; i < act.size(); ++i) act[i] = rng.next_uniform(0.2, 1.0);
  std::map<int, Tensor64> bind{{a, act}};
  g.forward(bind, Mode::eval);
  Tensor64 seed({1, 2, 1, 1});
  seed[0] = 1.0;
  seed[1] = 0.5;
  g.backward(p, seed);
  auto beta = importances_from_adjoint(g.adjoint(a));

  Tensor64 numeric = oracles::fd_gradient(g, bind, a, p, seed, 1e-6);
  for (int k = 0; k < 3; ++k) {
    double mean = 0.0;
    for (int i = 0; i < 36; ++i) mean += numeric[k * 36 + i];
    mean /= 36.0;
    REQUIRE(std::abs(beta[static_cast<size_t>(k)] - mean) / std::max(1.0, std::abs(mean)) <= 1e-5);
  }
}

TEST_CASE("zero importances give a zero map; negative sums are rectified") {
  Tensor64 act({1, 2, 3, 3});
  for (int64_t i = 0; i < act.size(); ++i) act[i] = 1.0;
  Tensor64 zero = weighted_activation_map(std::vector<double>{0.0, 0.0}, act);
  for (int64_t i = 0; i < zero.size(); ++i) REQUIRE(zero[i] == 0.0);
  Tensor64 neg = weighted_activation_map(std::vector<double>{-1.0, -0.5}, act);
  for (int64_t i = 0; i < neg.size(); ++i) REQUIRE(neg[i] == 0.0);
}

TEST_CASE("maps recompute bit-exactly from reported beta and activations") {
  ArchSpec spec{.family = Family::skip, .depth = 2, .base_channels = 4};
  Model m = build_model(spec, 77);
  Tensor img = random_image(4, 32, 32, 5);
  auto maps = layerwise_gradcam(m, img, parse_channel_spec("wt", 4));
  REQUIRE(maps.size() == m.layers.size());

  for (size_t li = 0; li < maps.size(); ++li) {
    const Tensor& act = m.graph.value(m.layers[li].node_id);
    Tensor again = weighted_activation_map(maps[li].beta, act);
    REQUIRE(again == maps[li].map_layer);
    for (int64_t i = 0; i < maps[li].map_layer.size(); ++i)
      REQUIRE(maps[li].map_layer[i] >= 0.0f);
    REQUIRE(maps[li].map_input.shape() == std::vector<int>{32, 32});
  }
}

TEST_CASE("layers feeding nothing toward the output have zero importance") {
  // the encoder branch beyond the last concat feeds the output, but a
  // detached sibling graph does not; emulate with a standalone graph
  Graph64 g;
  int x = g.add_input("x");
  int used = g.add_relu(x, "used");
  int unused = g.add_sigmoid(x, "unused");
  (void)unused;
  int p = g.add_global_average_pool(used);
  Tensor64 v({1, 2, 4, 4});
  for (int64_t i = 0; i < v.size(); ++i) v[i] = 0.3 + 0.01 * static_cast<double>(i);
  g.forward({{x, v}}, Mode::eval);
  g.backward(p, Tensor64::full({1, 2, 1, 1}, 1.0));
  for (double b : importances_from_adjoint(g.adjoint(unused))) REQUIRE(b == 0.0);
}

TEST_CASE("doubling activations doubles the pre-relu weighted sum on a linear path") {
  ArchSpec spec{.family = Family::plain, .depth = 1, .base_channels = 2};
  Model m = build_model(spec, 13);
  Tensor img = random_image(4, 16, 16, 21);
  const std::string layer = "d0.c1";
  const ChannelSpec ch = parse_channel_spec("1", 4);

  // pre-softmax keeps the score linear in the logits
  GradCamMap g1 = gradcam_map(m, img, layer, ch, true);
  Tensor act1 = m.graph.value(m.find_layer(layer)->node_id);

  Tensor img2 = img;
  for (int64_t i = 0; i < img2.size(); ++i) img2[i] *= 2.0f;
  GradCamMap g2 = gradcam_map(m, img2, layer, ch, true);
  Tensor act2 = m.graph.value(m.find_layer(layer)->node_id);

  // compare the signed weighted sums at a few pixels: beta is unchanged on a
  // linear path, so sum beta * A scales with A
  double s1 = 0.0, s2 = 0.0;
  for (size_t k = 0; k < g1.beta.size(); ++k) {
    s1 += static_cast<double>(g1.beta[k]) * act1.at4(0, static_cast<int>(k), 3, 3);
    s2 += static_cast<double>(g2.beta[k]) * act2.at4(0, static_cast<int>(k), 3, 3);
  }
  if (std::abs(s1) > 1e-12) REQUIRE(s2 / s1 == Approx(2.0).epsilon(0.05));
}

TEST_CASE("scaling the class logit map positively keeps the argmax location (pre-softmax)") {
  ArchSpec spec{.family = Family::skip, .depth = 1, .base_channels = 4};
  Model m = build_model(spec, 23);
  Tensor img = random_image(4, 16, 16, 31);
  const ChannelSpec ch = parse_channel_spec("2", 4);
  GradCamMap base = gradcam_map(m, img, "e0.c1", ch, true);

  // scale the class-2 row of the head conv and its bias by a positive factor
  Model m2 = build_model(spec, 23);
  for (int id : m2.graph.parameters()) {
    auto& nd = m2.graph.node(id);
    if (nd.name == "head.w") {
      Tensor& w = nd.value;
      for (int ci = 0; ci < w.dim(1); ++ci) w.at4(2, ci, 0, 0) *= 3.0f;
    }
    if (nd.name == "head.b") nd.value[2] *= 3.0f;
  }
  GradCamMap scaled = gradcam_map(m2, img, "e0.c1", ch, true);

  auto argmax_of = [](const Tensor& t) {
    int64_t best = 0;
    for (int64_t i = 1; i < t.size(); ++i)
      if (t[i] > t[best]) best = i;
    return best;
  };
  REQUIRE(argmax_of(base.map_layer) == argmax_of(scaled.map_layer));
}

TEST_CASE("attention masks binarize the top fifth of the normalized range") {
  Tensor map({2, 2});
  map[0] = 1.0f;
  map[1] = 0.85f;
  map[2] = 0.5f;
  map[3] = 0.0f;
  Mask m = attention_mask(map);
  REQUIRE(m.v == std::vector<uint8_t>{1, 1, 0, 0});

  Tensor zero({2, 2});
  REQUIRE(attention_mask(zero).count() == 0);

  Mask gt(2, 2);
  gt.at(0, 0) = 1;
  REQUIRE(attention_iou(map, gt) == Approx(0.5));
}
