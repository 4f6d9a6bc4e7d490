#include <catch2/catch_amalgamated.hpp>

#include "segxray/gradcheck.hpp"
#include "segxray/graph.hpp"
#include "support/oracles.hpp"

using namespace segxray;

namespace {

// Uniform draw that stays clear of relu/pool kinks for FD probing.
Tensor64 random_tensor(std::vector<int> shape, RngStream& rng, bool away_from_zero = true) {
  Tensor64 t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) {
    double v = rng.next_uniform(0.1, 1.0);
    if (rng.next_f64() < 0.5) v = -v;
    if (!away_from_zero) v = rng.next_uniform(-1.0, 1.0);
    t[i] = v;
  }
  return t;
}

Tensor64 random_seed_grad(const std::vector<int>& shape, RngStream& rng) {
  Tensor64 t(shape);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.next_uniform(-1.0, 1.0);
  return t;
}

double check_op_once(const std::string& op, uint64_t seed) {
  RngStream rng{seed, 0};
  Graph64 g;
  int x = g.add_input("x");
  std::map<int, Tensor64> bind;
  int out = -1;
  std::vector<int> wrts{x};

  if (op == "conv2d") {
    int ci = rng.next_int(1, 3), co = rng.next_int(1, 3);
    int k = rng.next_int(1, 3);
    int stride = rng.next_int(1, 2), pad = rng.next_int(0, 1);
    int h = rng.next_int(k + 2, 7), w = rng.next_int(k + 2, 7);
    int wp = g.add_parameter("w", random_tensor({co, ci, k, k}, rng, false));
    out = g.add_conv2d(x, wp, stride, pad);
    bind[x] = random_tensor({1, ci, h, w}, rng, false);
    wrts.push_back(wp);
  } else if (op == "relu") {
    out = g.add_relu(x);
    bind[x] = random_tensor({1, 2, 4, 4}, rng);
  } else if (op == "sigmoid") {
    out = g.add_sigmoid(x);
    bind[x] = random_tensor({1, 2, 4, 4}, rng, false);
  } else if (op == "max_pool2d") {
    out = g.add_max_pool2d(x, 2, 2);
    bind[x] = random_tensor({1, 2, 6, 6}, rng);  // distinct values: ties have measure zero
  } else if (op == "upsample_nearest2x") {
    out = g.add_upsample_nearest2x(x);
    bind[x] = random_tensor({1, 2, 3, 3}, rng, false);
  } else if (op == "concat_channels") {
    int y = g.add_input("y");
    out = g.add_concat_channels({x, y});
    bind[x] = random_tensor({1, 2, 4, 4}, rng, false);
    bind[y] = random_tensor({1, 3, 4, 4}, rng, false);
    wrts.push_back(y);
  } else if (op == "add") {
    int y = g.add_input("y");
    out = g.add_add(x, y);
    bind[x] = random_tensor({1, 2, 4, 4}, rng, false);
    bind[y] = random_tensor({1, 2, 4, 4}, rng, false);
    wrts.push_back(y);
  } else if (op == "global_average_pool") {
    out = g.add_global_average_pool(x);
    bind[x] = random_tensor({1, 3, 4, 4}, rng, false);
  } else if (op == "affine_scale_bias") {
    int s = g.add_parameter("s", random_tensor({3}, rng, false));
    int b = g.add_parameter("b", random_tensor({3}, rng, false));
    out = g.add_affine_scale_bias(x, s, b);
    bind[x] = random_tensor({1, 3, 4, 4}, rng, false);
    wrts.push_back(s);
    wrts.push_back(b);
  } else {
    FAIL("unknown op " + op);
  }

  g.forward(bind, Mode::eval);
  Tensor64 seed_grad = random_seed_grad(g.value(out).shape(), rng);
  g.backward(out, seed_grad);

  double worst = 0.0;
  for (int wrt : wrts) {
    Tensor64 analytic = g.adjoint(wrt);
    Tensor64 numeric = oracles::fd_gradient(g, bind, wrt, out, seed_grad, 1e-5);
    worst = std::max(worst, oracles::max_rel_error(analytic, numeric));
  }
  return worst;
}

}  // namespace

TEST_CASE("every primitive op matches finite differences at f64") {
  const std::string ops[] = {"conv2d",          "relu",         "sigmoid",
                             "max_pool2d",      "upsample_nearest2x", "concat_channels",
                             "add",             "global_average_pool", "affine_scale_bias"};
  for (const auto& op : ops) {
    for (uint64_t s = 1; s <= 5; ++s) {
      INFO("op=" << op << " seed=" << s);
      REQUIRE(check_op_once(op, s) <= 1e-6);
    }
  }
}

TEST_CASE("a random 3-op composite matches the finite-difference oracle") {
  RngStream rng{2024, 0};
  Graph64 g;
  int x = g.add_input("x");
  int w = g.add_parameter("w", random_tensor({2, 2, 3, 3}, rng, false));
  int c = g.add_conv2d(x, w, 1, 1);
  int r = g.add_relu(c);
  int p = g.add_global_average_pool(r);
  std::map<int, Tensor64> bind{{x, random_tensor({1, 2, 5, 5}, rng)}};

  g.forward(bind, Mode::eval);
  Tensor64 seed_grad = random_seed_grad(g.value(p).shape(), rng);
  g.backward(p, seed_grad);

  for (int wrt : {x, w}) {
    Tensor64 numeric = oracles::fd_gradient(g, bind, wrt, p, seed_grad, 1e-5);
    REQUIRE(oracles::max_rel_error(g.adjoint(wrt), numeric) <= 1e-6);
  }
}

TEST_CASE("grad_check on the identity convolution is exact") {
  Graph64 g;
  int x = g.add_input("x");
  int w = g.add_parameter("w", Tensor64({1, 1, 1, 1}, {1.0}));
  int y = g.add_conv2d(x, w, 1, 0);
  RngStream rng{55, 0};
  std::map<int, Tensor64> bind{{x, random_tensor({1, 1, 4, 4}, rng, false)}};
  // the map is linear, so a wide step keeps finite differences exact and
  // avoids cancellation noise
  GradCheckOptions opt;
  opt.eps = 1e-2;
  auto rep = grad_check(g, bind, x, y, opt);
  REQUIRE(rep.checked > 0);
  REQUIRE(rep.max_rel_error <= 1e-12);
}

TEST_CASE("grad_check on a random 3x3 convolution stays within 1e-6") {
  RngStream rng{77, 0};
  Graph64 g;
  int x = g.add_input("x");
  int w = g.add_parameter("w", random_tensor({2, 2, 3, 3}, rng, false));
  int y = g.add_conv2d(x, w, 1, 1);
  std::map<int, Tensor64> bind{{x, random_tensor({1, 2, 6, 6}, rng, false)}};
  for (int wrt : {x, w}) {
    auto rep = grad_check(g, bind, wrt, y);
    REQUIRE(rep.checked > 0);
    REQUIRE(rep.max_rel_error <= 1e-6);
  }
}

TEST_CASE("grad_check flags pool ties as non-differentiable and excludes them") {
  Graph64 g;
  int x = g.add_input("x");
  int y = g.add_max_pool2d(x, 2, 2);
  // exact tie inside the window: the max is not differentiable there
  std::map<int, Tensor64> bind{{x, Tensor64({1, 1, 2, 2}, {0.7, 0.7, 0.1, 0.2})}};
  GradCheckOptions opt;
  opt.max_coords = 4;
  auto rep = grad_check(g, bind, x, y, opt);
  REQUIRE(rep.excluded >= 1);
  REQUIRE(rep.max_rel_error <= 1e-6);
}
