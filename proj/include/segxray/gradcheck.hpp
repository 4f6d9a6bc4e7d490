#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "segxray/graph.hpp"
#include "segxray/rng.hpp"

namespace segxray {

// Finite-difference verification for f64 graphs. The objective is a fixed
// random linear functional of the output node, so one backward pass yields
// the analytic gradient at every coordinate of the probed node.
struct GradCheckReport {
  double max_rel_error = 0.0;
  int checked = 0;
  int excluded = 0;  // coordinates flagged non-differentiable (e.g. pool ties)
};

struct GradCheckOptions {
  double eps = 1e-5;
  int max_coords = 64;      // sampled coordinates per node
  uint64_t sample_seed = 7;
  // A coordinate is flagged non-smooth when its forward and backward
  // one-sided differences disagree by more than this relative amount
  // (catches kinks such as pool ties sitting at the base point).
  double smooth_tol = 1e-3;
};

inline GradCheckReport grad_check(Graph64& g, const std::map<int, Tensor64>& bindings, int wrt,
                                  int output, const GradCheckOptions& opt = {}) {
  g.forward(bindings, Mode::eval);
  RngStream rng{mix64(opt.sample_seed, 0xC0FFEE), 0};
  Tensor64 seed_grad(g.value(output).shape());
  for (int64_t i = 0; i < seed_grad.size(); ++i) seed_grad[i] = rng.next_uniform(-1.0, 1.0);
  g.backward(output, seed_grad);
  Tensor64 analytic = g.adjoint(wrt);

  const bool is_param = g.node(wrt).op == OpKind::parameter;
  std::map<int, Tensor64> local = bindings;
  auto objective = [&](const Tensor64& probe) {
    if (is_param)
      g.node(wrt).value = probe;
    else
      local[wrt] = probe;
    g.forward(local, Mode::eval);
    const Tensor64& out = g.value(output);
    double acc = 0.0;
    for (int64_t i = 0; i < out.size(); ++i) acc += out[i] * seed_grad[i];
    return acc;
  };

  Tensor64 base = is_param ? g.value(wrt) : bindings.at(wrt);
  const int64_t n = base.size();
  std::vector<int64_t> coords;
  if (n <= opt.max_coords) {
    for (int64_t i = 0; i < n; ++i) coords.push_back(i);
  } else {
    RngStream pick{mix64(opt.sample_seed, 0xBEEF), 0};
    for (int i = 0; i < opt.max_coords; ++i) coords.push_back(pick.next_u64() % static_cast<uint64_t>(n));
  }

  GradCheckReport rep;
  const double f0 = objective(base);
  for (int64_t c : coords) {
    Tensor64 probe = base;
    const double x0 = base[c];
    probe[c] = x0 + opt.eps;
    const double fp = objective(probe);
    probe[c] = x0 - opt.eps;
    const double fm = objective(probe);

    const double d1 = (fp - fm) / (2.0 * opt.eps);
    const double d_fwd = (fp - f0) / opt.eps;
    const double d_bwd = (f0 - fm) / opt.eps;
    if (std::abs(d_fwd - d_bwd) > opt.smooth_tol * std::max(1.0, std::abs(d1))) {
      ++rep.excluded;
      continue;
    }
    const double err = std::abs(analytic[c] - d1) / std::max(1.0, std::abs(d1));
    rep.max_rel_error = std::max(rep.max_rel_error, err);
    ++rep.checked;
  }

  // leave the graph in its unperturbed state
  if (is_param) g.node(wrt).value = base;
  g.forward(bindings, Mode::eval);
  return rep;
}

}  // namespace segxray
