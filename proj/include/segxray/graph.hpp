#pragma once

#include <map>
#include <string>
#include <vector>

#include "segxray/ops.hpp"
#include "segxray/rng.hpp"
#include "segxray/tensor.hpp"

namespace segxray {

enum class OpKind {
  input,
  parameter,
  conv2d,
  relu,
  sigmoid,
  max_pool2d,
  upsample_nearest2x,
  concat_channels,
  add,
  dropout,
  global_average_pool,
  affine_scale_bias,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::input: return "input";
    case OpKind::parameter: return "parameter";
    case OpKind::conv2d: return "conv2d";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::max_pool2d: return "max_pool2d";
    case OpKind::upsample_nearest2x: return "upsample_nearest2x";
    case OpKind::concat_channels: return "concat_channels";
    case OpKind::add: return "add";
    case OpKind::dropout: return "dropout";
    case OpKind::global_average_pool: return "global_average_pool";
    case OpKind::affine_scale_bias: return "affine_scale_bias";
  }
  return "?";
}

enum class Mode { eval, train, mc_dropout };

template <typename T>
struct NodeT {
  OpKind op = OpKind::input;
  std::string name;
  std::vector<int> inputs;
  ops::Conv2dAttrs conv{};
  ops::PoolAttrs pool{};
  double dropout_rate = 0.0;
  uint64_t stream_id = 0;
  TensorT<T> value;
  TensorT<T> adjoint;
  TensorT<T> aux;  // dropout mask from the last stochastic forward
};

// Differentiable computation graph. Node ids are topological by
// construction: every input id is smaller than the node it feeds, so a
// cached order is the identity permutation. One instance is single-writer:
// forward/backward mutate node state; copies run independently.
template <typename T>
class GraphT {
 public:
  int add_input(std::string name) { return push(OpKind::input, {}, std::move(name)); }

  int add_parameter(std::string name, TensorT<T> init) {
    int id = push(OpKind::parameter, {}, std::move(name));
    nodes_[id].value = std::move(init);
    return id;
  }

  int add_conv2d(int x, int w, int stride, int pad, std::string name = "") {
    int id = push(OpKind::conv2d, {x, w}, std::move(name));
    auto& nd = nodes_[id];
    const auto& ws = nodes_[w].value.shape();
    if (ws.size() != 4) throw GraphError(nd.name + ": conv2d weight must be rank 4");
    nd.conv = {static_cast<int>(ws[2]), static_cast<int>(ws[3]), stride, pad};
    return id;
  }

  int add_relu(int x, std::string name = "") { return push(OpKind::relu, {x}, std::move(name)); }
  int add_sigmoid(int x, std::string name = "") { return push(OpKind::sigmoid, {x}, std::move(name)); }

  int add_max_pool2d(int x, int k, int stride, std::string name = "") {
    int id = push(OpKind::max_pool2d, {x}, std::move(name));
    nodes_[id].pool = {k, stride};
    return id;
  }

  int add_upsample_nearest2x(int x, std::string name = "") {
    return push(OpKind::upsample_nearest2x, {x}, std::move(name));
  }

  int add_concat_channels(std::vector<int> xs, std::string name = "") {
    if (xs.empty()) throw GraphError("concat_channels needs at least one input");
    return push(OpKind::concat_channels, std::move(xs), std::move(name));
  }

  int add_add(int a, int b, std::string name = "") { return push(OpKind::add, {a, b}, std::move(name)); }

  int add_dropout(int x, double rate, uint64_t stream_id, std::string name = "") {
    if (rate < 0.0 || rate >= 1.0)
      throw GraphError("dropout rate must be in [0, 1), got " + std::to_string(rate));
    int id = push(OpKind::dropout, {x}, std::move(name));
    nodes_[id].dropout_rate = rate;
    nodes_[id].stream_id = stream_id;
    return id;
  }

  int add_global_average_pool(int x, std::string name = "") {
    return push(OpKind::global_average_pool, {x}, std::move(name));
  }

  int add_affine_scale_bias(int x, int scale, int bias, std::string name = "") {
    return push(OpKind::affine_scale_bias, {x, scale, bias}, std::move(name));
  }

  int size() const { return static_cast<int>(nodes_.size()); }
  NodeT<T>& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  const NodeT<T>& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  const TensorT<T>& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  const TensorT<T>& adjoint(int id) const { return nodes_[static_cast<size_t>(id)].adjoint; }

  std::vector<int> parameters() const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i)
      if (nodes_[static_cast<size_t>(i)].op == OpKind::parameter) out.push_back(i);
    return out;
  }

  void set_dropout_rate(double rate) {
    if (rate < 0.0 || rate >= 1.0) throw GraphError("dropout rate must be in [0, 1)");
    for (auto& n : nodes_)
      if (n.op == OpKind::dropout) n.dropout_rate = rate;
  }

  void forward(const std::map<int, TensorT<T>>& bindings, Mode mode, RngStream rng = {}) {
    const uint64_t pass_key = mix64(rng.seed, rng.counter);
    for (int id = 0; id < size(); ++id) {
      NodeT<T>& nd = nodes_[static_cast<size_t>(id)];
      switch (nd.op) {
        case OpKind::input: {
          auto it = bindings.find(id);
          if (it == bindings.end())
            throw UnboundInputError("input node '" + nd.name + "' (id " + std::to_string(id) +
                                    ") has no binding");
          nd.value = it->second;
          break;
        }
        case OpKind::parameter:
          break;
        case OpKind::conv2d: {
          const auto& x = in_value(nd, 0);
          const auto& w = in_value(nd, 1);
          nd.value = TensorT<T>(ops::conv2d_shape(x, w, nd.conv, nd.name));
          ops::conv2d_forward(nd.value, x, w, nd.conv);
          break;
        }
        case OpKind::relu: {
          const auto& x = in_value(nd, 0);
          nd.value = TensorT<T>(x.shape());
          ops::relu_forward(nd.value, x);
          break;
        }
        case OpKind::sigmoid: {
          const auto& x = in_value(nd, 0);
          nd.value = TensorT<T>(x.shape());
          ops::sigmoid_forward(nd.value, x);
          break;
        }
        case OpKind::max_pool2d: {
          const auto& x = in_value(nd, 0);
          ops::require_4d(x, nd.name);
          int ho = (x.dim(2) - nd.pool.k) / nd.pool.stride + 1;
          int wo = (x.dim(3) - nd.pool.k) / nd.pool.stride + 1;
          if (ho < 1 || wo < 1) throw ShapeError(nd.name + ": pooled extent < 1");
          nd.value = TensorT<T>({x.dim(0), x.dim(1), ho, wo});
          ops::max_pool2d_forward(nd.value, x, nd.pool);
          break;
        }
        case OpKind::upsample_nearest2x: {
          const auto& x = in_value(nd, 0);
          ops::require_4d(x, nd.name);
          nd.value = TensorT<T>({x.dim(0), x.dim(1), 2 * x.dim(2), 2 * x.dim(3)});
          ops::upsample_nearest2x_forward(nd.value, x);
          break;
        }
        case OpKind::concat_channels: {
          std::vector<const TensorT<T>*> xs;
          int c = 0;
          for (int in : nd.inputs) {
            const auto& x = value(in);
            ops::require_4d(x, nd.name);
            xs.push_back(&x);
            c += x.dim(1);
          }
          for (const auto* x : xs)
            if (x->dim(0) != xs[0]->dim(0) || x->dim(2) != xs[0]->dim(2) ||
                x->dim(3) != xs[0]->dim(3))
              throw ShapeError(nd.name + ": concat inputs disagree on (n, h, w)");
          nd.value = TensorT<T>({xs[0]->dim(0), c, xs[0]->dim(2), xs[0]->dim(3)});
          ops::concat_channels_forward(nd.value, xs);
          break;
        }
        case OpKind::add: {
          const auto& x = in_value(nd, 0);
          const auto& y = in_value(nd, 1);
          if (!x.same_shape(y)) throw ShapeError(nd.name + ": add operands differ in shape");
          nd.value = TensorT<T>(x.shape());
          ops::add_forward(nd.value, x, y);
          break;
        }
        case OpKind::dropout: {
          const auto& x = in_value(nd, 0);
          if (mode == Mode::eval) {
            nd.value = x;
            nd.aux = TensorT<T>();
          } else {
            nd.value = TensorT<T>(x.shape());
            nd.aux = TensorT<T>(x.shape());
            ops::dropout_forward(nd.value, nd.aux, x, nd.dropout_rate,
                                 mix64(pass_key, nd.stream_id));
          }
          break;
        }
        case OpKind::global_average_pool: {
          const auto& x = in_value(nd, 0);
          ops::require_4d(x, nd.name);
          nd.value = TensorT<T>({x.dim(0), x.dim(1), 1, 1});
          ops::global_average_pool_forward(nd.value, x);
          break;
        }
        case OpKind::affine_scale_bias: {
          const auto& x = in_value(nd, 0);
          const auto& s = in_value(nd, 1);
          const auto& b = in_value(nd, 2);
          ops::require_4d(x, nd.name);
          if (s.rank() != 1 || b.rank() != 1 || s.dim(0) != x.dim(1) || b.dim(0) != x.dim(1))
            throw ShapeError(nd.name + ": scale/bias must be rank-1 of channel extent");
          nd.value = TensorT<T>(x.shape());
          ops::affine_forward(nd.value, x, s, b);
          break;
        }
      }
    }
    forwarded_ = true;
    last_mode_ = mode;
  }

  // Reverse sweep from an arbitrary seed node. Adjoints of nodes that do not
  // reach the seed stay zero.
  void backward(int seed, const TensorT<T>& seed_grad) {
    if (!forwarded_) throw GraphError("backward called before forward");
    if (seed < 0 || seed >= size()) throw GraphError("backward: bad seed node id");
    if (!seed_grad.same_shape(nodes_[static_cast<size_t>(seed)].value))
      throw ShapeError("backward: seed gradient shape differs from node '" +
                       nodes_[static_cast<size_t>(seed)].name + "' value shape");
    for (auto& nd : nodes_) {
      nd.adjoint = TensorT<T>(nd.value.shape());
    }
    std::vector<char> touched(static_cast<size_t>(size()), 0);
    nodes_[static_cast<size_t>(seed)].adjoint = seed_grad;
    touched[static_cast<size_t>(seed)] = 1;

    for (int id = seed; id >= 0; --id) {
      if (!touched[static_cast<size_t>(id)]) continue;
      NodeT<T>& nd = nodes_[static_cast<size_t>(id)];
      const TensorT<T>& dy = nd.adjoint;
      switch (nd.op) {
        case OpKind::input:
        case OpKind::parameter:
          break;
        case OpKind::conv2d:
          ops::conv2d_backward(adj(nd, 0), adj(nd, 1), dy, in_value(nd, 0), in_value(nd, 1),
                               nd.conv);
          break;
        case OpKind::relu:
          ops::relu_backward(adj(nd, 0), dy, in_value(nd, 0));
          break;
        case OpKind::sigmoid:
          ops::sigmoid_backward(adj(nd, 0), dy, nd.value);
          break;
        case OpKind::max_pool2d:
          ops::max_pool2d_backward(adj(nd, 0), dy, in_value(nd, 0), nd.pool);
          break;
        case OpKind::upsample_nearest2x:
          ops::upsample_nearest2x_backward(adj(nd, 0), dy);
          break;
        case OpKind::concat_channels: {
          std::vector<TensorT<T>*> dxs;
          for (size_t i = 0; i < nd.inputs.size(); ++i) dxs.push_back(&adj(nd, static_cast<int>(i)));
          ops::concat_channels_backward(dxs, dy);
          break;
        }
        case OpKind::add:
          ops::add_backward_into(adj(nd, 0), dy);
          ops::add_backward_into(adj(nd, 1), dy);
          break;
        case OpKind::dropout:
          if (last_mode_ == Mode::eval) {
            ops::add_backward_into(adj(nd, 0), dy);
          } else {
            ops::dropout_backward(adj(nd, 0), dy, nd.aux);
          }
          break;
        case OpKind::global_average_pool:
          ops::global_average_pool_backward(adj(nd, 0), dy);
          break;
        case OpKind::affine_scale_bias:
          ops::affine_backward(adj(nd, 0), adj(nd, 1), adj(nd, 2), dy, in_value(nd, 0),
                               in_value(nd, 1));
          break;
      }
      for (int in : nd.inputs) touched[static_cast<size_t>(in)] = 1;
    }
  }

  bool forwarded() const { return forwarded_; }

 private:
  int push(OpKind op, std::vector<int> inputs, std::string name) {
    const int id = size();
    for (int in : inputs)
      if (in < 0 || in >= id) throw GraphError("node input id out of range (graph must stay acyclic)");
    NodeT<T> nd;
    nd.op = op;
    nd.inputs = std::move(inputs);
    nd.name = name.empty() ? std::string(op_name(op)) + "#" + std::to_string(id) : std::move(name);
    nodes_.push_back(std::move(nd));
    return id;
  }

  const TensorT<T>& in_value(const NodeT<T>& nd, int i) const {
    return nodes_[static_cast<size_t>(nd.inputs[static_cast<size_t>(i)])].value;
  }
  TensorT<T>& adj(const NodeT<T>& nd, int i) {
    return nodes_[static_cast<size_t>(nd.inputs[static_cast<size_t>(i)])].adjoint;
  }

  std::vector<NodeT<T>> nodes_;
  bool forwarded_ = false;
  Mode last_mode_ = Mode::eval;
};

using Graph = GraphT<float>;
using Graph64 = GraphT<double>;

}  // namespace segxray
