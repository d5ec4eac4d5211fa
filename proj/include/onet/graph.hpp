#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "onet/ops.hpp"
#include "onet/tensor.hpp"

namespace onet {

enum class NodeKind {
  Input,
  Conv,
  ConvTrans,
  MaxPool,
  Relu,
  Sigmoid,
  Concat,
  Output,
};

inline const char* node_kind_name(NodeKind k) {
  switch (k) {
    case NodeKind::Input: return "input";
    case NodeKind::Conv: return "conv";
    case NodeKind::ConvTrans: return "convtrans";
    case NodeKind::MaxPool: return "maxpool";
    case NodeKind::Relu: return "relu";
    case NodeKind::Sigmoid: return "sigmoid";
    case NodeKind::Concat: return "concat";
    case NodeKind::Output: return "output";
  }
  return "?";
}

// Free-form node description fed to graph_build.
struct NodeDesc {
  std::string id;
  NodeKind kind = NodeKind::Relu;
  std::vector<std::string> inputs;
  // Conv / ConvTrans only.
  std::int64_t in_channels = 0;
  std::int64_t out_channels = 0;
  std::int64_t kernel = 0;
  std::int64_t stride = 1;
  std::int64_t pad = 0;
  // Input only (C, H, W of one sample).
  std::int64_t in_c = 0, in_h = 0, in_w = 0;
  // Table-1 layer number this node realizes, if any.
  int table_layer = -1;
};

template <typename T>
struct Node {
  std::string id;
  NodeKind kind = NodeKind::Relu;
  std::vector<int> inputs;  // indices into LayerGraph::nodes (topological)
  ConvSpec<T> spec;         // Conv / ConvTrans only
  Shape out_shape;          // per-sample shapes carry N = 1
  int table_layer = -1;
};

// Validated DAG in topological order with an ordered parameter registry.
template <typename T>
struct LayerGraph {
  std::vector<Node<T>> nodes;
  std::vector<int> param_nodes;  // conv/convtrans node indices, topo order
  int input_node = -1;
  int output_node = -1;

  int find(const std::string& id) const {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i].id == id) return static_cast<int>(i);
    }
    return -1;
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (int p : param_nodes) {
      n += nodes[p].spec.weights.numel() + nodes[p].spec.bias.numel();
    }
    return n;
  }
};

template <typename T>
LayerGraph<T> graph_build(const std::vector<NodeDesc>& descs) {
  std::map<std::string, int> index;  // desc index by id
  for (std::size_t i = 0; i < descs.size(); ++i) {
    if (descs[i].id.empty()) fail("graph_build: node with empty id");
    if (!index.emplace(descs[i].id, static_cast<int>(i)).second) {
      fail("graph_build: duplicate node id '" + descs[i].id + "'");
    }
  }
  for (const auto& d : descs) {
    for (const auto& ref : d.inputs) {
      if (!index.count(ref)) {
        fail("graph_build: node '" + d.id + "' references missing id '" + ref +
             "'");
      }
    }
  }

  // Kahn topological sort; stable in description order.
  std::vector<int> indeg(descs.size(), 0);
  std::vector<std::vector<int>> consumers(descs.size());
  for (std::size_t i = 0; i < descs.size(); ++i) {
    indeg[i] = static_cast<int>(descs[i].inputs.size());
    for (const auto& ref : descs[i].inputs) {
      consumers[static_cast<std::size_t>(index[ref])].push_back(
          static_cast<int>(i));
    }
  }
  std::vector<int> order;
  std::vector<int> ready;
  for (std::size_t i = 0; i < descs.size(); ++i) {
    if (indeg[i] == 0) ready.push_back(static_cast<int>(i));
  }
  while (!ready.empty()) {
    const int cur = ready.front();
    ready.erase(ready.begin());
    order.push_back(cur);
    for (int c : consumers[static_cast<std::size_t>(cur)]) {
      if (--indeg[static_cast<std::size_t>(c)] == 0) ready.push_back(c);
    }
  }
  if (order.size() != descs.size()) {
    std::string stuck;
    for (std::size_t i = 0; i < descs.size(); ++i) {
      if (indeg[i] > 0) {
        stuck = descs[i].id;
        break;
      }
    }
    fail("graph_build: cycle involving node '" + stuck + "'");
  }

  LayerGraph<T> g;
  std::map<std::string, int> pos;  // id -> index in g.nodes
  for (int di : order) {
    const NodeDesc& d = descs[static_cast<std::size_t>(di)];
    Node<T> n;
    n.id = d.id;
    n.kind = d.kind;
    n.table_layer = d.table_layer;
    for (const auto& ref : d.inputs) n.inputs.push_back(pos.at(ref));

    auto in_shape = [&](std::size_t which) -> const Shape& {
      return g.nodes[static_cast<std::size_t>(n.inputs[which])].out_shape;
    };
    auto need_inputs = [&](std::size_t k) {
      if (n.inputs.size() != k) {
        fail("graph_build: node '" + d.id + "' (" + node_kind_name(d.kind) +
             ") needs " + std::to_string(k) + " input(s), has " +
             std::to_string(n.inputs.size()));
      }
    };

    switch (d.kind) {
      case NodeKind::Input:
        need_inputs(0);
        if (d.in_c < 1 || d.in_h < 1 || d.in_w < 1) {
          fail("graph_build: input node '" + d.id + "' has no shape");
        }
        n.out_shape = Shape{1, d.in_c, d.in_h, d.in_w};
        break;
      case NodeKind::Conv: {
        need_inputs(1);
        const Shape& s = in_shape(0);
        if (d.in_channels != s.c()) {
          fail("graph_build: conv '" + d.id + "' expects " +
               std::to_string(d.in_channels) + " channels, upstream gives " +
               std::to_string(s.c()));
        }
        if ((s.h() + 2 * d.pad - d.kernel) % d.stride != 0 ||
            (s.w() + 2 * d.pad - d.kernel) % d.stride != 0) {
          fail("graph_build: conv '" + d.id + "' stride does not divide " +
               s.str());
        }
        const std::int64_t oh = conv_out_size(s.h(), d.kernel, d.stride, d.pad);
        const std::int64_t ow = conv_out_size(s.w(), d.kernel, d.stride, d.pad);
        if (oh < 1 || ow < 1) {
          fail("graph_build: conv '" + d.id + "' output degenerate on " +
               s.str());
        }
        n.spec = ConvSpec<T>::conv(d.in_channels, d.out_channels, d.kernel,
                                   d.stride, d.pad);
        n.out_shape = Shape{1, d.out_channels, oh, ow};
        break;
      }
      case NodeKind::ConvTrans: {
        need_inputs(1);
        if (d.kernel != 2 || d.stride != 2 || d.pad != 0) {
          fail("graph_build: convtrans '" + d.id + "' must have k=2,s=2,p=0");
        }
        const Shape& s = in_shape(0);
        if (d.in_channels != s.c()) {
          fail("graph_build: convtrans '" + d.id + "' expects " +
               std::to_string(d.in_channels) + " channels, upstream gives " +
               std::to_string(s.c()));
        }
        n.spec = ConvSpec<T>::conv_transposed(d.in_channels, d.out_channels);
        n.out_shape = Shape{1, d.out_channels, 2 * s.h(), 2 * s.w()};
        break;
      }
      case NodeKind::MaxPool: {
        need_inputs(1);
        const Shape& s = in_shape(0);
        if (s.h() % 2 != 0 || s.w() % 2 != 0) {
          fail("graph_build: maxpool '" + d.id + "' needs even extents, got " +
               s.str());
        }
        n.out_shape = Shape{1, s.c(), s.h() / 2, s.w() / 2};
        break;
      }
      case NodeKind::Relu:
      case NodeKind::Sigmoid:
        need_inputs(1);
        n.out_shape = in_shape(0);
        break;
      case NodeKind::Concat: {
        need_inputs(2);
        const Shape& a = in_shape(0);
        const Shape& b = in_shape(1);
        if (a.h() != b.h() || a.w() != b.w()) {
          fail("graph_build: concat '" + d.id + "' spatial mismatch " +
               a.str() + " vs " + b.str());
        }
        n.out_shape = Shape{1, a.c() + b.c(), a.h(), a.w()};
        break;
      }
      case NodeKind::Output:
        need_inputs(1);
        n.out_shape = in_shape(0);
        break;
    }

    pos[d.id] = static_cast<int>(g.nodes.size());
    const int self = static_cast<int>(g.nodes.size());
    if (d.kind == NodeKind::Input) {
      if (g.input_node >= 0) fail("graph_build: more than one input node");
      g.input_node = self;
    }
    if (d.kind == NodeKind::Output) {
      if (g.output_node >= 0) fail("graph_build: more than one output node");
      g.output_node = self;
    }
    if (d.kind == NodeKind::Conv || d.kind == NodeKind::ConvTrans) {
      g.param_nodes.push_back(self);
    }
    g.nodes.push_back(std::move(n));
  }

  if (g.input_node < 0) fail("graph_build: graph has no input node");
  if (g.output_node < 0) fail("graph_build: graph has no output node");
  if (g.nodes[static_cast<std::size_t>(g.output_node)].inputs[0] ==
      g.input_node) {
    fail("graph_build: output aliases input, graph is empty");
  }
  return g;
}

// He-normal weights and small random biases, deterministic in registry
// order. Biases stay off zero so no pre-activation sits exactly on the relu
// kink at initialization.
template <typename T, typename Rng>
void init_params(LayerGraph<T>& g, Rng& rng) {
  std::normal_distribution<double> unit(0.0, 1.0);
  for (int p : g.param_nodes) {
    auto& spec = g.nodes[static_cast<std::size_t>(p)].spec;
    const double fan_in =
        static_cast<double>(spec.in_channels * spec.kernel * spec.kernel);
    const double stddev = std::sqrt(2.0 / fan_in);
    for (std::int64_t i = 0; i < spec.weights.numel(); ++i) {
      spec.weights[i] = static_cast<T>(unit(rng) * stddev);
    }
    for (std::int64_t i = 0; i < spec.bias.numel(); ++i) {
      spec.bias[i] = static_cast<T>(unit(rng) * 0.05);
    }
  }
}

template <typename T>
struct ForwardResult {
  // Aligned with LayerGraph::nodes; only the output slot is populated unless
  // keep was requested.
  std::vector<Tensor<T>> activations;
  // Argmax maps for maxpool nodes (empty elsewhere), present when keep.
  std::vector<std::vector<std::int64_t>> argmax;

  const Tensor<T>& output(const LayerGraph<T>& g) const {
    return activations[static_cast<std::size_t>(g.output_node)];
  }
};

template <typename T>
ForwardResult<T> graph_forward(const LayerGraph<T>& g, const Tensor<T>& x,
                               bool keep = false) {
  const Shape& want = g.nodes[static_cast<std::size_t>(g.input_node)].out_shape;
  if (x.shape().c() != want.c() || x.shape().h() != want.h() ||
      x.shape().w() != want.w()) {
    fail("graph_forward: input shape " + x.shape().str() +
         " does not match graph input " + want.str());
  }

  ForwardResult<T> r;
  r.activations.resize(g.nodes.size());
  r.argmax.resize(g.nodes.size());

  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const Node<T>& n = g.nodes[i];
    auto in = [&](std::size_t which) -> const Tensor<T>& {
      return r.activations[static_cast<std::size_t>(n.inputs[which])];
    };
    switch (n.kind) {
      case NodeKind::Input:
        r.activations[i] = x;
        break;
      case NodeKind::Conv:
        r.activations[i] = conv2d_forward(in(0), n.spec);
        break;
      case NodeKind::ConvTrans:
        r.activations[i] = convtrans2d_forward(in(0), n.spec);
        break;
      case NodeKind::MaxPool: {
        auto pr = maxpool2_forward(in(0));
        r.activations[i] = std::move(pr.output);
        r.argmax[i] = std::move(pr.argmax);
        break;
      }
      case NodeKind::Relu:
        r.activations[i] = relu(in(0));
        break;
      case NodeKind::Sigmoid:
        r.activations[i] = sigmoid(in(0));
        break;
      case NodeKind::Concat:
        r.activations[i] = concat_channels(in(0), in(1));
        break;
      case NodeKind::Output:
        r.activations[i] = in(0);
        break;
    }
  }

  if (!keep) {
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      if (static_cast<int>(i) != g.output_node) {
        r.activations[i] = Tensor<T>();
        r.argmax[i].clear();
      }
    }
  }
  return r;
}

template <typename T>
struct ParamGrad {
  Tensor<T> weights;
  Tensor<T> bias;
};

// Reverse-topological accumulation; fan-out nodes sum incoming gradients.
template <typename T>
std::vector<ParamGrad<T>> graph_backward(const LayerGraph<T>& g,
                                         const ForwardResult<T>& fwd,
                                         const Tensor<T>& grad_at_output) {
  std::vector<Tensor<T>> node_grad(g.nodes.size());
  std::vector<bool> has_grad(g.nodes.size(), false);

  auto add_grad = [&](int node, Tensor<T>&& grad) {
    const auto i = static_cast<std::size_t>(node);
    if (!has_grad[i]) {
      node_grad[i] = std::move(grad);
      has_grad[i] = true;
    } else {
      for (std::int64_t k = 0; k < grad.numel(); ++k) node_grad[i][k] += grad[k];
    }
  };

  std::vector<ParamGrad<T>> pg(g.param_nodes.size());
  std::map<int, std::size_t> param_slot;
  for (std::size_t i = 0; i < g.param_nodes.size(); ++i) {
    param_slot[g.param_nodes[i]] = i;
    pg[i].weights =
        Tensor<T>(g.nodes[static_cast<std::size_t>(g.param_nodes[i])]
                      .spec.weights.shape());
    pg[i].bias = Tensor<T>(
        g.nodes[static_cast<std::size_t>(g.param_nodes[i])].spec.bias.shape());
  }

  add_grad(g.output_node, Tensor<T>(grad_at_output));

  for (std::size_t ri = g.nodes.size(); ri-- > 0;) {
    if (!has_grad[ri]) continue;
    const Node<T>& n = g.nodes[ri];
    const Tensor<T>& go = node_grad[ri];
    auto act = [&](std::size_t which) -> const Tensor<T>& {
      return fwd.activations[static_cast<std::size_t>(n.inputs[which])];
    };
    switch (n.kind) {
      case NodeKind::Input:
        break;
      case NodeKind::Conv: {
        auto cg = conv2d_backward(act(0), n.spec, go);
        const std::size_t slot = param_slot.at(static_cast<int>(ri));
        pg[slot].weights = std::move(cg.weights);
        pg[slot].bias = std::move(cg.bias);
        add_grad(n.inputs[0], std::move(cg.input));
        break;
      }
      case NodeKind::ConvTrans: {
        auto cg = convtrans2d_backward(act(0), n.spec, go);
        const std::size_t slot = param_slot.at(static_cast<int>(ri));
        pg[slot].weights = std::move(cg.weights);
        pg[slot].bias = std::move(cg.bias);
        add_grad(n.inputs[0], std::move(cg.input));
        break;
      }
      case NodeKind::MaxPool:
        add_grad(n.inputs[0],
                 maxpool2_backward(go, fwd.argmax[ri], act(0).shape()));
        break;
      case NodeKind::Relu:
        add_grad(n.inputs[0], relu_backward(act(0), go));
        break;
      case NodeKind::Sigmoid:
        add_grad(n.inputs[0],
                 sigmoid_backward(fwd.activations[ri], go));
        break;
      case NodeKind::Concat: {
        auto parts = split_channels(go, act(0).shape().c());
        add_grad(n.inputs[0], std::move(parts.first));
        add_grad(n.inputs[1], std::move(parts.second));
        break;
      }
      case NodeKind::Output:
        add_grad(n.inputs[0], Tensor<T>(go));
        break;
    }
  }
  return pg;
}

struct ShapeRow {
  std::string id;
  int table_layer;  // -1 when unnumbered
  Shape shape;
};

template <typename T>
std::vector<ShapeRow> shape_table(const LayerGraph<T>& g) {
  std::vector<ShapeRow> rows;
  rows.reserve(g.nodes.size());
  for (const auto& n : g.nodes) {
    rows.push_back({n.id, n.table_layer, n.out_shape});
  }
  return rows;
}

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  bool pass = false;
};

// Central finite differences over every parameter of every layer, double
// precision toy configs only.
template <typename T>
GradCheckReport grad_check(LayerGraph<T>& g, const Tensor<T>& x,
                           const Tensor<T>& target, double h_scale,
                           double tol) {
  auto loss_of = [&]() -> double {
    auto fwd = graph_forward(g, x, false);
    return static_cast<double>(bce_loss(fwd.output(g), target).loss);
  };

  auto fwd = graph_forward(g, x, true);
  auto bce = bce_loss(fwd.output(g), target);
  auto analytic = graph_backward(g, fwd, bce.grad);

  GradCheckReport rep;
  for (std::size_t pi = 0; pi < g.param_nodes.size(); ++pi) {
    Node<T>& node = g.nodes[static_cast<std::size_t>(g.param_nodes[pi])];
    Tensor<T>* packs[2] = {&node.spec.weights, &node.spec.bias};
    const Tensor<T>* grads[2] = {&analytic[pi].weights, &analytic[pi].bias};
    const char* names[2] = {"w", "b"};
    for (int k = 0; k < 2; ++k) {
      Tensor<T>& p = *packs[k];
      for (std::int64_t i = 0; i < p.numel(); ++i) {
        const T orig = p[i];
        const double h =
            h_scale * std::max(1.0, std::abs(static_cast<double>(orig)));
        p[i] = orig + static_cast<T>(h);
        const double lp = loss_of();
        p[i] = orig - static_cast<T>(h);
        const double lm = loss_of();
        p[i] = orig;
        const double fd = (lp - lm) / (2.0 * h);
        const double an = static_cast<double>((*grads[k])[i]);
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
        const double rel = std::abs(fd - an) / denom;
        if (rel > rep.max_rel_err) {
          rep.max_rel_err = rel;
          rep.worst_param =
              node.id + "." + names[k] + "[" + std::to_string(i) + "]";
        }
      }
    }
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

}  // namespace onet
