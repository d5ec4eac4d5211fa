#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "onet/graph.hpp"
#include "onet/model.hpp"
#include "oracles.hpp"

using namespace onet;

namespace {

NodeDesc input_desc(const std::string& id, std::int64_t c, std::int64_t h,
                    std::int64_t w) {
  NodeDesc d;
  d.id = id;
  d.kind = NodeKind::Input;
  d.in_c = c;
  d.in_h = h;
  d.in_w = w;
  return d;
}

NodeDesc conv_desc(const std::string& id, const std::string& in,
                   std::int64_t ic, std::int64_t oc, std::int64_t k) {
  NodeDesc d;
  d.id = id;
  d.kind = NodeKind::Conv;
  d.inputs = {in};
  d.in_channels = ic;
  d.out_channels = oc;
  d.kernel = k;
  d.stride = 1;
  d.pad = (k - 1) / 2;
  return d;
}

NodeDesc simple_desc(const std::string& id, NodeKind kind,
                     std::vector<std::string> in) {
  NodeDesc d;
  d.id = id;
  d.kind = kind;
  d.inputs = std::move(in);
  return d;
}

std::vector<NodeDesc> single_conv_graph(std::int64_t c_out = 8,
                                        std::int64_t size = 16) {
  return {input_desc("in", 1, size, size), conv_desc("c", "in", 1, c_out, 3),
          simple_desc("out", NodeKind::Output, {"c"})};
}

}  // namespace

TEST_CASE("graph_build infers shapes for a size-preserving conv") {
  auto g = graph_build<double>(single_conv_graph(8, 1024));
  REQUIRE(g.nodes[static_cast<std::size_t>(g.find("c"))].out_shape ==
          Shape{1, 8, 1024, 1024});
  REQUIRE(g.param_nodes.size() == 1);
}

TEST_CASE("graph_build rejects dangling references by name") {
  auto descs = single_conv_graph();
  descs[1].inputs = {"L99"};
  REQUIRE_THROWS_WITH(graph_build<double>(descs),
                      Catch::Matchers::ContainsSubstring("L99"));
}

TEST_CASE("graph_build rejects cycles, duplicates and empty graphs") {
  SECTION("cycle") {
    std::vector<NodeDesc> d = {input_desc("in", 1, 4, 4),
                               simple_desc("a", NodeKind::Relu, {"b"}),
                               simple_desc("b", NodeKind::Relu, {"a"}),
                               simple_desc("out", NodeKind::Output, {"b"})};
    REQUIRE_THROWS_WITH(graph_build<double>(d),
                        Catch::Matchers::ContainsSubstring("cycle"));
  }
  SECTION("duplicate id") {
    auto d = single_conv_graph();
    d.push_back(d[1]);
    REQUIRE_THROWS_WITH(graph_build<double>(d),
                        Catch::Matchers::ContainsSubstring("duplicate"));
  }
  SECTION("output aliasing input") {
    std::vector<NodeDesc> d = {input_desc("in", 1, 4, 4),
                               simple_desc("out", NodeKind::Output, {"in"})};
    REQUIRE_THROWS_AS(graph_build<double>(d), Error);
  }
  SECTION("shape conflict names the node") {
    std::vector<NodeDesc> d = {input_desc("in", 1, 4, 4),
                               conv_desc("badconv", "in", 3, 2, 3),
                               simple_desc("out", NodeKind::Output, {"badconv"})};
    REQUIRE_THROWS_WITH(graph_build<double>(d),
                        Catch::Matchers::ContainsSubstring("badconv"));
  }
}

TEST_CASE("concat shape inference matches the skip-join rows") {
  std::vector<NodeDesc> d = {input_desc("in", 128, 32, 32),
                             simple_desc("r", NodeKind::Relu, {"in"}),
                             simple_desc("cat", NodeKind::Concat, {"r", "r"}),
                             simple_desc("out", NodeKind::Output, {"cat"})};
  auto g = graph_build<double>(d);
  REQUIRE(g.nodes[static_cast<std::size_t>(g.find("cat"))].out_shape ==
          Shape{1, 256, 32, 32});
}

TEST_CASE("graph_forward evaluates each node once and is pure") {
  auto g = graph_build<double>(single_conv_graph(2, 8));
  auto& spec = g.nodes[static_cast<std::size_t>(g.find("c"))].spec;
  spec.weights.at(0, 0, 1, 1) = 1.0;  // identity into channel 0
  std::mt19937_64 rng(3);
  Tensor<double> x(Shape{1, 1, 8, 8});
  oracles::randomize(x, rng);

  auto r1 = graph_forward(g, x, true);
  auto r2 = graph_forward(g, x, true);
  REQUIRE(r1.activations.size() == g.nodes.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    REQUIRE(r1.activations[i].numel() > 0);  // every node evaluated
    REQUIRE(r1.activations[i].raw() == r2.activations[i].raw());
  }
  for (std::int64_t yx = 0; yx < 64; ++yx) {
    REQUIRE(r1.output(g)[yx] == x[yx]);  // channel 0 is the identity copy
  }
}

TEST_CASE("graph_forward rejects wrong input shapes") {
  auto g = graph_build<double>(single_conv_graph(2, 8));
  Tensor<double> bad(Shape{1, 1, 4, 4});
  REQUIRE_THROWS_AS(graph_forward(g, bad), Error);
}

TEST_CASE("single-conv graph backward matches conv2d_backward directly") {
  auto g = graph_build<double>(single_conv_graph(3, 6));
  std::mt19937_64 rng(5);
  auto& spec = g.nodes[static_cast<std::size_t>(g.find("c"))].spec;
  oracles::randomize(spec.weights, rng);
  oracles::randomize(spec.bias, rng);
  Tensor<double> x(Shape{1, 1, 6, 6});
  oracles::randomize(x, rng);
  Tensor<double> go(Shape{1, 3, 6, 6});
  oracles::randomize(go, rng);

  auto fwd = graph_forward(g, x, true);
  auto pg = graph_backward(g, fwd, go);
  auto direct = conv2d_backward(x, spec, go);
  REQUIRE(pg.size() == 1);
  REQUIRE(pg[0].weights.raw() == direct.weights.raw());
  REQUIRE(pg[0].bias.raw() == direct.bias.raw());
}

TEST_CASE("zero output grad yields a zero registry") {
  auto g = graph_build<double>(single_conv_graph(3, 6));
  Tensor<double> x(Shape{1, 1, 6, 6}, 0.5);
  auto fwd = graph_forward(g, x, true);
  Tensor<double> go(Shape{1, 3, 6, 6});
  auto pg = graph_backward(g, fwd, go);
  for (std::int64_t i = 0; i < pg[0].weights.numel(); ++i) {
    REQUIRE(pg[0].weights[i] == 0.0);
  }
}

TEST_CASE("fan-out gradients sum over consumers") {
  // in -> conv -> relu feeds two branches, each conv'd, then concat
  std::vector<NodeDesc> d = {
      input_desc("in", 1, 4, 4),
      conv_desc("shared", "in", 1, 2, 3),
      simple_desc("shared_r", NodeKind::Relu, {"shared"}),
      conv_desc("bra", "shared_r", 2, 2, 3),
      conv_desc("brb", "shared_r", 2, 2, 3),
      simple_desc("cat", NodeKind::Concat, {"bra", "brb"}),
      simple_desc("sig", NodeKind::Sigmoid, {"cat"}),
      simple_desc("out", NodeKind::Output, {"sig"}),
  };
  auto g = graph_build<double>(d);
  std::mt19937_64 rng(7);
  init_params(g, rng);
  Tensor<double> x(Shape{1, 1, 4, 4});
  oracles::randomize(x, rng);
  Tensor<double> target(Shape{1, 4, 4, 4});
  for (std::int64_t i = 0; i < target.numel(); ++i)
    target[i] = (rng() % 2) ? 1.0 : 0.0;

  auto rep = grad_check(g, x, target, 1e-5, 1e-4);
  INFO("worst " << rep.worst_param << " rel err " << rep.max_rel_err);
  REQUIRE(rep.pass);

  // additivity: zeroing one branch's contribution splits the shared grad
  auto fwd = graph_forward(g, x, true);
  auto bce = bce_loss(fwd.output(g), target);
  auto both = graph_backward(g, fwd, bce.grad);
  auto [ga, gb] = split_channels(bce.grad, 2);
  Tensor<double> zero_b(bce.grad.shape());
  for (std::int64_t n = 0; n < 1; ++n)
    for (std::int64_t c = 0; c < 2; ++c)
      for (std::int64_t y = 0; y < 4; ++y)
        for (std::int64_t x2 = 0; x2 < 4; ++x2)
          zero_b.at(n, c, y, x2) = bce.grad.at(n, c, y, x2);
  Tensor<double> zero_a(bce.grad.shape());
  for (std::int64_t n = 0; n < 1; ++n)
    for (std::int64_t c = 2; c < 4; ++c)
      for (std::int64_t y = 0; y < 4; ++y)
        for (std::int64_t x2 = 0; x2 < 4; ++x2)
          zero_a.at(n, c, y, x2) = bce.grad.at(n, c, y, x2);

  auto only_a = graph_backward(g, fwd, zero_b);
  auto only_b = graph_backward(g, fwd, zero_a);
  const std::size_t shared_slot = 0;  // registry order: shared, bra, brb
  for (std::int64_t i = 0; i < both[shared_slot].weights.numel(); ++i) {
    REQUIRE(both[shared_slot].weights[i] ==
            Catch::Approx(only_a[shared_slot].weights[i] +
                          only_b[shared_slot].weights[i])
                .margin(1e-12));
  }
}

TEST_CASE("shape_table lists every node with a determined shape") {
  ModelConfig cfg;
  cfg.input_size = 64;
  cfg.base_channels = 4;
  cfg.depth = 3;
  auto g = build_onet<double>(cfg);
  auto rows = shape_table(g);
  REQUIRE(rows.size() == g.nodes.size());
  for (const auto& r : rows) {
    REQUIRE(r.shape.numel() >= 1);
  }
  // strictly halving down the encoder, doubling back up
  std::vector<std::int64_t> enc_sizes;
  for (const auto& r : rows) {
    if (r.id.starts_with("enc") && r.id.ends_with("_pool")) {
      enc_sizes.push_back(r.shape.h());
    }
  }
  REQUIRE(enc_sizes == std::vector<std::int64_t>{32, 16, 8});
}

TEST_CASE("grad_check with tol 0 always fails") {
  auto g = graph_build<double>(single_conv_graph(1, 4));
  std::mt19937_64 rng(9);
  init_params(g, rng);
  Tensor<double> x(Shape{1, 1, 4, 4});
  oracles::randomize(x, rng);
  Tensor<double> t(Shape{1, 1, 4, 4});
  auto rep = grad_check(g, x, t, 1e-5, 0.0);
  REQUIRE_FALSE(rep.pass);
}

TEST_CASE("linear sigmoid+BCE chain gradient is (p-t) through the weights") {
  // 1x1 input through a 1x1 conv then sigmoid; at w=0,b=0 the output is 0.5
  std::vector<NodeDesc> d = {input_desc("in", 1, 2, 2),
                             conv_desc("c", "in", 1, 1, 1),
                             simple_desc("sig", NodeKind::Sigmoid, {"c"}),
                             simple_desc("out", NodeKind::Output, {"sig"})};
  d[1].pad = 0;
  auto g = graph_build<double>(d);
  Tensor<double> x(Shape{1, 1, 2, 2}, 1.0);
  Tensor<double> t(Shape{1, 1, 2, 2}, 1.0);

  auto fwd = graph_forward(g, x, true);
  auto bce = bce_loss(fwd.output(g), t);
  REQUIRE(fwd.output(g)[0] == 0.5);
  auto pg = graph_backward(g, fwd, bce.grad);
  // d loss / d b = mean(p - t) = -0.5
  REQUIRE(pg[0].bias[0] == Catch::Approx(-0.5).epsilon(1e-12));

  auto rep = grad_check(g, x, t, 1e-6, 1e-6);
  REQUIRE(rep.pass);
}
