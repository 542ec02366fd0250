#include <gtest/gtest.h>

#include <cmath>

#include "optlab/graph.hpp"
#include "optlab/tensor.hpp"
#include "test_util.hpp"

using namespace optlab;
using testutil::fd_gradients;
using testutil::random_tensor;

TEST(Tensor, ShapeInvariant) {
  Tensor t({2, 3});
  EXPECT_EQ(t.numel(), 6);
  EXPECT_THROW(Tensor({2, 3}, {1.0, 2.0}), ShapeError);
  EXPECT_THROW(Tensor({0, 3}), ShapeError);
}

TEST(Tensor, FinitePredicate) {
  Tensor t({2}, {1.0, 2.0});
  EXPECT_TRUE(t.all_finite());
  t[1] = std::nan("");
  EXPECT_FALSE(t.all_finite());
  t[1] = std::numeric_limits<double>::infinity();
  EXPECT_FALSE(t.all_finite());
}

TEST(Matmul, IdentityCase) {
  Graph g;
  auto a = g.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  auto b = g.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  auto c = g.matmul(a, b);
  const Tensor& out = g.value(c);
  for (int64_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(out[i], g.value(b)[i]);
}

TEST(Matmul, DotProduct) {
  Graph g;
  auto a = g.constant(Tensor({1, 2}, {1, 2}));
  auto b = g.constant(Tensor({2, 1}, {3, 4}));
  EXPECT_DOUBLE_EQ(g.value(g.matmul(a, b)).item(), 11.0);
}

TEST(Matmul, AgainstTripleLoopOracle) {
  Rng rng(7);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  Graph g;
  const Tensor& out = g.value(g.matmul(g.constant(a), g.constant(b)));
  for (int64_t i = 0; i < 3; ++i) {
    for (int64_t j = 0; j < 2; ++j) {
      double expect = 0.0;
      for (int64_t k = 0; k < 4; ++k) expect += a[i * 4 + k] * b[k * 2 + j];
      EXPECT_NEAR(out[i * 2 + j], expect, 1e-12);
    }
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Graph g;
  auto a = g.constant(Tensor({2, 3}));
  auto b = g.constant(Tensor({2, 2}));
  try {
    g.matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("[2x3]"), std::string::npos);
    EXPECT_NE(what.find("[2x2]"), std::string::npos);
  }
}

TEST(Gelu, PointValues) {
  Graph g;
  auto x = g.constant(Tensor({3}, {0.0, -20.0, 1.0}));
  const Tensor& out = g.value(g.gelu(x));
  EXPECT_DOUBLE_EQ(out[0], 0.0);
  EXPECT_LT(std::abs(out[1]), 1e-12);
  // 0.5 * (1 + erf(1/sqrt(2)))
  EXPECT_NEAR(out[2], 0.8413447460685429, 1e-15);
}

TEST(Silu, PointValues) {
  Graph g;
  auto x = g.constant(Tensor({3}, {0.0, 40.0, 1.0}));
  const Tensor& out = g.value(g.silu(x));
  EXPECT_DOUBLE_EQ(out[0], 0.0);
  EXPECT_LT(std::abs(out[1] - 40.0) / 40.0, 1e-9);  // right asymptote
  EXPECT_NEAR(out[2], 0.7310585786300049, 1e-15);   // 1 / (1 + e^-1)
}

TEST(LayerNorm, ConstantRowMapsToBias) {
  Graph g;
  auto x = g.constant(Tensor({1, 3}, {5, 5, 5}));
  auto gain = g.constant(Tensor({3}, {1, 1, 1}));
  auto bias = g.constant(Tensor({3}, {0, 0, 0}));
  const Tensor& out = g.value(g.layer_norm(x, gain, bias, 1e-5));
  for (int64_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(out[i], 0.0);
}

TEST(LayerNorm, UnitVarianceRow) {
  Graph g;
  auto x = g.constant(Tensor({1, 2}, {1, -1}));
  auto gain = g.constant(Tensor({2}, {1, 1}));
  auto bias = g.constant(Tensor({2}, {0, 0}));
  const Tensor& out = g.value(g.layer_norm(x, gain, bias, 0.0));
  EXPECT_DOUBLE_EQ(out[0], 1.0);
  EXPECT_DOUBLE_EQ(out[1], -1.0);
}

TEST(LayerNorm, MatchesScalarRecomputation) {
  Graph g;
  Rng rng(3);
  Tensor gain = random_tensor({4}, rng);
  Tensor bias = random_tensor({4}, rng);
  auto x = g.constant(Tensor({1, 4}, {1, 2, 3, 4}));
  const Tensor& out =
      g.value(g.layer_norm(x, g.constant(gain), g.constant(bias), 1e-5));
  const double mean = 2.5;
  double var = 0.0;
  for (double v : {1.0, 2.0, 3.0, 4.0}) var += (v - mean) * (v - mean);
  var /= 4.0;  // population variance
  for (int64_t i = 0; i < 4; ++i) {
    const double z = (static_cast<double>(i + 1) - mean) / std::sqrt(var + 1e-5);
    EXPECT_NEAR(out[i], gain[i] * z + bias[i], 1e-12);
  }
}

TEST(RmsNorm, KnownRow) {
  Graph g;
  auto x = g.constant(Tensor({1, 2}, {3, 4}));
  auto gain = g.constant(Tensor({2}, {1, 1}));
  const Tensor& out = g.value(g.rms_norm(x, gain, 0.0));
  EXPECT_NEAR(out[0], 0.848528137423857, 1e-12);   // 3 / sqrt(12.5)
  EXPECT_NEAR(out[1], 1.1313708498984762, 1e-12);  // 4 / sqrt(12.5)
}

TEST(RmsNorm, OnesAndZeroGain) {
  Graph g;
  auto x = g.constant(Tensor({1, 3}, {1, 1, 1}));
  auto ones = g.constant(Tensor({3}, {1, 1, 1}));
  auto zeros = g.constant(Tensor({3}, {0, 0, 0}));
  const Tensor& out = g.value(g.rms_norm(x, ones, 0.0));
  for (int64_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(out[i], 1.0);
  const Tensor& zero_out = g.value(g.rms_norm(x, zeros, 0.0));
  for (int64_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(zero_out[i], 0.0);
}

TEST(SoftmaxCrossEntropy, UniformLogits) {
  Graph g;
  auto logits = g.constant(Tensor({2, 256}));
  const double loss = g.value(g.softmax_cross_entropy(logits, {7, 255})).item();
  EXPECT_NEAR(loss, std::log(256.0), 1e-14);
}

TEST(SoftmaxCrossEntropy, ConfidentPrediction) {
  Graph g;
  auto logits = g.constant(Tensor({1, 2}, {10.0, -10.0}));
  const double loss = g.value(g.softmax_cross_entropy(logits, {0})).item();
  EXPECT_NEAR(loss, 2.0611536224385578e-09, 1e-15);  // log(1 + e^-20)
}

TEST(SoftmaxCrossEntropy, MatchesScalarOracle) {
  Rng rng(11);
  Tensor logits = random_tensor({4, 7}, rng, 2.0);
  std::vector<int32_t> targets = {3, 0, 6, 2};
  Graph g;
  const double loss = g.value(g.softmax_cross_entropy(g.constant(logits), targets)).item();
  double expect = 0.0;
  for (int64_t r = 0; r < 4; ++r) {
    double mx = -1e300;
    for (int64_t c = 0; c < 7; ++c) mx = std::max(mx, logits[r * 7 + c]);
    double denom = 0.0;
    for (int64_t c = 0; c < 7; ++c) denom += std::exp(logits[r * 7 + c] - mx);
    expect += mx + std::log(denom) - logits[r * 7 + targets[static_cast<size_t>(r)]];
  }
  expect /= 4.0;
  EXPECT_NEAR(loss, expect, 1e-12);
}

TEST(SoftmaxCrossEntropy, OutOfRangeTarget) {
  Graph g;
  auto logits = g.constant(Tensor({1, 4}));
  EXPECT_THROW(g.softmax_cross_entropy(logits, {4}), IndexError);
  EXPECT_THROW(g.softmax_cross_entropy(logits, {-1}), IndexError);
}

TEST(SoftmaxCrossEntropy, GradientRowsSumToZero) {
  Rng rng(13);
  Tensor logits = random_tensor({6, 9}, rng, 3.0);
  std::vector<int32_t> targets = {0, 1, 2, 3, 4, 5};
  Graph g;
  auto l = g.constant(logits);
  auto loss = g.softmax_cross_entropy(l, targets);
  g.backward(loss, {.release_buffers = false});
  const Tensor& grad = g.grad(l);
  for (int64_t r = 0; r < 6; ++r) {
    double sum = 0.0;
    for (int64_t c = 0; c < 9; ++c) sum += grad[r * 9 + c];
    EXPECT_NEAR(sum, 0.0, 1e-12);
  }
}

TEST(Backward, SquareGradient) {
  Graph g;
  auto x = g.leaf("x", Tensor({1}, {3.0}));
  auto loss = g.sum(g.mul(x, x));
  GradientMap grads = g.backward(loss);
  EXPECT_DOUBLE_EQ(grads.at("x").item(), 6.0);
}

TEST(Backward, NonScalarLossRejected) {
  Graph g;
  auto x = g.leaf("x", Tensor({2}, {1.0, 2.0}));
  EXPECT_THROW(g.backward(g.mul(x, x)), ContractError);
}

TEST(Backward, MatmulSumPattern) {
  // loss = sum(A B) gives dA = ones * B^T
  Rng rng(5);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  Graph g;
  auto la = g.leaf("a", a);
  auto lb = g.leaf("b", b);
  GradientMap grads = g.backward(g.sum(g.matmul(la, lb)));
  for (int64_t i = 0; i < 3; ++i) {
    for (int64_t k = 0; k < 4; ++k) {
      double expect = 0.0;
      for (int64_t j = 0; j < 2; ++j) expect += b[k * 2 + j];
      EXPECT_NEAR(grads.at("a")[i * 4 + k], expect, 1e-12);
    }
  }
  auto fd = fd_gradients(
      [&](const std::map<std::string, Tensor>& p) {
        Graph h;
        return h.value(h.sum(h.matmul(h.constant(p.at("a")), h.constant(p.at("b"))))).item();
      },
      {{"a", a}, {"b", b}});
  auto stats = testutil::compare_gradients(grads, fd);
  EXPECT_LT(stats.max_rel_err, 1e-6);
}

TEST(Backward, LinearInLoss) {
  // grad(a L1 + b L2) == a grad(L1) + b grad(L2)
  Rng rng(17);
  Tensor x0 = random_tensor({2, 3}, rng);
  const double a = 0.7, b = -1.3;
  auto build = [&](Graph& g, NodeId& l1, NodeId& l2) {
    auto x = g.leaf("x", x0);
    l1 = g.sum(g.mul(x, x));
    l2 = g.sum(g.gelu(x));
    return x;
  };
  Graph g1;
  NodeId l1, l2;
  build(g1, l1, l2);
  auto combined = g1.add(g1.scale(l1, a), g1.scale(l2, b));
  GradientMap g_combined = g1.backward(combined);

  Graph g2;
  build(g2, l1, l2);
  GradientMap g_first = g2.backward(l1);
  Graph g3;
  build(g3, l1, l2);
  GradientMap g_second = g3.backward(l2);
  for (int64_t i = 0; i < x0.numel(); ++i) {
    EXPECT_NEAR(g_combined.at("x")[i], a * g_first.at("x")[i] + b * g_second.at("x")[i], 1e-12);
  }
}

TEST(Backward, RepeatedRunsBitwiseIdentical) {
  Rng rng(23);
  Tensor x0 = random_tensor({4, 6}, rng);
  Tensor g0 = random_tensor({6}, rng);
  auto run = [&] {
    Graph g;
    auto x = g.leaf("x", x0);
    auto gain = g.leaf("gain", g0);
    auto loss = g.softmax_cross_entropy(g.rms_norm(g.gelu(x), gain, 1e-5), {0, 1, 2, 3});
    return g.backward(loss);
  };
  GradientMap first = run();
  GradientMap second = run();
  for (const auto& [name, g] : first) {
    const Tensor& h = second.at(name);
    for (int64_t i = 0; i < g.numel(); ++i) {
      EXPECT_EQ(g[i], h[i]) << name << "[" << i << "]";
    }
  }
  // same graph object, backward twice with buffers kept
  Graph g;
  auto x = g.leaf("x", x0);
  auto loss = g.sum(g.silu(x));
  GradientMap once = g.backward(loss, {.release_buffers = false});
  GradientMap twice = g.backward(loss, {.release_buffers = false});
  for (int64_t i = 0; i < x0.numel(); ++i) EXPECT_EQ(once.at("x")[i], twice.at("x")[i]);
}

// Finite-difference check for every registered op, each in a small graph
// that ends in a scalar.
TEST(GradCheck, PerOp) {
  Rng rng(29);
  const std::vector<int32_t> targets = {1, 0, 3, 2};
  struct Case {
    const char* name;
    std::map<std::string, Tensor> params;
    std::function<NodeId(Graph&, const std::map<std::string, Tensor>&, bool)> loss;
  };
  // builds the whole graph and returns the loss node; parameters enter as
  // leaves for the analytic pass and as constants for the fd oracle
  auto make_graph_fn = [](auto body) {
    return [body](Graph& g, const std::map<std::string, Tensor>& p, bool leaves) -> NodeId {
      std::map<std::string, NodeId> ids;
      for (const auto& [name, t] : p) ids[name] = leaves ? g.leaf(name, t) : g.constant(t);
      return body(g, ids);
    };
  };

  std::vector<Case> cases;
  cases.push_back({"matmul",
                   {{"a", random_tensor({3, 4}, rng)}, {"b", random_tensor({4, 2}, rng)}},
                   make_graph_fn([](Graph& g, std::map<std::string, NodeId>& ids) {
                     return g.sum(g.gelu(g.matmul(ids.at("a"), ids.at("b"))));
                   })});
  cases.push_back({"add_mul_scale",
                   {{"a", random_tensor({2, 5}, rng)}, {"b", random_tensor({2, 5}, rng)}},
                   make_graph_fn([](Graph& g, std::map<std::string, NodeId>& ids) {
                     return g.sum(g.mul(g.add(ids.at("a"), ids.at("b")), g.scale(ids.at("a"), 0.5)));
                   })});
  cases.push_back({"add_bias_silu",
                   {{"x", random_tensor({3, 4}, rng)}, {"b", random_tensor({4}, rng)}},
                   make_graph_fn([](Graph& g, std::map<std::string, NodeId>& ids) {
                     return g.sum(g.silu(g.add_bias(ids.at("x"), ids.at("b"))));
                   })});
  cases.push_back({"layer_norm",
                   {{"x", random_tensor({3, 6}, rng)},
                    {"gain", random_tensor({6}, rng)},
                    {"bias", random_tensor({6}, rng)}},
                   make_graph_fn([](Graph& g, std::map<std::string, NodeId>& ids) {
                     return g.sum(
                         g.gelu(g.layer_norm(ids.at("x"), ids.at("gain"), ids.at("bias"), 1e-5)));
                   })});
  cases.push_back({"rms_norm",
                   {{"x", random_tensor({3, 6}, rng)}, {"gain", random_tensor({6}, rng)}},
                   make_graph_fn([](Graph& g, std::map<std::string, NodeId>& ids) {
                     return g.sum(g.silu(g.rms_norm(ids.at("x"), ids.at("gain"), 1e-5)));
                   })});
  cases.push_back({"embedding",
                   {{"table", random_tensor({5, 4}, rng)}},
                   make_graph_fn([](Graph& g, std::map<std::string, NodeId>& ids) {
                     return g.sum(g.gelu(g.embedding(ids.at("table"), {0, 3, 3, 1})));
                   })});
  cases.push_back({"rope",
                   {{"x", random_tensor({4, 8}, rng)}},
                   make_graph_fn([](Graph& g, std::map<std::string, NodeId>& ids) {
                     return g.sum(g.gelu(g.rope(ids.at("x"), 2, 2, 10000.0)));
                   })});
  cases.push_back(
      {"causal_attention",
       {{"q", random_tensor({4, 8}, rng)},
        {"k", random_tensor({4, 8}, rng)},
        {"v", random_tensor({4, 8}, rng)}},
       make_graph_fn([](Graph& g, std::map<std::string, NodeId>& ids) {
         return g.sum(g.causal_attention(ids.at("q"), ids.at("k"), ids.at("v"), 2, 2, 0.5));
       })});
  cases.push_back({"softmax_cross_entropy",
                   {{"logits", random_tensor({4, 5}, rng, 2.0)}},
                   make_graph_fn([targets](Graph& g, std::map<std::string, NodeId>& ids) {
                     return g.softmax_cross_entropy(ids.at("logits"), targets);
                   })});

  for (auto& c : cases) {
    Graph g;
    NodeId loss_node = c.loss(g, c.params, true);
    GradientMap analytic = g.backward(loss_node);
    auto fd = fd_gradients(
        [&](const std::map<std::string, Tensor>& p) {
          Graph h;
          return h.value(c.loss(h, p, false)).item();
        },
        c.params);
    auto stats = testutil::compare_gradients(analytic, fd, 1e-4);
    EXPECT_LT(stats.max_rel_err, 1e-3) << c.name;
    EXPECT_GE(stats.frac_below, 0.99) << c.name;
  }
}

TEST(Rope, PreservesPerHeadNorms) {
  Rng rng(31);
  Tensor x = random_tensor({6, 8}, rng);  // 3 batches x T=2, 2 heads x head 4
  Graph g;
  const Tensor& out = g.value(g.rope(g.constant(x), 2, 2, 10000.0));
  for (int64_t r = 0; r < 6; ++r) {
    for (int64_t h = 0; h < 2; ++h) {
      double before = 0.0, after = 0.0;
      for (int64_t i = 0; i < 4; ++i) {
        before += x[r * 8 + h * 4 + i] * x[r * 8 + h * 4 + i];
        after += out[r * 8 + h * 4 + i] * out[r * 8 + h * 4 + i];
      }
      EXPECT_NEAR(std::sqrt(before), std::sqrt(after), 1e-12);
    }
  }
}

TEST(Graph, LeafNamesUnique) {
  Graph g;
  g.leaf("w", Tensor({1}, {1.0}));
  EXPECT_THROW(g.leaf("w", Tensor({1}, {2.0})), ContractError);
}
