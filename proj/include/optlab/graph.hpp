#pragma once

#include <algorithm>
#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "optlab/errors.hpp"
#include "optlab/tensor.hpp"

namespace optlab {

using NodeId = int32_t;
using GradientMap = std::map<std::string, Tensor>;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using StridedConstMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ArrMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrMap = Eigen::Map<const Eigen::ArrayXd>;

enum class Op {
  kLeaf,
  kConstant,
  kMatmul,
  kAdd,
  kAddBias,
  kMul,
  kScale,
  kGelu,
  kSilu,
  kLayerNorm,
  kRmsNorm,
  kEmbedding,
  kRope,
  kCausalAttention,
  kSoftmaxCrossEntropy,
  kSum,
};

struct Node {
  Op op = Op::kConstant;
  std::array<NodeId, 3> in{-1, -1, -1};
  Tensor value;
  Tensor grad;    // allocated during backward
  Tensor aux;     // op-specific forward cache (softmax probs, norm stats, ...)
  double p0 = 0.0, p1 = 0.0;
  int64_t i0 = 0, i1 = 0;
  std::vector<int32_t> indices;  // token ids / class targets
  std::string name;              // leaf name
  bool has_grad = false;
};

struct BackwardOptions {
  // Free intermediate values/grads as soon as they are consumed. Disable to
  // inspect non-leaf gradients or to re-run backward on the same graph.
  bool release_buffers = true;
};

// Append-only reverse-mode tape. Inputs always reference earlier nodes, so
// the graph is acyclic by construction and one reverse sweep in descending
// node-id order visits every reachable node exactly once. Single-threaded
// per instance; distinct graphs are independent.
class Graph {
 public:
  NodeId leaf(std::string name, Tensor value) {
    for (const auto& n : nodes_) {
      if (n.op == Op::kLeaf && n.name == name) {
        throw ContractError("Graph::leaf: duplicate leaf name '" + name + "'");
      }
    }
    Node n;
    n.op = Op::kLeaf;
    n.name = std::move(name);
    n.value = std::move(value);
    return push(std::move(n));
  }

  NodeId constant(Tensor value) {
    Node n;
    n.op = Op::kConstant;
    n.value = std::move(value);
    return push(std::move(n));
  }

  NodeId matmul(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows()) {
      throw ShapeError("matmul: incompatible shapes " + ta.shape_string() + " and " +
                       tb.shape_string());
    }
    Tensor out({ta.rows(), tb.cols()});
    ConstMatMap ma(ta.data(), ta.rows(), ta.cols());
    ConstMatMap mb(tb.data(), tb.rows(), tb.cols());
    MatMap mo(out.data(), out.rows(), out.cols());
    mo.noalias() = ma * mb;
    Node n;
    n.op = Op::kMatmul;
    n.in = {a, b, -1};
    n.value = std::move(out);
    return push(std::move(n));
  }

  NodeId add(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb)) {
      throw ShapeError("add: shape mismatch " + ta.shape_string() + " vs " + tb.shape_string());
    }
    Tensor out(ta.shape());
    const double* pa = ta.data();
    const double* pb = tb.data();
    double* po = out.data();
    for (int64_t i = 0; i < ta.numel(); ++i) po[i] = pa[i] + pb[i];
    Node n;
    n.op = Op::kAdd;
    n.in = {a, b, -1};
    n.value = std::move(out);
    return push(std::move(n));
  }

  NodeId add_bias(NodeId x, NodeId bias) {
    const Tensor& tx = value(x);
    const Tensor& tb = value(bias);
    if (tx.rank() != 2 || tb.rank() != 1 || tb.dim(0) != tx.cols()) {
      throw ShapeError("add_bias: " + tx.shape_string() + " with bias " + tb.shape_string());
    }
    Tensor out(tx.shape());
    const int64_t rows = tx.rows(), cols = tx.cols();
    const double* px = tx.data();
    const double* pb = tb.data();
    double* po = out.data();
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t c = 0; c < cols; ++c) po[r * cols + c] = px[r * cols + c] + pb[c];
    }
    Node n;
    n.op = Op::kAddBias;
    n.in = {x, bias, -1};
    n.value = std::move(out);
    return push(std::move(n));
  }

  NodeId mul(NodeId a, NodeId b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    if (!ta.same_shape(tb)) {
      throw ShapeError("mul: shape mismatch " + ta.shape_string() + " vs " + tb.shape_string());
    }
    Tensor out(ta.shape());
    const double* pa = ta.data();
    const double* pb = tb.data();
    double* po = out.data();
    for (int64_t i = 0; i < ta.numel(); ++i) po[i] = pa[i] * pb[i];
    Node n;
    n.op = Op::kMul;
    n.in = {a, b, -1};
    n.value = std::move(out);
    return push(std::move(n));
  }

  NodeId scale(NodeId x, double c) {
    const Tensor& tx = value(x);
    Tensor out(tx.shape());
    const double* px = tx.data();
    double* po = out.data();
    for (int64_t i = 0; i < tx.numel(); ++i) po[i] = c * px[i];
    Node n;
    n.op = Op::kScale;
    n.in = {x, -1, -1};
    n.p0 = c;
    n.value = std::move(out);
    return push(std::move(n));
  }

  // Exact GELU: x * Phi(x) with Phi the standard normal CDF. Phi is cached
  // for backward.
  NodeId gelu(NodeId x) {
    const Tensor& tx = value(x);
    Tensor out(tx.shape());
    Tensor aux(tx.shape());
    const double* px = tx.data();
    double* po = out.data();
    double* pa = aux.data();
    for (int64_t i = 0; i < tx.numel(); ++i) {
      pa[i] = normal_cdf(px[i]);
      po[i] = px[i] * pa[i];
    }
    Node n;
    n.op = Op::kGelu;
    n.in = {x, -1, -1};
    n.value = std::move(out);
    n.aux = std::move(aux);
    return push(std::move(n));
  }

  // SiLU: x * sigmoid(x). The sigmoid is cached for backward.
  NodeId silu(NodeId x) {
    const Tensor& tx = value(x);
    Tensor out(tx.shape());
    Tensor aux(tx.shape());
    ConstArrMap xs(tx.data(), tx.numel());
    ArrMap sig(aux.data(), tx.numel());
    ArrMap os(out.data(), tx.numel());
    sig = 1.0 / (1.0 + (-xs).exp());
    os = xs * sig;
    Node n;
    n.op = Op::kSilu;
    n.in = {x, -1, -1};
    n.value = std::move(out);
    n.aux = std::move(aux);
    return push(std::move(n));
  }

  // Per-row (x - mean) / sqrt(var + eps) * gain + bias over the last
  // dimension; var is the population variance.
  NodeId layer_norm(NodeId x, NodeId gain, NodeId bias, double eps) {
    const Tensor& tx = value(x);
    const Tensor& tg = value(gain);
    const Tensor& tb = value(bias);
    check_norm_args("layer_norm", tx, tg, eps);
    if (tb.rank() != 1 || tb.dim(0) != tx.cols()) {
      throw ShapeError("layer_norm: bias " + tb.shape_string() + " does not match last dim of " +
                       tx.shape_string());
    }
    const int64_t rows = tx.rows(), cols = tx.cols();
    Tensor out(tx.shape());
    Tensor aux({rows, 2});  // per-row mean, inv_std
    const double* px = tx.data();
    const double* pg = tg.data();
    const double* pb = tb.data();
    double* po = out.data();
    double* pa = aux.data();
    for (int64_t r = 0; r < rows; ++r) {
      const double* row = px + r * cols;
      double mean = 0.0;
      for (int64_t c = 0; c < cols; ++c) mean += row[c];
      mean /= static_cast<double>(cols);
      double var = 0.0;
      for (int64_t c = 0; c < cols; ++c) {
        double d = row[c] - mean;
        var += d * d;
      }
      var /= static_cast<double>(cols);
      double inv = 1.0 / std::sqrt(var + eps);
      pa[r * 2] = mean;
      pa[r * 2 + 1] = inv;
      for (int64_t c = 0; c < cols; ++c) {
        po[r * cols + c] = (row[c] - mean) * inv * pg[c] + pb[c];
      }
    }
    Node n;
    n.op = Op::kLayerNorm;
    n.in = {x, gain, bias};
    n.p0 = eps;
    n.value = std::move(out);
    n.aux = std::move(aux);
    return push(std::move(n));
  }

  // Per-row x / sqrt(mean(x^2) + eps) * gain.
  NodeId rms_norm(NodeId x, NodeId gain, double eps) {
    const Tensor& tx = value(x);
    const Tensor& tg = value(gain);
    check_norm_args("rms_norm", tx, tg, eps);
    const int64_t rows = tx.rows(), cols = tx.cols();
    Tensor out(tx.shape());
    Tensor aux({rows});  // per-row inv_rms
    const double* px = tx.data();
    const double* pg = tg.data();
    double* po = out.data();
    double* pa = aux.data();
    for (int64_t r = 0; r < rows; ++r) {
      const double* row = px + r * cols;
      double ms = 0.0;
      for (int64_t c = 0; c < cols; ++c) ms += row[c] * row[c];
      ms /= static_cast<double>(cols);
      double inv = 1.0 / std::sqrt(ms + eps);
      pa[r] = inv;
      for (int64_t c = 0; c < cols; ++c) po[r * cols + c] = row[c] * inv * pg[c];
    }
    Node n;
    n.op = Op::kRmsNorm;
    n.in = {x, gain, -1};
    n.p0 = eps;
    n.value = std::move(out);
    n.aux = std::move(aux);
    return push(std::move(n));
  }

  // Row gather: out[r, :] = table[tokens[r], :].
  NodeId embedding(NodeId table, const std::vector<int32_t>& tokens) {
    const Tensor& tt = value(table);
    if (tt.rank() != 2) throw ShapeError("embedding: table must be rank 2, got " + tt.shape_string());
    const int64_t vocab = tt.rows(), width = tt.cols();
    for (int32_t id : tokens) {
      if (id < 0 || id >= vocab) {
        throw IndexError("embedding: token id " + std::to_string(id) + " out of range [0, " +
                         std::to_string(vocab) + ")");
      }
    }
    const int64_t rows = static_cast<int64_t>(tokens.size());
    Tensor out({rows, width});
    const double* pt = tt.data();
    double* po = out.data();
    for (int64_t r = 0; r < rows; ++r) {
      const double* src = pt + static_cast<int64_t>(tokens[static_cast<size_t>(r)]) * width;
      std::copy(src, src + width, po + r * width);
    }
    Node n;
    n.op = Op::kEmbedding;
    n.in = {table, -1, -1};
    n.indices = tokens;
    n.value = std::move(out);
    return push(std::move(n));
  }

  // Rotary position embedding over per-head interleaved pairs. x is
  // [B*T x D] with D = n_heads * head_size; row r sits at position r % T.
  NodeId rope(NodeId x, int64_t n_heads, int64_t seq_len, double base) {
    const Tensor& tx = value(x);
    check_heads_layout("rope", tx, n_heads, seq_len);
    const int64_t rows = tx.rows(), width = tx.cols();
    const int64_t head = width / n_heads;
    if (head % 2 != 0) throw ShapeError("rope: head size must be even, got " + std::to_string(head));
    Tensor out(tx.shape());
    const std::vector<double> trig = rope_trig_table(head, seq_len, base);
    const double* px = tx.data();
    double* po = out.data();
    for (int64_t r = 0; r < rows; ++r) {
      const double* row_trig = trig.data() + (r % seq_len) * head;
      for (int64_t h = 0; h < n_heads; ++h) {
        const double* xin = px + r * width + h * head;
        double* xout = po + r * width + h * head;
        for (int64_t i = 0; i < head / 2; ++i) {
          const double c = row_trig[2 * i], s = row_trig[2 * i + 1];
          const double x0 = xin[2 * i], x1 = xin[2 * i + 1];
          xout[2 * i] = x0 * c - x1 * s;
          xout[2 * i + 1] = x0 * s + x1 * c;
        }
      }
    }
    Node n;
    n.op = Op::kRope;
    n.in = {x, -1, -1};
    n.i0 = n_heads;
    n.i1 = seq_len;
    n.p0 = base;
    n.value = std::move(out);
    return push(std::move(n));
  }

  // Multi-head causal attention: per (batch, head), softmax(scale * Q K^T)
  // masked to positions j <= i, times V. Softmax rows are cached for
  // backward.
  NodeId causal_attention(NodeId q, NodeId k, NodeId v, int64_t n_heads, int64_t seq_len,
                          double scale_factor) {
    const Tensor& tq = value(q);
    const Tensor& tk = value(k);
    const Tensor& tv = value(v);
    check_heads_layout("causal_attention", tq, n_heads, seq_len);
    if (!tq.same_shape(tk) || !tq.same_shape(tv)) {
      throw ShapeError("causal_attention: q/k/v shapes differ: " + tq.shape_string() + ", " +
                       tk.shape_string() + ", " + tv.shape_string());
    }
    const int64_t rows = tq.rows(), width = tq.cols();
    const int64_t head = width / n_heads;
    const int64_t batches = rows / seq_len;
    Tensor out(tq.shape());
    Tensor probs({batches * n_heads * seq_len, seq_len});
    // per-head panels are gathered into contiguous scratch so the small
    // matmuls run on dense blocks
    RowMat qh(seq_len, head), kh(seq_len, head), vh(seq_len, head), oh(seq_len, head);
    RowMat scores(seq_len, seq_len);
    for (int64_t b = 0; b < batches; ++b) {
      for (int64_t h = 0; h < n_heads; ++h) {
        const int64_t off = (b * seq_len) * width + h * head;
        qh = StridedConstMap(tq.data() + off, seq_len, head, Eigen::OuterStride<>(width));
        kh = StridedConstMap(tk.data() + off, seq_len, head, Eigen::OuterStride<>(width));
        vh = StridedConstMap(tv.data() + off, seq_len, head, Eigen::OuterStride<>(width));
        scores.noalias() = qh * kh.transpose();
        MatMap pm(probs.data() + (b * n_heads + h) * seq_len * seq_len, seq_len, seq_len);
        for (int64_t i = 0; i < seq_len; ++i) {
          auto seg = scores.row(i).head(i + 1).array();
          auto prow = pm.row(i).head(i + 1).array();
          const double mx = seg.maxCoeff() * scale_factor;
          prow = (seg * scale_factor - mx).exp();
          prow /= prow.sum();
          pm.row(i).tail(seq_len - 1 - i).setZero();
        }
        oh.noalias() = pm * vh;
        StridedMap(out.data() + off, seq_len, head, Eigen::OuterStride<>(width)) = oh;
      }
    }
    Node n;
    n.op = Op::kCausalAttention;
    n.in = {q, k, v};
    n.i0 = n_heads;
    n.i1 = seq_len;
    n.p0 = scale_factor;
    n.value = std::move(out);
    n.aux = std::move(probs);
    return push(std::move(n));
  }

  // Mean over rows of -log softmax(logits)[target], with max subtraction.
  NodeId softmax_cross_entropy(NodeId logits, const std::vector<int32_t>& targets) {
    const Tensor& tl = value(logits);
    if (tl.rank() != 2) {
      throw ShapeError("softmax_cross_entropy: logits must be rank 2, got " + tl.shape_string());
    }
    const int64_t rows = tl.rows(), classes = tl.cols();
    if (static_cast<int64_t>(targets.size()) != rows) {
      throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                       " targets for " + std::to_string(rows) + " rows");
    }
    for (int32_t t : targets) {
      if (t < 0 || t >= classes) {
        throw IndexError("softmax_cross_entropy: target " + std::to_string(t) +
                         " out of range [0, " + std::to_string(classes) + ")");
      }
    }
    Tensor probs(tl.shape());
    const double* pl = tl.data();
    double* pp = probs.data();
    double loss = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
      ConstArrMap row(pl + r * classes, classes);
      ArrMap prow(pp + r * classes, classes);
      const double mx = row.maxCoeff();
      prow = (row - mx).exp();
      const double denom = prow.sum();
      prow /= denom;
      const double lse = mx + std::log(denom);
      loss += lse - row[targets[static_cast<size_t>(r)]];
    }
    loss /= static_cast<double>(rows);
    Node n;
    n.op = Op::kSoftmaxCrossEntropy;
    n.in = {logits, -1, -1};
    n.indices = targets;
    n.value = Tensor::scalar(loss);
    n.aux = std::move(probs);
    return push(std::move(n));
  }

  NodeId sum(NodeId x) {
    const Tensor& tx = value(x);
    double s = 0.0;
    for (double v : tx.values()) s += v;
    Node n;
    n.op = Op::kSum;
    n.in = {x, -1, -1};
    n.value = Tensor::scalar(s);
    return push(std::move(n));
  }

  const Tensor& value(NodeId id) const { return node(id).value; }
  const Tensor& grad(NodeId id) const { return node(id).grad; }
  bool is_leaf(NodeId id) const { return node(id).op == Op::kLeaf; }
  size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  // Reverse sweep from a scalar loss node. Returns gradients of all leaves,
  // keyed by leaf name. Gradient accumulation happens in descending node-id
  // order, so repeated runs on the same values are bitwise identical.
  GradientMap backward(NodeId loss, const BackwardOptions& opts = {}) {
    Node& ln = node(loss);
    if (!ln.value.is_scalar()) {
      throw ContractError("Graph::backward: loss node must be scalar, got " +
                          ln.value.shape_string());
    }
    for (auto& n : nodes_) {
      n.grad = Tensor();
      n.has_grad = false;
    }
    ln.grad = Tensor::scalar(1.0);
    ln.has_grad = true;
    for (NodeId id = loss; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.has_grad) continue;
      backward_node(n);
      if (opts.release_buffers && n.op != Op::kLeaf && id != loss) {
        n.value = Tensor();
        n.grad = Tensor();
        n.aux = Tensor();
        n.has_grad = false;
      }
    }
    GradientMap grads;
    for (auto& n : nodes_) {
      if (n.op != Op::kLeaf) continue;
      grads.emplace(n.name, n.has_grad ? std::move(n.grad) : Tensor::zeros_like(n.value));
      if (opts.release_buffers) {
        n.grad = Tensor();
        n.has_grad = false;
      }
    }
    return grads;
  }

 private:
  static double normal_cdf(double x) { return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)); }

  // cos/sin per (position, pair) in interleaved layout: [pos * head + 2i],
  // [pos * head + 2i + 1]
  static std::vector<double> rope_trig_table(int64_t head, int64_t seq_len, double base) {
    std::vector<double> trig(static_cast<size_t>(seq_len * head));
    for (int64_t i = 0; i < head / 2; ++i) {
      const double theta =
          std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head));
      for (int64_t pos = 0; pos < seq_len; ++pos) {
        const double a = static_cast<double>(pos) * theta;
        trig[static_cast<size_t>(pos * head + 2 * i)] = std::cos(a);
        trig[static_cast<size_t>(pos * head + 2 * i + 1)] = std::sin(a);
      }
    }
    return trig;
  }

  const Node& node(NodeId id) const {
    if (id < 0 || static_cast<size_t>(id) >= nodes_.size()) {
      throw IndexError("Graph: invalid node id " + std::to_string(id));
    }
    return nodes_[static_cast<size_t>(id)];
  }
  Node& node(NodeId id) { return const_cast<Node&>(static_cast<const Graph*>(this)->node(id)); }

  static void check_norm_args(const char* what, const Tensor& x, const Tensor& gain, double eps) {
    if (x.rank() != 2) {
      throw ShapeError(std::string(what) + ": input must be rank 2, got " + x.shape_string());
    }
    if (gain.rank() != 1 || gain.dim(0) != x.cols()) {
      throw ShapeError(std::string(what) + ": gain " + gain.shape_string() +
                       " does not match last dim of " + x.shape_string());
    }
    if (eps < 0.0) throw ContractError(std::string(what) + ": eps must be >= 0");
  }

  static void check_heads_layout(const char* what, const Tensor& x, int64_t n_heads,
                                 int64_t seq_len) {
    if (x.rank() != 2) {
      throw ShapeError(std::string(what) + ": input must be rank 2, got " + x.shape_string());
    }
    if (n_heads <= 0 || x.cols() % n_heads != 0) {
      throw ShapeError(std::string(what) + ": width " + std::to_string(x.cols()) +
                       " not divisible into " + std::to_string(n_heads) + " heads");
    }
    if (seq_len <= 0 || x.rows() % seq_len != 0) {
      throw ShapeError(std::string(what) + ": rows " + std::to_string(x.rows()) +
                       " not divisible by sequence length " + std::to_string(seq_len));
    }
  }

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  Tensor& ensure_grad(NodeId id) {
    Node& n = node(id);
    if (!n.has_grad) {
      n.grad = Tensor::zeros_like(n.value);
      n.has_grad = true;
    }
    return n.grad;
  }

  void backward_node(Node& n) {
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConstant:
        return;
      case Op::kMatmul: {
        const Tensor& ta = value(n.in[0]);
        const Tensor& tb = value(n.in[1]);
        ConstMatMap ma(ta.data(), ta.rows(), ta.cols());
        ConstMatMap mb(tb.data(), tb.rows(), tb.cols());
        ConstMatMap mg(n.grad.data(), n.grad.rows(), n.grad.cols());
        Tensor& ga = ensure_grad(n.in[0]);
        MatMap mga(ga.data(), ga.rows(), ga.cols());
        mga.noalias() += mg * mb.transpose();
        Tensor& gb = ensure_grad(n.in[1]);
        MatMap mgb(gb.data(), gb.rows(), gb.cols());
        mgb.noalias() += ma.transpose() * mg;
        return;
      }
      case Op::kAdd: {
        for (int s = 0; s < 2; ++s) {
          Tensor& g = ensure_grad(n.in[s]);
          double* pg = g.data();
          const double* pn = n.grad.data();
          for (int64_t i = 0; i < g.numel(); ++i) pg[i] += pn[i];
        }
        return;
      }
      case Op::kAddBias: {
        Tensor& gx = ensure_grad(n.in[0]);
        double* pgx = gx.data();
        const double* pn = n.grad.data();
        for (int64_t i = 0; i < gx.numel(); ++i) pgx[i] += pn[i];
        Tensor& gb = ensure_grad(n.in[1]);
        double* pgb = gb.data();
        const int64_t rows = n.grad.rows(), cols = n.grad.cols();
        for (int64_t r = 0; r < rows; ++r) {
          for (int64_t c = 0; c < cols; ++c) pgb[c] += pn[r * cols + c];
        }
        return;
      }
      case Op::kMul: {
        const Tensor& ta = value(n.in[0]);
        const Tensor& tb = value(n.in[1]);
        const double* pn = n.grad.data();
        {
          Tensor& ga = ensure_grad(n.in[0]);
          double* pg = ga.data();
          const double* pb = tb.data();
          for (int64_t i = 0; i < ga.numel(); ++i) pg[i] += pn[i] * pb[i];
        }
        {
          Tensor& gb = ensure_grad(n.in[1]);
          double* pg = gb.data();
          const double* pa = ta.data();
          for (int64_t i = 0; i < gb.numel(); ++i) pg[i] += pn[i] * pa[i];
        }
        return;
      }
      case Op::kScale: {
        Tensor& gx = ensure_grad(n.in[0]);
        double* pg = gx.data();
        const double* pn = n.grad.data();
        for (int64_t i = 0; i < gx.numel(); ++i) pg[i] += n.p0 * pn[i];
        return;
      }
      case Op::kGelu: {
        const Tensor& tx = value(n.in[0]);
        Tensor& gx = ensure_grad(n.in[0]);
        ConstArrMap xs(tx.data(), tx.numel());
        ConstArrMap cdf(n.aux.data(), tx.numel());
        ConstArrMap gs(n.grad.data(), tx.numel());
        ArrMap out(gx.data(), gx.numel());
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * M_PI);
        out += gs * (cdf + xs * (-0.5 * xs.square()).exp() * inv_sqrt_2pi);
        return;
      }
      case Op::kSilu: {
        const Tensor& tx = value(n.in[0]);
        Tensor& gx = ensure_grad(n.in[0]);
        ConstArrMap xs(tx.data(), tx.numel());
        ConstArrMap sig(n.aux.data(), tx.numel());
        ConstArrMap gs(n.grad.data(), tx.numel());
        ArrMap out(gx.data(), gx.numel());
        out += gs * sig * (1.0 + xs * (1.0 - sig));
        return;
      }
      case Op::kLayerNorm: {
        const Tensor& tx = value(n.in[0]);
        const Tensor& tg = value(n.in[1]);
        const int64_t rows = tx.rows(), cols = tx.cols();
        Tensor& gx = ensure_grad(n.in[0]);
        Tensor& gg = ensure_grad(n.in[1]);
        Tensor& gb = ensure_grad(n.in[2]);
        const double* px = tx.data();
        const double* pgain = tg.data();
        const double* pa = n.aux.data();
        const double* pn = n.grad.data();
        double* pgx = gx.data();
        double* pgg = gg.data();
        double* pgb = gb.data();
        for (int64_t r = 0; r < rows; ++r) {
          const double mean = pa[r * 2];
          const double inv = pa[r * 2 + 1];
          const double* xrow = px + r * cols;
          const double* grow = pn + r * cols;
          double mean_dz = 0.0, mean_dzz = 0.0;
          for (int64_t c = 0; c < cols; ++c) {
            double z = (xrow[c] - mean) * inv;
            double dz = grow[c] * pgain[c];
            mean_dz += dz;
            mean_dzz += dz * z;
            pgg[c] += grow[c] * z;
            pgb[c] += grow[c];
          }
          mean_dz /= static_cast<double>(cols);
          mean_dzz /= static_cast<double>(cols);
          for (int64_t c = 0; c < cols; ++c) {
            double z = (xrow[c] - mean) * inv;
            double dz = grow[c] * pgain[c];
            pgx[r * cols + c] += inv * (dz - mean_dz - z * mean_dzz);
          }
        }
        return;
      }
      case Op::kRmsNorm: {
        const Tensor& tx = value(n.in[0]);
        const Tensor& tg = value(n.in[1]);
        const int64_t rows = tx.rows(), cols = tx.cols();
        Tensor& gx = ensure_grad(n.in[0]);
        Tensor& gg = ensure_grad(n.in[1]);
        const double* px = tx.data();
        const double* pgain = tg.data();
        const double* pa = n.aux.data();
        const double* pn = n.grad.data();
        double* pgx = gx.data();
        double* pgg = gg.data();
        for (int64_t r = 0; r < rows; ++r) {
          const double inv = pa[r];
          const double* xrow = px + r * cols;
          const double* grow = pn + r * cols;
          double mean_dzx = 0.0;
          for (int64_t c = 0; c < cols; ++c) {
            double dz = grow[c] * pgain[c];
            mean_dzx += dz * xrow[c];
            pgg[c] += grow[c] * xrow[c] * inv;
          }
          mean_dzx /= static_cast<double>(cols);
          for (int64_t c = 0; c < cols; ++c) {
            double dz = grow[c] * pgain[c];
            pgx[r * cols + c] += inv * (dz - xrow[c] * inv * inv * mean_dzx);
          }
        }
        return;
      }
      case Op::kEmbedding: {
        Tensor& gt = ensure_grad(n.in[0]);
        const int64_t width = gt.cols();
        double* pg = gt.data();
        const double* pn = n.grad.data();
        const int64_t rows = n.grad.rows();
        for (int64_t r = 0; r < rows; ++r) {
          double* dst = pg + static_cast<int64_t>(n.indices[static_cast<size_t>(r)]) * width;
          const double* src = pn + r * width;
          for (int64_t c = 0; c < width; ++c) dst[c] += src[c];
        }
        return;
      }
      case Op::kRope: {
        const int64_t n_heads = n.i0, seq_len = n.i1;
        Tensor& gx = ensure_grad(n.in[0]);
        const int64_t rows = gx.rows(), width = gx.cols();
        const int64_t head = width / n_heads;
        const std::vector<double> trig = rope_trig_table(head, seq_len, n.p0);
        const double* pn = n.grad.data();
        double* pg = gx.data();
        for (int64_t r = 0; r < rows; ++r) {
          const double* row_trig = trig.data() + (r % seq_len) * head;
          for (int64_t h = 0; h < n_heads; ++h) {
            const double* gin = pn + r * width + h * head;
            double* gout = pg + r * width + h * head;
            for (int64_t i = 0; i < head / 2; ++i) {
              const double c = row_trig[2 * i], s = row_trig[2 * i + 1];
              const double g0 = gin[2 * i], g1 = gin[2 * i + 1];
              gout[2 * i] += g0 * c + g1 * s;
              gout[2 * i + 1] += -g0 * s + g1 * c;
            }
          }
        }
        return;
      }
      case Op::kCausalAttention: {
        const int64_t n_heads = n.i0, seq_len = n.i1;
        const double scale_factor = n.p0;
        const Tensor& tq = value(n.in[0]);
        const Tensor& tk = value(n.in[1]);
        const Tensor& tv = value(n.in[2]);
        Tensor& gq = ensure_grad(n.in[0]);
        Tensor& gk = ensure_grad(n.in[1]);
        Tensor& gv = ensure_grad(n.in[2]);
        const int64_t rows = tq.rows(), width = tq.cols();
        const int64_t head = width / n_heads;
        const int64_t batches = rows / seq_len;
        RowMat qh(seq_len, head), kh(seq_len, head), vh(seq_len, head), goh(seq_len, head);
        RowMat scratch(seq_len, head);
        RowMat dp(seq_len, seq_len), ds(seq_len, seq_len);
        for (int64_t b = 0; b < batches; ++b) {
          for (int64_t h = 0; h < n_heads; ++h) {
            const int64_t off = (b * seq_len) * width + h * head;
            qh = StridedConstMap(tq.data() + off, seq_len, head, Eigen::OuterStride<>(width));
            kh = StridedConstMap(tk.data() + off, seq_len, head, Eigen::OuterStride<>(width));
            vh = StridedConstMap(tv.data() + off, seq_len, head, Eigen::OuterStride<>(width));
            goh = StridedConstMap(n.grad.data() + off, seq_len, head, Eigen::OuterStride<>(width));
            ConstMatMap pm(n.aux.data() + (b * n_heads + h) * seq_len * seq_len, seq_len, seq_len);
            scratch.noalias() = pm.transpose() * goh;
            StridedMap(gv.data() + off, seq_len, head, Eigen::OuterStride<>(width)) += scratch;
            dp.noalias() = goh * vh.transpose();
            for (int64_t i = 0; i < seq_len; ++i) {
              auto prow = pm.row(i).head(i + 1).array();
              auto dprow = dp.row(i).head(i + 1).array();
              const double dot = (prow * dprow).sum();
              ds.row(i).head(i + 1).array() = scale_factor * prow * (dprow - dot);
              ds.row(i).tail(seq_len - 1 - i).setZero();
            }
            scratch.noalias() = ds * kh;
            StridedMap(gq.data() + off, seq_len, head, Eigen::OuterStride<>(width)) += scratch;
            scratch.noalias() = ds.transpose() * qh;
            StridedMap(gk.data() + off, seq_len, head, Eigen::OuterStride<>(width)) += scratch;
          }
        }
        return;
      }
      case Op::kSoftmaxCrossEntropy: {
        Tensor& gl = ensure_grad(n.in[0]);
        const int64_t rows = gl.rows(), classes = gl.cols();
        const double g = n.grad.item() / static_cast<double>(rows);
        const double* pp = n.aux.data();
        double* pg = gl.data();
        for (int64_t r = 0; r < rows; ++r) {
          const int64_t t = n.indices[static_cast<size_t>(r)];
          for (int64_t c = 0; c < classes; ++c) {
            double onehot = (c == t) ? 1.0 : 0.0;
            pg[r * classes + c] += g * (pp[r * classes + c] - onehot);
          }
        }
        return;
      }
      case Op::kSum: {
        Tensor& gx = ensure_grad(n.in[0]);
        const double g = n.grad.item();
        double* pg = gx.data();
        for (int64_t i = 0; i < gx.numel(); ++i) pg[i] += g;
        return;
      }
    }
  }

  std::vector<Node> nodes_;
};

inline double global_norm(const GradientMap& grads) {
  double s = 0.0;
  for (const auto& [name, g] : grads) {
    for (double v : g.values()) s += v * v;
  }
  return std::sqrt(s);
}

}  // namespace optlab
