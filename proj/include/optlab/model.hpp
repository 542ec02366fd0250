#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "optlab/graph.hpp"
#include "optlab/model_config.hpp"
#include "optlab/mup.hpp"
#include "optlab/rng.hpp"
#include "optlab/tensor.hpp"

namespace optlab {

// One batch of token ids, [batch_size x seq_len] row-major, with next-token
// targets of the same shape.
struct TokenBatch {
  int64_t batch_size = 0;
  int64_t seq_len = 0;
  std::vector<int32_t> inputs;
  std::vector<int32_t> targets;

  int64_t tokens() const { return batch_size * seq_len; }
};

struct Param {
  std::string name;
  Tensor value;
  MupRole role;
  int64_t fan_in = 0;
  int64_t fan_out = 0;
};

// Per-layer activation root-mean-square from one forward pass, labelled so
// the same layer can be compared across widths.
struct ActivationStats {
  std::vector<std::pair<std::string, double>> rms;
};

struct Model {
  ModelConfig config;
  MupContext mup;
  uint64_t init_seed = 0;
  std::vector<Param> params;
  double embedding_multiplier = 1.0;
  double output_multiplier = 1.0;  // alpha_output / m, precomputed at build

  const Param& param(const std::string& name) const {
    for (const auto& p : params) {
      if (p.name == name) return p;
    }
    throw IndexError("Model: no parameter named '" + name + "'");
  }
  Param& param(const std::string& name) {
    return const_cast<Param&>(static_cast<const Model*>(this)->param(name));
  }

  int64_t num_params() const {
    int64_t n = 0;
    for (const auto& p : params) n += p.value.numel();
    return n;
  }
};

// Deterministic seeded build. Weights are drawn from a normal with the
// per-role standard deviation from the width-scaling rules; biases start at
// zero and norm gains at one.
inline Model build_model(const ModelConfig& config, const MupContext& mup, uint64_t seed) {
  config.validate();
  mup.validate();
  Model model;
  model.config = config;
  model.mup = mup;
  model.init_seed = seed;
  model.embedding_multiplier = mup.alpha_embedding;
  model.output_multiplier = output_multiplier_effective(mup);
  const auto specs = param_specs(config);
  model.params.reserve(specs.size());
  for (size_t i = 0; i < specs.size(); ++i) {
    const ParamSpec& s = specs[i];
    Tensor t(s.shape);
    if (s.role == MupRole::kNormGain) {
      for (double& v : t.values()) v = 1.0;
    } else if (s.role != MupRole::kBias) {
      // One independent stream per tensor so the draw for a given parameter
      // does not depend on the sizes of the ones before it.
      Rng rng(Rng::mix(seed, i));
      const double std = init_std(s.role, mup);
      for (double& v : t.values()) v = std * rng.next_normal();
    }
    model.params.push_back({s.name, std::move(t), s.role, s.fan_in, s.fan_out});
  }
  return model;
}

namespace detail {

struct ForwardNodes {
  NodeId logits = -1;
  std::vector<std::pair<std::string, NodeId>> leaves;
};

inline void record_rms(ActivationStats* stats, const Graph& g, const std::string& label,
                       NodeId id) {
  if (stats != nullptr) stats->rms.emplace_back(label, tensor_rms(g.value(id)));
}

// Builds the whole forward graph up to the logits. Activations are kept
// [B*T x D]; attention and rope get (heads, T) as op parameters.
inline ForwardNodes build_forward(Graph& g, const Model& model, const TokenBatch& batch,
                                  ActivationStats* stats = nullptr) {
  const ModelConfig& c = model.config;
  if (batch.seq_len > c.context_length) {
    throw ShapeError("forward: sequence length " + std::to_string(batch.seq_len) +
                     " exceeds context length " + std::to_string(c.context_length));
  }
  if (batch.batch_size <= 0 ||
      static_cast<int64_t>(batch.inputs.size()) != batch.batch_size * batch.seq_len) {
    throw ShapeError("forward: token buffer does not match batch dimensions");
  }
  ForwardNodes fwd;
  auto leaf = [&](const std::string& name) {
    NodeId id = g.leaf(name, model.param(name).value);
    fwd.leaves.emplace_back(name, id);
    return id;
  };

  const int64_t T = batch.seq_len;
  const double attn_scale = c.attn_inv_head_dim_scale
                                ? 1.0 / static_cast<double>(c.head_size)
                                : 1.0 / std::sqrt(static_cast<double>(c.head_size));

  NodeId x = g.scale(g.embedding(leaf("tok_emb"), batch.inputs), model.embedding_multiplier);
  record_rms(stats, g, "embed", x);

  for (int64_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    auto norm = [&](NodeId in, const std::string& which) {
      if (c.norm_kind == NormKind::kLayerNorm) {
        return g.layer_norm(in, leaf(p + which + ".gain"), leaf(p + which + ".bias"), c.norm_eps);
      }
      return g.rms_norm(in, leaf(p + which + ".gain"), c.norm_eps);
    };
    auto linear = [&](NodeId in, const std::string& w, const std::string& b) {
      NodeId out = g.matmul(in, leaf(p + w));
      if (c.use_bias) out = g.add_bias(out, leaf(p + b));
      return out;
    };

    NodeId h = norm(x, "norm1");
    NodeId q = g.rope(linear(h, "attn.wq", "attn.bq"), c.n_heads, T, c.rope_base);
    NodeId k = g.rope(linear(h, "attn.wk", "attn.bk"), c.n_heads, T, c.rope_base);
    NodeId v = linear(h, "attn.wv", "attn.bv");
    NodeId attn = g.causal_attention(q, k, v, c.n_heads, T, attn_scale);
    x = g.add(x, linear(attn, "attn.wo", "attn.bo"));

    NodeId h2 = norm(x, "norm2");
    NodeId mlp;
    if (c.mlp_kind == MlpKind::kTwoLayer) {
      mlp = linear(g.gelu(linear(h2, "mlp.w_up", "mlp.b_up")), "mlp.w_down", "mlp.b_down");
    } else {
      NodeId gate = g.silu(g.matmul(h2, leaf(p + "mlp.w_gate")));
      NodeId up = g.matmul(h2, leaf(p + "mlp.w_up"));
      mlp = g.matmul(g.mul(gate, up), leaf(p + "mlp.w_down"));
    }
    x = g.add(x, mlp);
    record_rms(stats, g, "block" + std::to_string(l), x);
  }

  NodeId h = c.norm_kind == NormKind::kLayerNorm
                 ? g.layer_norm(x, leaf("final_norm.gain"), leaf("final_norm.bias"), c.norm_eps)
                 : g.rms_norm(x, leaf("final_norm.gain"), c.norm_eps);
  fwd.logits = g.scale(g.matmul(h, leaf("head")), model.output_multiplier);
  record_rms(stats, g, "logits", fwd.logits);
  return fwd;
}

}  // namespace detail

// Logits [B*T x V] for a batch. Reentrant; the model is not mutated.
inline Tensor forward(const Model& model, const TokenBatch& batch,
                      ActivationStats* stats = nullptr) {
  Graph g;
  auto fwd = detail::build_forward(g, model, batch, stats);
  return g.value(fwd.logits);
}

struct LossGraph {
  Graph graph;
  NodeId loss = -1;
  NodeId logits = -1;
  double loss_value = 0.0;
};

// Mean next-token cross-entropy over all B*T predictions, with the graph
// kept alive for backward.
inline LossGraph loss_graph(const Model& model, const TokenBatch& batch,
                            ActivationStats* stats = nullptr) {
  if (batch.targets.size() != batch.inputs.size()) {
    throw ShapeError("loss: targets shape does not match inputs");
  }
  LossGraph lg;
  auto fwd = detail::build_forward(lg.graph, model, batch, stats);
  lg.logits = fwd.logits;
  lg.loss = lg.graph.softmax_cross_entropy(fwd.logits, batch.targets);
  lg.loss_value = lg.graph.value(lg.loss).item();
  return lg;
}

inline double loss_value(const Model& model, const TokenBatch& batch) {
  return loss_graph(model, batch).loss_value;
}

// Loss and leaf gradients in one call.
inline std::pair<double, GradientMap> loss_and_gradients(const Model& model,
                                                         const TokenBatch& batch) {
  LossGraph lg = loss_graph(model, batch);
  return {lg.loss_value, lg.graph.backward(lg.loss)};
}

}  // namespace optlab
