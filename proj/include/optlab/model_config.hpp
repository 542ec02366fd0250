#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "optlab/errors.hpp"
#include "optlab/mup.hpp"

namespace optlab {

enum class ModelFamily { kGpt, kLlama };
enum class NormKind { kLayerNorm, kRmsNorm };
enum class MlpKind { kTwoLayer, kThreeLayer };
enum class Activation { kGelu, kSwiglu };

inline const char* family_name(ModelFamily f) {
  return f == ModelFamily::kGpt ? "gpt" : "llama";
}

// Decoder-only transformer shape. The two families are pinned row-for-row:
// gpt = bias + LayerNorm + two-matrix MLP + GELU, llama = no bias + RMSNorm
// + three-matrix MLP + SwiGLU.
struct ModelConfig {
  ModelFamily family = ModelFamily::kGpt;
  int64_t n_layers = 2;
  int64_t n_heads = 4;
  int64_t head_size = 16;
  int64_t embedding_size = 64;  // must equal n_heads * head_size
  int64_t vocab_size = 256;
  int64_t context_length = 128;
  int64_t mlp_hidden = 256;
  bool use_bias = true;
  NormKind norm_kind = NormKind::kLayerNorm;
  MlpKind mlp_kind = MlpKind::kTwoLayer;
  Activation activation = Activation::kGelu;
  double rope_base = 10000.0;
  // Attention logit scaling: 1/sqrt(head_size) by default, 1/head_size when
  // set (the alternative width-robust rule; not used by default).
  bool attn_inv_head_dim_scale = false;
  double norm_eps = 1e-5;

  // Two-matrix MLP uses hidden = 4d; three-matrix uses the nearest multiple
  // of 8 to (8/3)d so the parameter budgets match to within rounding.
  static int64_t default_mlp_hidden(ModelFamily family, int64_t width) {
    if (family == ModelFamily::kGpt) return 4 * width;
    return 8 * static_cast<int64_t>(std::llround(static_cast<double>(width) / 3.0));
  }

  static ModelConfig gpt(int64_t n_layers, int64_t n_heads, int64_t head_size, int64_t vocab,
                         int64_t context) {
    ModelConfig c;
    c.family = ModelFamily::kGpt;
    c.n_layers = n_layers;
    c.n_heads = n_heads;
    c.head_size = head_size;
    c.embedding_size = n_heads * head_size;
    c.vocab_size = vocab;
    c.context_length = context;
    c.use_bias = true;
    c.norm_kind = NormKind::kLayerNorm;
    c.mlp_kind = MlpKind::kTwoLayer;
    c.activation = Activation::kGelu;
    c.mlp_hidden = default_mlp_hidden(c.family, c.embedding_size);
    return c;
  }

  static ModelConfig llama(int64_t n_layers, int64_t n_heads, int64_t head_size, int64_t vocab,
                           int64_t context) {
    ModelConfig c;
    c.family = ModelFamily::kLlama;
    c.n_layers = n_layers;
    c.n_heads = n_heads;
    c.head_size = head_size;
    c.embedding_size = n_heads * head_size;
    c.vocab_size = vocab;
    c.context_length = context;
    c.use_bias = false;
    c.norm_kind = NormKind::kRmsNorm;
    c.mlp_kind = MlpKind::kThreeLayer;
    c.activation = Activation::kSwiglu;
    c.mlp_hidden = default_mlp_hidden(c.family, c.embedding_size);
    return c;
  }

  static ModelConfig for_family(ModelFamily f, int64_t n_layers, int64_t n_heads,
                                int64_t head_size, int64_t vocab, int64_t context) {
    return f == ModelFamily::kGpt ? gpt(n_layers, n_heads, head_size, vocab, context)
                                  : llama(n_layers, n_heads, head_size, vocab, context);
  }

  void validate() const {
    if (n_layers < 0) throw ConfigError("ModelConfig: n_layers must be >= 0");
    if (n_heads <= 0 || head_size <= 0) throw ConfigError("ModelConfig: heads must be positive");
    if (head_size % 2 != 0) throw ConfigError("ModelConfig: head_size must be even for rope");
    if (embedding_size != n_heads * head_size) {
      throw ConfigError("ModelConfig: embedding_size must equal n_heads * head_size");
    }
    if (vocab_size < 2) throw ConfigError("ModelConfig: vocab_size must be >= 2");
    if (context_length <= 0) throw ConfigError("ModelConfig: context_length must be positive");
    if (n_layers > 0 && mlp_hidden <= 0) throw ConfigError("ModelConfig: mlp_hidden must be positive");
    if (norm_eps <= 0.0) throw ConfigError("ModelConfig: norm_eps must be positive");
    if (family == ModelFamily::kGpt) {
      if (!use_bias || norm_kind != NormKind::kLayerNorm || mlp_kind != MlpKind::kTwoLayer ||
          activation != Activation::kGelu) {
        throw ConfigError("ModelConfig: gpt family requires bias, LayerNorm, two-layer MLP, GELU");
      }
    } else {
      if (use_bias || norm_kind != NormKind::kRmsNorm || mlp_kind != MlpKind::kThreeLayer ||
          activation != Activation::kSwiglu) {
        throw ConfigError(
            "ModelConfig: llama family requires no bias, RMSNorm, three-layer MLP, SwiGLU");
      }
    }
  }
};

struct ParamSpec {
  std::string name;
  std::vector<int64_t> shape;
  MupRole role;
  int64_t fan_in = 0;
  int64_t fan_out = 0;
};

// Full, ordered parameter layout of a model. Weight matrices are stored
// [fan_in x fan_out]; the output head is untied from the embedding.
inline std::vector<ParamSpec> param_specs(const ModelConfig& c) {
  c.validate();
  std::vector<ParamSpec> specs;
  const int64_t d = c.embedding_size;
  const int64_t h = c.mlp_hidden;
  auto weight = [&](std::string name, int64_t in, int64_t out, MupRole role) {
    specs.push_back({std::move(name), {in, out}, role, in, out});
  };
  auto vec = [&](std::string name, int64_t len, MupRole role) {
    specs.push_back({std::move(name), {len}, role, len, len});
  };

  weight("tok_emb", c.vocab_size, d, MupRole::kInputWeight);
  for (int64_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    vec(p + "norm1.gain", d, MupRole::kNormGain);
    if (c.norm_kind == NormKind::kLayerNorm) vec(p + "norm1.bias", d, MupRole::kBias);
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
      weight(p + "attn." + std::string(w), d, d, MupRole::kHiddenWeight);
      if (c.use_bias) vec(p + "attn.b" + std::string(w + 1), d, MupRole::kBias);
    }
    vec(p + "norm2.gain", d, MupRole::kNormGain);
    if (c.norm_kind == NormKind::kLayerNorm) vec(p + "norm2.bias", d, MupRole::kBias);
    if (c.mlp_kind == MlpKind::kTwoLayer) {
      weight(p + "mlp.w_up", d, h, MupRole::kHiddenWeight);
      if (c.use_bias) vec(p + "mlp.b_up", h, MupRole::kBias);
      weight(p + "mlp.w_down", h, d, MupRole::kHiddenWeight);
      if (c.use_bias) vec(p + "mlp.b_down", d, MupRole::kBias);
    } else {
      weight(p + "mlp.w_gate", d, h, MupRole::kHiddenWeight);
      weight(p + "mlp.w_up", d, h, MupRole::kHiddenWeight);
      weight(p + "mlp.w_down", h, d, MupRole::kHiddenWeight);
    }
  }
  vec("final_norm.gain", d, MupRole::kNormGain);
  if (c.norm_kind == NormKind::kLayerNorm) vec("final_norm.bias", d, MupRole::kBias);
  weight("head", d, c.vocab_size, MupRole::kOutputWeight);
  return specs;
}

// Exact trainable-parameter count by closed-form accounting.
inline int64_t param_count(const ModelConfig& c) {
  c.validate();
  const int64_t d = c.embedding_size;
  const int64_t h = c.mlp_hidden;
  const int64_t norm_params = (c.norm_kind == NormKind::kLayerNorm) ? 2 * d : d;
  int64_t per_layer = 2 * norm_params;        // two pre-norms
  per_layer += 4 * d * d;                     // q, k, v, o projections
  if (c.use_bias) per_layer += 4 * d;
  if (c.mlp_kind == MlpKind::kTwoLayer) {
    per_layer += d * h + h * d;
    if (c.use_bias) per_layer += h + d;
  } else {
    per_layer += 3 * d * h;
  }
  return c.vocab_size * d              // embedding
         + c.n_layers * per_layer      // blocks
         + norm_params                 // final norm
         + d * c.vocab_size;           // untied output head
}

// Role classification, total over the parameter set.
inline std::map<std::string, MupRole> mup_classify(const ModelConfig& c) {
  std::map<std::string, MupRole> roles;
  for (const auto& s : param_specs(c)) roles.emplace(s.name, s.role);
  return roles;
}

}  // namespace optlab
