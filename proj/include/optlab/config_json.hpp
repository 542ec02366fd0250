#pragma once

#include <string>

#include <json.hpp>

#include "optlab/data.hpp"
#include "optlab/errors.hpp"
#include "optlab/model_config.hpp"
#include "optlab/mup.hpp"
#include "optlab/optim.hpp"
#include "optlab/schedule.hpp"
#include "optlab/train.hpp"

namespace optlab {

using json = nlohmann::json;

namespace detail {

template <typename T>
T parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, T>> table,
             const char* what) {
  for (const auto& [name, value] : table) {
    if (s == name) return value;
  }
  throw ConfigError(std::string(what) + ": unknown value '" + s + "'");
}

}  // namespace detail

inline std::string to_string(ModelFamily f) { return family_name(f); }
inline std::string to_string(OptimizerKind k) { return optimizer_name(k); }
inline std::string to_string(EstimatorKind k) {
  return k == EstimatorKind::kGnb ? "gnb" : "hutchinson";
}
inline std::string to_string(DataRegime r) {
  return r == DataRegime::kUnique ? "unique" : "repeated";
}

inline ModelFamily family_from_string(const std::string& s) {
  return detail::parse_enum<ModelFamily>(
      s, {{"gpt", ModelFamily::kGpt}, {"llama", ModelFamily::kLlama}}, "family");
}
inline OptimizerKind optimizer_from_string(const std::string& s) {
  return detail::parse_enum<OptimizerKind>(s,
                                           {{"adamw", OptimizerKind::kAdamW},
                                            {"lion", OptimizerKind::kLion},
                                            {"sophia", OptimizerKind::kSophia}},
                                           "optimizer");
}
inline EstimatorKind estimator_from_string(const std::string& s) {
  return detail::parse_enum<EstimatorKind>(
      s, {{"gnb", EstimatorKind::kGnb}, {"hutchinson", EstimatorKind::kHutchinson}}, "estimator");
}
inline DataRegime regime_from_string(const std::string& s) {
  return detail::parse_enum<DataRegime>(
      s, {{"unique", DataRegime::kUnique}, {"repeated", DataRegime::kRepeated}}, "regime");
}

inline void to_json(json& j, const ModelConfig& c) {
  j = json{{"family", to_string(c.family)},
           {"n_layers", c.n_layers},
           {"n_heads", c.n_heads},
           {"head_size", c.head_size},
           {"embedding_size", c.embedding_size},
           {"vocab_size", c.vocab_size},
           {"context_length", c.context_length},
           {"mlp_hidden", c.mlp_hidden},
           {"use_bias", c.use_bias},
           {"norm_kind", c.norm_kind == NormKind::kLayerNorm ? "layernorm" : "rmsnorm"},
           {"mlp_kind", c.mlp_kind == MlpKind::kTwoLayer ? "two_layer" : "three_layer"},
           {"activation", c.activation == Activation::kGelu ? "gelu" : "swiglu"},
           {"rope_base", c.rope_base},
           {"attn_inv_head_dim_scale", c.attn_inv_head_dim_scale},
           {"norm_eps", c.norm_eps}};
}

inline void from_json(const json& j, ModelConfig& c) {
  // Family presets fill the row-constrained fields; explicit keys override.
  const ModelFamily family = family_from_string(j.at("family").get<std::string>());
  c = ModelConfig::for_family(family, j.at("n_layers").get<int64_t>(),
                              j.at("n_heads").get<int64_t>(), j.at("head_size").get<int64_t>(),
                              j.at("vocab_size").get<int64_t>(),
                              j.at("context_length").get<int64_t>());
  if (j.contains("embedding_size")) c.embedding_size = j.at("embedding_size").get<int64_t>();
  if (j.contains("mlp_hidden")) c.mlp_hidden = j.at("mlp_hidden").get<int64_t>();
  if (j.contains("use_bias")) c.use_bias = j.at("use_bias").get<bool>();
  if (j.contains("norm_kind")) {
    c.norm_kind = detail::parse_enum<NormKind>(
        j.at("norm_kind").get<std::string>(),
        {{"layernorm", NormKind::kLayerNorm}, {"rmsnorm", NormKind::kRmsNorm}}, "norm_kind");
  }
  if (j.contains("mlp_kind")) {
    c.mlp_kind = detail::parse_enum<MlpKind>(
        j.at("mlp_kind").get<std::string>(),
        {{"two_layer", MlpKind::kTwoLayer}, {"three_layer", MlpKind::kThreeLayer}}, "mlp_kind");
  }
  if (j.contains("activation")) {
    c.activation = detail::parse_enum<Activation>(
        j.at("activation").get<std::string>(),
        {{"gelu", Activation::kGelu}, {"swiglu", Activation::kSwiglu}}, "activation");
  }
  if (j.contains("rope_base")) c.rope_base = j.at("rope_base").get<double>();
  if (j.contains("attn_inv_head_dim_scale")) {
    c.attn_inv_head_dim_scale = j.at("attn_inv_head_dim_scale").get<bool>();
  }
  if (j.contains("norm_eps")) c.norm_eps = j.at("norm_eps").get<double>();
  c.validate();
}

inline void to_json(json& j, const MupContext& m) {
  j = json{{"base_width", m.base_width},
           {"width", m.width},
           {"base_sigma", m.base_sigma},
           {"alpha_output", m.alpha_output},
           {"alpha_embedding", m.alpha_embedding},
           {"enabled", m.enabled},
           {"output_init_width_constant", m.output_init_width_constant}};
}

inline void from_json(const json& j, MupContext& m) {
  m = MupContext{};
  j.at("base_width").get_to(m.base_width);
  j.at("width").get_to(m.width);
  if (j.contains("base_sigma")) j.at("base_sigma").get_to(m.base_sigma);
  if (j.contains("alpha_output")) j.at("alpha_output").get_to(m.alpha_output);
  if (j.contains("alpha_embedding")) j.at("alpha_embedding").get_to(m.alpha_embedding);
  if (j.contains("enabled")) j.at("enabled").get_to(m.enabled);
  if (j.contains("output_init_width_constant")) {
    j.at("output_init_width_constant").get_to(m.output_init_width_constant);
  }
  m.validate();
}

inline void to_json(json& j, const OptimizerConfig& c) {
  j = json{{"kind", to_string(c.kind)},
           {"beta1", c.beta1},
           {"beta2", c.beta2},
           {"eps", c.eps},
           {"weight_decay", c.weight_decay},
           {"sophia_k", c.sophia_k},
           {"sophia_rho", c.sophia_rho},
           {"estimator", to_string(c.estimator)},
           {"hutchinson_probes", c.hutchinson_probes},
           {"hvp_fd_step", c.hvp_fd_step},
           {"lion_literal_m_update", c.lion_literal_m_update},
           {"adamw_literal_eps", c.adamw_literal_eps}};
}

inline void from_json(const json& j, OptimizerConfig& c) {
  c = OptimizerConfig::for_kind(optimizer_from_string(j.at("kind").get<std::string>()));
  if (j.contains("beta1")) j.at("beta1").get_to(c.beta1);
  if (j.contains("beta2")) j.at("beta2").get_to(c.beta2);
  if (j.contains("eps")) j.at("eps").get_to(c.eps);
  if (j.contains("weight_decay")) j.at("weight_decay").get_to(c.weight_decay);
  if (j.contains("sophia_k")) j.at("sophia_k").get_to(c.sophia_k);
  if (j.contains("sophia_rho")) j.at("sophia_rho").get_to(c.sophia_rho);
  if (j.contains("estimator")) c.estimator = estimator_from_string(j.at("estimator"));
  if (j.contains("hutchinson_probes")) j.at("hutchinson_probes").get_to(c.hutchinson_probes);
  if (j.contains("hvp_fd_step")) j.at("hvp_fd_step").get_to(c.hvp_fd_step);
  if (j.contains("lion_literal_m_update")) {
    j.at("lion_literal_m_update").get_to(c.lion_literal_m_update);
  }
  if (j.contains("adamw_literal_eps")) j.at("adamw_literal_eps").get_to(c.adamw_literal_eps);
  c.validate();
}

inline void to_json(json& j, const SyntheticSpec& s) {
  j = json{{"vocab_size", s.vocab_size},
           {"markov_order", s.markov_order},
           {"concentration", s.concentration},
           {"seed", s.seed}};
}

inline void from_json(const json& j, SyntheticSpec& s) {
  s = SyntheticSpec{};
  j.at("vocab_size").get_to(s.vocab_size);
  if (j.contains("markov_order")) j.at("markov_order").get_to(s.markov_order);
  if (j.contains("concentration")) j.at("concentration").get_to(s.concentration);
  if (j.contains("seed")) j.at("seed").get_to(s.seed);
  s.validate();
}

inline void to_json(json& j, const BatchPlan& p) {
  j = json{{"context_length", p.context_length},
           {"batch_tokens", p.batch_tokens},
           {"regime", to_string(p.regime)},
           {"epochs", p.epochs},
           {"shuffle_seed", p.shuffle_seed},
           {"validation_fraction", p.validation_fraction},
           {"reshuffle_per_epoch", p.reshuffle_per_epoch}};
}

inline void from_json(const json& j, BatchPlan& p) {
  p = BatchPlan{};
  j.at("context_length").get_to(p.context_length);
  j.at("batch_tokens").get_to(p.batch_tokens);
  if (j.contains("regime")) p.regime = regime_from_string(j.at("regime"));
  if (j.contains("epochs")) j.at("epochs").get_to(p.epochs);
  if (j.contains("shuffle_seed")) j.at("shuffle_seed").get_to(p.shuffle_seed);
  if (j.contains("validation_fraction")) j.at("validation_fraction").get_to(p.validation_fraction);
  if (j.contains("reshuffle_per_epoch")) j.at("reshuffle_per_epoch").get_to(p.reshuffle_per_epoch);
  p.validate();
}

inline void to_json(json& j, const Schedule& s) {
  j = json{{"peak_lr", s.peak_lr},
           {"warmup_tokens", s.warmup_tokens},
           {"total_tokens", s.total_tokens},
           {"final_fraction", s.final_fraction}};
}

inline void from_json(const json& j, Schedule& s) {
  s = Schedule{};
  j.at("peak_lr").get_to(s.peak_lr);
  j.at("warmup_tokens").get_to(s.warmup_tokens);
  j.at("total_tokens").get_to(s.total_tokens);
  if (j.contains("final_fraction")) j.at("final_fraction").get_to(s.final_fraction);
  s.validate();
}

inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"schedule", c.schedule},
           {"plan", c.plan},
           {"optimizer", c.opt},
           {"grad_accum_steps", c.grad_accum_steps},
           {"eval_interval_tokens", c.eval_interval_tokens},
           {"estimator_seed", c.estimator_seed},
           {"grad_clip_max", c.grad_clip_max},
           {"max_steps", c.max_steps}};
}

inline void from_json(const json& j, TrainConfig& c) {
  c = TrainConfig{};
  j.at("schedule").get_to(c.schedule);
  j.at("plan").get_to(c.plan);
  j.at("optimizer").get_to(c.opt);
  if (j.contains("grad_accum_steps")) j.at("grad_accum_steps").get_to(c.grad_accum_steps);
  if (j.contains("eval_interval_tokens")) {
    j.at("eval_interval_tokens").get_to(c.eval_interval_tokens);
  }
  if (j.contains("estimator_seed")) j.at("estimator_seed").get_to(c.estimator_seed);
  if (j.contains("grad_clip_max")) j.at("grad_clip_max").get_to(c.grad_clip_max);
  if (j.contains("max_steps")) j.at("max_steps").get_to(c.max_steps);
  c.validate();
}

inline void to_json(json& j, const StepRecord& s) {
  j = json{{"type", "step"},
           {"tokens", s.tokens_seen},
           {"train_loss", s.train_loss},
           {"lr", s.lr},
           {"grad_l2", s.grad_l2_norm}};
}

inline void from_json(const json& j, StepRecord& s) {
  j.at("tokens").get_to(s.tokens_seen);
  j.at("train_loss").get_to(s.train_loss);
  j.at("lr").get_to(s.lr);
  j.at("grad_l2").get_to(s.grad_l2_norm);
}

inline void to_json(json& j, const EvalRecord& e) {
  j = json{{"type", "eval"}, {"tokens", e.tokens_seen}, {"val_loss", e.val_loss}};
}

inline void from_json(const json& j, EvalRecord& e) {
  j.at("tokens").get_to(e.tokens_seen);
  j.at("val_loss").get_to(e.val_loss);
}

}  // namespace optlab
