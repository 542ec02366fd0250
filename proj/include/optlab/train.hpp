#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "optlab/data.hpp"
#include "optlab/estimators.hpp"
#include "optlab/model.hpp"
#include "optlab/optim.hpp"
#include "optlab/rng.hpp"
#include "optlab/schedule.hpp"

namespace optlab {

struct TrainConfig {
  Schedule schedule;
  BatchPlan plan;
  OptimizerConfig opt;
  int64_t grad_accum_steps = 1;
  int64_t eval_interval_tokens = 0;  // 0: validation only at start and end
  uint64_t estimator_seed = 42;
  double grad_clip_max = 1.0;
  int64_t max_steps = -1;  // cap on optimizer steps; -1 runs the full plan

  void validate() const {
    schedule.validate();
    plan.validate();
    opt.validate();
    if (grad_accum_steps < 1) throw ConfigError("TrainConfig: grad_accum_steps must be >= 1");
    if (eval_interval_tokens < 0) throw ConfigError("TrainConfig: eval_interval_tokens must be >= 0");
    if (grad_clip_max <= 0.0) throw ConfigError("TrainConfig: grad_clip_max must be positive");
    if (plan.batch_tokens / plan.context_length % grad_accum_steps != 0) {
      throw ConfigError("TrainConfig: sequences per batch must divide evenly into micro batches");
    }
  }
};

struct StepRecord {
  int64_t tokens_seen = 0;
  double train_loss = 0.0;
  double lr = 0.0;
  double grad_l2_norm = 0.0;

  bool operator==(const StepRecord&) const = default;
};

struct EvalRecord {
  int64_t tokens_seen = 0;
  double val_loss = 0.0;

  bool operator==(const EvalRecord&) const = default;
};

// Full time series of one training run. Everything except
// wall_clock_seconds is a pure function of (model seed, corpus, config).
struct RunRecord {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
  double wall_clock_seconds = 0.0;

  bool numerically_equal(const RunRecord& o) const {
    return steps == o.steps && evals == o.evals;
  }
};

struct TrainResult {
  RunRecord record;
  bool diverged = false;
  std::string divergence;  // step and statistic that went non-finite
  bool paused = false;
};

// Pause/resume state at a macro-step boundary.
struct RunCheckpoint {
  uint64_t config_digest = 0;
  uint64_t corpus_hash = 0;
  int64_t steps_done = 0;
  int64_t tokens_seen = 0;
  Model model;
  OptimizerState opt_state;
  RunRecord record;
};

// Digest of everything that determines a run's numeric trajectory, used to
// refuse resuming a checkpoint under a different setup.
inline uint64_t run_digest(const Model& model, const TrainConfig& cfg) {
  std::ostringstream os;
  const ModelConfig& mc = model.config;
  os << family_name(mc.family) << ':' << mc.n_layers << ':' << mc.n_heads << ':' << mc.head_size
     << ':' << mc.vocab_size << ':' << mc.context_length << ':' << mc.mlp_hidden << ':'
     << mc.rope_base << ':' << mc.attn_inv_head_dim_scale << ':' << mc.norm_eps << '|'
     << model.mup.base_width << ':' << model.mup.width << ':' << model.mup.base_sigma << ':'
     << model.mup.alpha_output << ':' << model.mup.alpha_embedding << ':' << model.mup.enabled
     << ':' << model.mup.output_init_width_constant << '|' << model.init_seed << '|'
     << optimizer_name(cfg.opt.kind) << ':' << cfg.opt.beta1 << ':' << cfg.opt.beta2 << ':'
     << cfg.opt.eps << ':' << cfg.opt.weight_decay << ':' << cfg.opt.sophia_k << ':'
     << cfg.opt.sophia_rho << ':' << static_cast<int>(cfg.opt.estimator) << ':'
     << cfg.opt.hutchinson_probes << ':' << cfg.opt.hvp_fd_step << ':'
     << cfg.opt.lion_literal_m_update << ':' << cfg.opt.adamw_literal_eps << '|'
     << cfg.schedule.peak_lr << ':' << cfg.schedule.warmup_tokens << ':'
     << cfg.schedule.total_tokens << ':' << cfg.schedule.final_fraction << '|'
     << cfg.plan.context_length << ':' << cfg.plan.batch_tokens << ':'
     << static_cast<int>(cfg.plan.regime) << ':' << cfg.plan.epochs << ':'
     << cfg.plan.shuffle_seed << ':' << cfg.plan.validation_fraction << ':'
     << cfg.plan.reshuffle_per_epoch << '|' << cfg.grad_accum_steps << ':'
     << cfg.eval_interval_tokens << ':' << cfg.estimator_seed << ':' << cfg.grad_clip_max << ':'
     << cfg.max_steps;
  const std::string s = os.str();
  return fnv1a(s.data(), s.size());
}

// Token-weighted mean NLL over the given batches. No parameter mutation.
inline double evaluate(const Model& model, const std::vector<TokenBatch>& batches) {
  if (batches.empty()) throw ContractError("evaluate: need at least one batch");
  double weighted = 0.0;
  int64_t tokens = 0;
  for (const TokenBatch& b : batches) {
    weighted += loss_value(model, b) * static_cast<double>(b.tokens());
    tokens += b.tokens();
  }
  return weighted / static_cast<double>(tokens);
}

namespace detail {

// Splits a macro batch into equal micro batches for gradient accumulation.
inline std::vector<TokenBatch> split_batch(const TokenBatch& macro, int64_t parts) {
  if (macro.batch_size % parts != 0) {
    throw ConfigError("split_batch: batch size not divisible by grad_accum_steps");
  }
  if (parts == 1) return {macro};
  const int64_t rows = macro.batch_size / parts;
  const int64_t t = macro.seq_len;
  std::vector<TokenBatch> micros;
  micros.reserve(static_cast<size_t>(parts));
  for (int64_t p = 0; p < parts; ++p) {
    TokenBatch m;
    m.batch_size = rows;
    m.seq_len = t;
    const size_t off = static_cast<size_t>(p * rows * t);
    const size_t len = static_cast<size_t>(rows * t);
    m.inputs.assign(macro.inputs.begin() + off, macro.inputs.begin() + off + len);
    m.targets.assign(macro.targets.begin() + off, macro.targets.begin() + off + len);
    micros.push_back(std::move(m));
  }
  return micros;
}

// The whole macro batch as one objective; gradients are computed micro by
// micro and mean-reduced, so the memory high-water mark stays at one micro
// graph.
struct MacroBatchObjective {
  Model* model;
  const std::vector<TokenBatch>* micros;

  std::vector<Param>& params() { return model->params; }

  GradientMap gradients() {
    GradientMap acc;
    for (size_t i = 0; i < micros->size(); ++i) {
      GradientMap g = loss_and_gradients(*model, (*micros)[i]).second;
      if (i == 0) {
        acc = std::move(g);
      } else {
        for (auto& [name, t] : acc) {
          const double* src = g.at(name).data();
          double* dst = t.data();
          for (int64_t j = 0; j < t.numel(); ++j) dst[j] += src[j];
        }
      }
    }
    const double inv = 1.0 / static_cast<double>(micros->size());
    for (auto& [name, t] : acc) {
      for (double& x : t.values()) x *= inv;
    }
    return acc;
  }

  Tensor logits() {
    const int64_t vocab = model->config.vocab_size;
    Tensor out({num_predictions(), vocab});
    int64_t row = 0;
    for (const TokenBatch& m : *micros) {
      Graph g;
      auto fwd = build_forward(g, *model, m);
      const Tensor& l = g.value(fwd.logits);
      std::copy(l.data(), l.data() + l.numel(), out.data() + row * vocab);
      row += m.tokens();
    }
    return out;
  }

  GradientMap gradients_for_labels(const std::vector<int32_t>& labels) {
    GradientMap acc;
    size_t off = 0;
    for (size_t i = 0; i < micros->size(); ++i) {
      const TokenBatch& m = (*micros)[i];
      std::vector<int32_t> slice(labels.begin() + static_cast<int64_t>(off),
                                 labels.begin() + static_cast<int64_t>(off + m.tokens()));
      off += static_cast<size_t>(m.tokens());
      Graph g;
      auto fwd = build_forward(g, *model, m);
      GradientMap gm = g.backward(g.softmax_cross_entropy(fwd.logits, slice));
      if (i == 0) {
        acc = std::move(gm);
      } else {
        for (auto& [name, t] : acc) {
          const double* src = gm.at(name).data();
          double* dst = t.data();
          for (int64_t j = 0; j < t.numel(); ++j) dst[j] += src[j];
        }
      }
    }
    const double inv = 1.0 / static_cast<double>(micros->size());
    for (auto& [name, t] : acc) {
      for (double& x : t.values()) x *= inv;
    }
    return acc;
  }

  int64_t num_predictions() const {
    int64_t n = 0;
    for (const TokenBatch& m : *micros) n += m.tokens();
    return n;
  }
};

}  // namespace detail

namespace detail {

inline TrainResult run_loop(Model& model, OptimizerState& state, RunRecord record,
                            const Corpus& corpus, const TrainConfig& cfg, int64_t start_step,
                            int64_t tokens_seen, int64_t stop_after_steps,
                            RunCheckpoint* pause_out) {
  const auto wall_start = std::chrono::steady_clock::now();
  BatchStream stream(corpus, cfg.plan);
  const auto val = stream.validation_batches();
  const LrScales scales = LrScales::from_mup(model.params, model.mup, cfg.opt.kind);

  int64_t total_steps = stream.total_steps();
  if (cfg.max_steps >= 0) total_steps = std::min(total_steps, cfg.max_steps);
  if (cfg.schedule.total_tokens < total_steps * cfg.plan.batch_tokens) {
    throw ConfigError("train: schedule.total_tokens shorter than the planned run");
  }

  TrainResult result;
  if (start_step == 0) record.evals.push_back({0, evaluate(model, val)});

  auto finish = [&](TrainResult&& r) {
    r.record = std::move(record);
    r.record.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    return std::move(r);
  };

  for (int64_t step = start_step; step < total_steps; ++step) {
    if (stop_after_steps >= 0 && step >= stop_after_steps) {
      if (pause_out != nullptr) {
        pause_out->config_digest = run_digest(model, cfg);
        pause_out->corpus_hash = corpus.content_hash;
        pause_out->steps_done = step;
        pause_out->tokens_seen = tokens_seen;
        pause_out->model = model;
        pause_out->opt_state = state;
        pause_out->record = record;
      }
      result.paused = true;
      return finish(std::move(result));
    }

    const TokenBatch macro = stream.batch(step);
    const std::vector<TokenBatch> micros = split_batch(macro, cfg.grad_accum_steps);

    GradientMap grads;
    double loss_acc = 0.0;
    try {
      for (size_t i = 0; i < micros.size(); ++i) {
        auto [micro_loss, g] = loss_and_gradients(model, micros[i]);
        loss_acc += micro_loss;
        if (i == 0) {
          grads = std::move(g);
        } else {
          for (auto& [name, t] : grads) {
            const double* src = g.at(name).data();
            double* dst = t.data();
            for (int64_t j = 0; j < t.numel(); ++j) dst[j] += src[j];
          }
        }
      }
    } catch (const NumericError& e) {
      result.diverged = true;
      result.divergence = "step " + std::to_string(step + 1) + ": " + e.what();
      return finish(std::move(result));
    }
    const double inv_micros = 1.0 / static_cast<double>(micros.size());
    for (auto& [name, t] : grads) {
      for (double& x : t.values()) x *= inv_micros;
    }
    const double loss = loss_acc * inv_micros;
    if (!std::isfinite(loss)) {
      result.diverged = true;
      result.divergence = "step " + std::to_string(step + 1) + ": non-finite train loss";
      return finish(std::move(result));
    }

    const double norm = global_norm(grads);
    if (!std::isfinite(norm)) {
      result.diverged = true;
      result.divergence = "step " + std::to_string(step + 1) + ": non-finite gradient norm";
      return finish(std::move(result));
    }
    global_grad_clip(grads, cfg.grad_clip_max);

    tokens_seen += cfg.plan.batch_tokens;
    const double lr = cfg.schedule.lr_at(std::min(tokens_seen, cfg.schedule.total_tokens));

    try {
      if (cfg.opt.kind == OptimizerKind::kSophia && sophia_estimate_due(state.t + 1, cfg.opt.sophia_k)) {
        MacroBatchObjective obj{&model, &micros};
        GradientMap estimate =
            sophia_estimate(obj, cfg.opt.estimator, cfg.opt.hutchinson_probes,
                            Rng::mix(cfg.estimator_seed, static_cast<uint64_t>(state.t + 1)),
                            cfg.opt.hvp_fd_step);
        optimizer_step(model.params, grads, state, cfg.opt, lr, scales, &estimate);
      } else {
        optimizer_step(model.params, grads, state, cfg.opt, lr, scales, nullptr);
      }
    } catch (const NumericError& e) {
      result.diverged = true;
      result.divergence = "step " + std::to_string(step + 1) + ": " + e.what();
      return finish(std::move(result));
    }

    record.steps.push_back({tokens_seen, loss, lr, norm});

    const bool last = (step + 1 == total_steps);
    bool want_eval = last;
    if (cfg.eval_interval_tokens > 0 && !record.evals.empty()) {
      want_eval = want_eval ||
                  tokens_seen / cfg.eval_interval_tokens >
                      record.evals.back().tokens_seen / cfg.eval_interval_tokens;
    }
    if (want_eval) record.evals.push_back({tokens_seen, evaluate(model, val)});
  }
  return finish(std::move(result));
}

}  // namespace detail

// Run the full plan (or up to stop_after_steps, writing a resumable
// checkpoint). Deterministic: fixed seeds give a bitwise-identical
// RunRecord, wall clock aside.
inline TrainResult train(Model& model, const Corpus& corpus, const TrainConfig& cfg,
                         int64_t stop_after_steps = -1, RunCheckpoint* pause_out = nullptr) {
  cfg.validate();
  corpus.validate();
  OptimizerState state = OptimizerState::init(model.params, cfg.opt.kind);
  return detail::run_loop(model, state, RunRecord{}, corpus, cfg, 0, 0, stop_after_steps,
                          pause_out);
}

// Continue a paused run. The uninterrupted and the paused-plus-resumed runs
// produce numerically identical records.
inline TrainResult resume_train(const RunCheckpoint& ck, const Corpus& corpus,
                                const TrainConfig& cfg, Model* model_out = nullptr) {
  cfg.validate();
  corpus.validate();
  if (ck.config_digest != run_digest(ck.model, cfg)) {
    throw ConfigError("resume_train: checkpoint was created under a different config");
  }
  if (ck.corpus_hash != corpus.content_hash) {
    throw ConfigError("resume_train: checkpoint was created on a different corpus");
  }
  Model model = ck.model;
  OptimizerState state = ck.opt_state;
  TrainResult r = detail::run_loop(model, state, ck.record, corpus, cfg, ck.steps_done,
                                   ck.tokens_seen, -1, nullptr);
  if (model_out != nullptr) *model_out = std::move(model);
  return r;
}

}  // namespace optlab
