#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "optlab/errors.hpp"

namespace optlab {

enum class OptimizerKind { kAdamW, kLion, kSophia };

inline const char* optimizer_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::kAdamW: return "adamw";
    case OptimizerKind::kLion: return "lion";
    case OptimizerKind::kSophia: return "sophia";
  }
  return "?";
}

// Parameter roles for width scaling. Biases and norm gains are width-vectors
// and scale like input weights (i.e. not at all, under Adam-style rules).
enum class MupRole { kInputWeight, kOutputWeight, kHiddenWeight, kBias, kNormGain };

inline const char* mup_role_name(MupRole r) {
  switch (r) {
    case MupRole::kInputWeight: return "input_weight";
    case MupRole::kOutputWeight: return "output_weight";
    case MupRole::kHiddenWeight: return "hidden_weight";
    case MupRole::kBias: return "bias";
    case MupRole::kNormGain: return "norm_gain";
  }
  return "?";
}

// Width bookkeeping for one model in a sweep. base_sigma is the weight
// init standard deviation at the base (proxy) width; everything else is
// derived from the width ratio m = width / base_width.
//
// With enabled = false the scaling rules degenerate to a standard
// parametrization: init variance follows 1/fan_in (constant for the
// embedding, whose fan-in is the vocabulary), learning rate and weight
// decay are global, and the output multiplier is applied as-is. Used as
// the control arm in transfer experiments.
struct MupContext {
  int64_t base_width = 1;
  int64_t width = 1;
  double base_sigma = 0.073;
  double alpha_output = 1.0;
  double alpha_embedding = 1.0;  // convention: sqrt(target hidden dim), fixed across a sweep
  bool enabled = true;
  // Alternate output-weight init from the scaling-rule table: width-constant
  // variance instead of 1/fan_in.
  bool output_init_width_constant = false;

  double width_mult() const { return static_cast<double>(width) / static_cast<double>(base_width); }

  void validate() const {
    if (base_width <= 0 || width <= 0) throw ConfigError("MupContext: widths must be positive");
    if (base_sigma <= 0.0) throw ConfigError("MupContext: base_sigma must be positive");
    if (alpha_embedding <= 0.0) throw ConfigError("MupContext: alpha_embedding must be positive");
    if (alpha_output < 0.0) throw ConfigError("MupContext: alpha_output must be >= 0");
  }

  static MupContext for_width(int64_t width, int64_t base_width, int64_t target_width,
                              double alpha_output = 1.0) {
    MupContext ctx;
    ctx.base_width = base_width;
    ctx.width = width;
    ctx.alpha_output = alpha_output;
    ctx.alpha_embedding = std::sqrt(static_cast<double>(target_width));
    return ctx;
  }
};

// Init standard deviation per role. Weight variance scales as 1/width
// relative to the base model; biases start at zero and norm gains at one.
inline double init_std(MupRole role, const MupContext& ctx) {
  const double m = ctx.width_mult();
  switch (role) {
    case MupRole::kBias: return 0.0;
    case MupRole::kNormGain: return 1.0;  // callers init gains to 1, std 0
    case MupRole::kInputWeight:
      return ctx.enabled ? ctx.base_sigma / std::sqrt(m) : ctx.base_sigma;
    case MupRole::kHiddenWeight:
      return ctx.base_sigma / std::sqrt(m);
    case MupRole::kOutputWeight:
      if (ctx.enabled && ctx.output_init_width_constant) return ctx.base_sigma;
      return ctx.base_sigma / std::sqrt(m);
  }
  return ctx.base_sigma;
}

// Per-role learning-rate multiplier under Adam-style rules: hidden weights
// get 1/m, everything else 1. The same rule is shared by all three
// optimizer families.
inline double lr_scale(MupRole role, const MupContext& ctx) {
  if (!ctx.enabled) return 1.0;
  return role == MupRole::kHiddenWeight ? 1.0 / ctx.width_mult() : 1.0;
}

// Weight-decay multiplier: Lion scales decay proportionally to the width
// multiplier, AdamW and Sophia keep it constant.
inline double wd_scale(OptimizerKind kind, const MupContext& ctx) {
  if (!ctx.enabled) return 1.0;
  return kind == OptimizerKind::kLion ? ctx.width_mult() : 1.0;
}

// Multiplier applied to the final logits: alpha_output / m.
inline double output_multiplier_effective(const MupContext& ctx) {
  return ctx.enabled ? ctx.alpha_output / ctx.width_mult() : ctx.alpha_output;
}

}  // namespace optlab
