#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "optlab/errors.hpp"
#include "optlab/estimators.hpp"
#include "optlab/graph.hpp"
#include "optlab/model.hpp"
#include "optlab/mup.hpp"

namespace optlab {

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdamW;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  int64_t sophia_k = 10;
  double sophia_rho = 0.3;
  EstimatorKind estimator = EstimatorKind::kGnb;
  int64_t hutchinson_probes = 1;
  double hvp_fd_step = 1e-4;
  // Literal-recursion switches, for comparison runs only. The defaults are
  // the standard published forms.
  bool lion_literal_m_update = false;  // m += (1 - beta2) g, no beta2 factor on m
  bool adamw_literal_eps = false;      // sqrt(v_hat + eps) instead of sqrt(v_hat) + eps

  void validate() const {
    if (beta1 < 0.0 || beta1 >= 1.0) throw ConfigError("OptimizerConfig: beta1 must be in [0, 1)");
    if (beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("OptimizerConfig: beta2 must be in [0, 1)");
    if (eps <= 0.0) throw ConfigError("OptimizerConfig: eps must be positive");
    if (weight_decay < 0.0) throw ConfigError("OptimizerConfig: weight_decay must be >= 0");
    if (sophia_k < 1) throw ConfigError("OptimizerConfig: sophia_k must be >= 1");
    if (sophia_rho <= 0.0) throw ConfigError("OptimizerConfig: sophia_rho must be positive");
    if (hutchinson_probes < 1) throw ConfigError("OptimizerConfig: hutchinson_probes must be >= 1");
    if (hvp_fd_step <= 0.0) throw ConfigError("OptimizerConfig: hvp_fd_step must be positive");
  }

  // Recommended settings per optimizer (the untuned beta/eps/decay values).
  static OptimizerConfig adamw() {
    OptimizerConfig c;
    c.kind = OptimizerKind::kAdamW;
    c.beta1 = 0.9;
    c.beta2 = 0.95;
    c.eps = 1e-8;
    c.weight_decay = 0.1;
    return c;
  }
  static OptimizerConfig lion() {
    OptimizerConfig c;
    c.kind = OptimizerKind::kLion;
    c.beta1 = 0.9;
    c.beta2 = 0.99;
    c.weight_decay = 1.0;
    return c;
  }
  static OptimizerConfig sophia() {
    OptimizerConfig c;
    c.kind = OptimizerKind::kSophia;
    c.beta1 = 0.96;
    c.beta2 = 0.99;
    c.eps = 1e-15;
    c.weight_decay = 0.2;
    c.sophia_k = 10;
    c.sophia_rho = 0.3;
    return c;
  }
  static OptimizerConfig for_kind(OptimizerKind k) {
    switch (k) {
      case OptimizerKind::kAdamW: return adamw();
      case OptimizerKind::kLion: return lion();
      case OptimizerKind::kSophia: return sophia();
    }
    return adamw();
  }
};

// Moment buffers plus the step counter. m is the first moment for all three
// optimizers; v_or_h holds Adam's second moment or Sophia's diagonal
// curvature estimate and stays empty for Lion.
struct OptimizerState {
  int64_t t = 0;
  GradientMap m;
  GradientMap v_or_h;

  static OptimizerState init(const std::vector<Param>& params, OptimizerKind kind) {
    OptimizerState s;
    for (const auto& p : params) {
      s.m.emplace(p.name, Tensor::zeros_like(p.value));
      if (kind != OptimizerKind::kLion) s.v_or_h.emplace(p.name, Tensor::zeros_like(p.value));
    }
    return s;
  }
};

// Per-parameter learning-rate multipliers plus the global weight-decay
// multiplier, both positive.
struct LrScales {
  std::map<std::string, double> lr;
  double wd = 1.0;

  static LrScales identity(const std::vector<Param>& params) {
    LrScales s;
    for (const auto& p : params) s.lr.emplace(p.name, 1.0);
    return s;
  }

  static LrScales from_mup(const std::vector<Param>& params, const MupContext& ctx,
                           OptimizerKind kind) {
    LrScales s;
    for (const auto& p : params) s.lr.emplace(p.name, lr_scale(p.role, ctx));
    s.wd = wd_scale(kind, ctx);
    return s;
  }

  double scale_for(const std::string& name) const {
    auto it = lr.find(name);
    if (it == lr.end()) throw IndexError("LrScales: no scale for parameter '" + name + "'");
    return it->second;
  }
};

namespace detail {

inline void check_step_args(const std::vector<Param>& params, const GradientMap& grads,
                            const OptimizerState& state, double eta, const char* who) {
  if (eta < 0.0) throw ContractError(std::string(who) + ": learning rate must be >= 0");
  for (const auto& p : params) {
    auto it = grads.find(p.name);
    if (it == grads.end()) {
      throw ShapeError(std::string(who) + ": missing gradient for parameter '" + p.name + "'");
    }
    if (!it->second.same_shape(p.value)) {
      throw ShapeError(std::string(who) + ": gradient shape " + it->second.shape_string() +
                       " does not match parameter '" + p.name + "' " + p.value.shape_string());
    }
    if (!it->second.all_finite()) {
      throw NumericError(std::string(who) + ": non-finite gradient for parameter '" + p.name + "'");
    }
  }
  if (state.t < 0) throw ContractError(std::string(who) + ": negative step counter");
}

inline Tensor& buffer_for(GradientMap& m, const std::string& name, const char* who) {
  auto it = m.find(name);
  if (it == m.end()) throw IndexError(std::string(who) + ": missing state buffer for '" + name + "'");
  return it->second;
}

}  // namespace detail

// One AdamW step: m and v update, bias correction, decoupled decay.
inline void adamw_step(std::vector<Param>& params, const GradientMap& grads,
                       OptimizerState& state, const OptimizerConfig& cfg, double eta,
                       const LrScales& scales) {
  detail::check_step_args(params, grads, state, eta, "adamw_step");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (auto& p : params) {
    const Tensor& g = grads.at(p.name);
    Tensor& m = detail::buffer_for(state.m, p.name, "adamw_step");
    Tensor& v = detail::buffer_for(state.v_or_h, p.name, "adamw_step");
    const double eta_scaled = eta * scales.scale_for(p.name);
    const double decay = cfg.weight_decay * scales.wd;
    double* pp = p.value.data();
    double* pm = m.data();
    double* pv = v.data();
    const double* pg = g.data();
    for (int64_t i = 0; i < p.value.numel(); ++i) {
      pm[i] = cfg.beta1 * pm[i] + (1.0 - cfg.beta1) * pg[i];
      pv[i] = cfg.beta2 * pv[i] + (1.0 - cfg.beta2) * pg[i] * pg[i];
      const double m_hat = pm[i] / bc1;
      const double v_hat = pv[i] / bc2;
      const double denom =
          cfg.adamw_literal_eps ? std::sqrt(v_hat + cfg.eps) : std::sqrt(v_hat) + cfg.eps;
      pp[i] -= eta_scaled * (m_hat / denom + decay * pp[i]);
    }
  }
}

// One Lion step: sign of the interpolated moment, decoupled decay, then the
// slow moment update. sign(0) = 0.
inline void lion_step(std::vector<Param>& params, const GradientMap& grads, OptimizerState& state,
                      const OptimizerConfig& cfg, double eta, const LrScales& scales) {
  detail::check_step_args(params, grads, state, eta, "lion_step");
  state.t += 1;
  for (auto& p : params) {
    const Tensor& g = grads.at(p.name);
    Tensor& m = detail::buffer_for(state.m, p.name, "lion_step");
    const double eta_scaled = eta * scales.scale_for(p.name);
    const double decay = cfg.weight_decay * scales.wd;
    double* pp = p.value.data();
    double* pm = m.data();
    const double* pg = g.data();
    for (int64_t i = 0; i < p.value.numel(); ++i) {
      const double c = cfg.beta1 * pm[i] + (1.0 - cfg.beta1) * pg[i];
      const double s = (c > 0.0) ? 1.0 : (c < 0.0 ? -1.0 : 0.0);
      pp[i] -= eta_scaled * (s + decay * pp[i]);
      pm[i] = cfg.lion_literal_m_update ? pm[i] + (1.0 - cfg.beta2) * pg[i]
                                        : cfg.beta2 * pm[i] + (1.0 - cfg.beta2) * pg[i];
    }
  }
}

// One Sophia step. hessian_estimate must be present exactly on estimate
// steps; otherwise h is retained bit-for-bit. Negative estimate entries are
// clamped to zero before the moving average, and the preconditioned update
// is clipped elementwise to [-1, 1].
inline void sophia_step(std::vector<Param>& params, const GradientMap& grads,
                        OptimizerState& state, const OptimizerConfig& cfg, double eta,
                        const LrScales& scales, const GradientMap* hessian_estimate) {
  detail::check_step_args(params, grads, state, eta, "sophia_step");
  state.t += 1;
  for (auto& p : params) {
    const Tensor& g = grads.at(p.name);
    Tensor& m = detail::buffer_for(state.m, p.name, "sophia_step");
    Tensor& h = detail::buffer_for(state.v_or_h, p.name, "sophia_step");
    const double eta_scaled = eta * scales.scale_for(p.name);
    const double decay = eta * cfg.weight_decay * scales.wd;
    const double* pg = g.data();
    const double* pe = nullptr;
    if (hessian_estimate != nullptr) {
      const Tensor& est = hessian_estimate->at(p.name);
      if (!est.same_shape(p.value)) {
        throw ShapeError("sophia_step: estimate shape mismatch for '" + p.name + "'");
      }
      pe = est.data();
    }
    double* pp = p.value.data();
    double* pm = m.data();
    double* ph = h.data();
    for (int64_t i = 0; i < p.value.numel(); ++i) {
      pm[i] = cfg.beta1 * pm[i] + (1.0 - cfg.beta1) * pg[i];
      if (pe != nullptr) {
        const double est = pe[i] > 0.0 ? pe[i] : 0.0;
        ph[i] = cfg.beta2 * ph[i] + (1.0 - cfg.beta2) * est;
      }
      pp[i] -= decay * pp[i];
      const double denom = std::max(cfg.sophia_rho * ph[i], cfg.eps);
      double r = pm[i] / denom;
      if (r > 1.0) r = 1.0;
      if (r < -1.0) r = -1.0;
      pp[i] -= eta_scaled * r;
    }
  }
}

// Dispatch one step of whichever optimizer the config names.
inline void optimizer_step(std::vector<Param>& params, const GradientMap& grads,
                           OptimizerState& state, const OptimizerConfig& cfg, double eta,
                           const LrScales& scales,
                           const GradientMap* hessian_estimate = nullptr) {
  switch (cfg.kind) {
    case OptimizerKind::kAdamW:
      adamw_step(params, grads, state, cfg, eta, scales);
      return;
    case OptimizerKind::kLion:
      lion_step(params, grads, state, cfg, eta, scales);
      return;
    case OptimizerKind::kSophia:
      sophia_step(params, grads, state, cfg, eta, scales, hessian_estimate);
      return;
  }
}

// Whether step number t (1-based) refreshes the Sophia curvature estimate:
// steps 1, k+1, 2k+1, ... so an estimate exists from the very first step.
inline bool sophia_estimate_due(int64_t t, int64_t k) { return (t - 1) % k == 0; }

// Scale all gradients so the global L2 norm is at most max_norm. Returns
// the factor applied (1 when under the threshold).
inline double global_grad_clip(GradientMap& grads, double max_norm = 1.0) {
  if (max_norm <= 0.0) throw ContractError("global_grad_clip: max_norm must be positive");
  const double norm = global_norm(grads);
  if (norm <= max_norm) return 1.0;
  const double factor = max_norm / norm;
  for (auto& [name, g] : grads) {
    for (double& v : g.values()) v *= factor;
  }
  return factor;
}

}  // namespace optlab
