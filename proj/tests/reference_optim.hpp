#pragma once

// Scalar-loop reference implementations of the three update rules, written
// directly from the algorithm listings and kept free of any project
// headers. The production steps are required to match these bitwise.

#include <cmath>
#include <cstdint>
#include <vector>

namespace refopt {

struct RefState {
  int64_t t = 0;
  std::vector<double> m;
  std::vector<double> v_or_h;

  static RefState init(size_t n, bool second_buffer) {
    RefState s;
    s.m.assign(n, 0.0);
    if (second_buffer) s.v_or_h.assign(n, 0.0);
    return s;
  }
};

inline void adamw(std::vector<double>& theta, const std::vector<double>& g, RefState& s,
                  double beta1, double beta2, double eps, double lambda, double eta,
                  double scale = 1.0, double wd_scale = 1.0, bool literal_eps = false) {
  s.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(s.t));
  const double eta_scaled = eta * scale;
  const double decay = lambda * wd_scale;
  for (size_t i = 0; i < theta.size(); ++i) {
    s.m[i] = beta1 * s.m[i] + (1.0 - beta1) * g[i];
    s.v_or_h[i] = beta2 * s.v_or_h[i] + (1.0 - beta2) * g[i] * g[i];
    const double m_hat = s.m[i] / bc1;
    const double v_hat = s.v_or_h[i] / bc2;
    const double denom = literal_eps ? std::sqrt(v_hat + eps) : std::sqrt(v_hat) + eps;
    theta[i] -= eta_scaled * (m_hat / denom + decay * theta[i]);
  }
}

inline void lion(std::vector<double>& theta, const std::vector<double>& g, RefState& s,
                 double beta1, double beta2, double lambda, double eta, double scale = 1.0,
                 double wd_scale = 1.0, bool literal_m_update = false) {
  s.t += 1;
  const double eta_scaled = eta * scale;
  const double decay = lambda * wd_scale;
  for (size_t i = 0; i < theta.size(); ++i) {
    const double c = beta1 * s.m[i] + (1.0 - beta1) * g[i];
    const double sign = (c > 0.0) ? 1.0 : (c < 0.0 ? -1.0 : 0.0);
    theta[i] -= eta_scaled * (sign + decay * theta[i]);
    s.m[i] = literal_m_update ? s.m[i] + (1.0 - beta2) * g[i]
                              : beta2 * s.m[i] + (1.0 - beta2) * g[i];
  }
}

// estimate == nullptr on steps that retain the previous curvature.
inline void sophia(std::vector<double>& theta, const std::vector<double>& g, RefState& s,
                   double beta1, double beta2, double eps, double lambda, double rho, double eta,
                   const std::vector<double>* estimate, double scale = 1.0, double wd_scale = 1.0) {
  s.t += 1;
  const double eta_scaled = eta * scale;
  const double decay = eta * lambda * wd_scale;
  for (size_t i = 0; i < theta.size(); ++i) {
    s.m[i] = beta1 * s.m[i] + (1.0 - beta1) * g[i];
    if (estimate != nullptr) {
      const double est = (*estimate)[i] > 0.0 ? (*estimate)[i] : 0.0;
      s.v_or_h[i] = beta2 * s.v_or_h[i] + (1.0 - beta2) * est;
    }
    theta[i] -= decay * theta[i];
    const double denom = std::max(rho * s.v_or_h[i], eps);
    double r = s.m[i] / denom;
    if (r > 1.0) r = 1.0;
    if (r < -1.0) r = -1.0;
    theta[i] -= eta_scaled * r;
  }
}

}  // namespace refopt
