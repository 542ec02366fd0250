#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "optlab/graph.hpp"
#include "optlab/model.hpp"
#include "optlab/rng.hpp"
#include "optlab/tensor.hpp"

namespace testutil {

using optlab::GradientMap;
using optlab::Param;
using optlab::Rng;
using optlab::Tensor;

inline Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = scale * rng.next_normal();
  return t;
}

// Loss as a plain function of named parameters, for finite differencing.
using LossFn = std::function<double(const std::map<std::string, Tensor>&)>;

// Central-difference gradient oracle, independent of the tape.
inline GradientMap fd_gradients(const LossFn& f, const std::map<std::string, Tensor>& params,
                                double step = 1e-5) {
  GradientMap out;
  std::map<std::string, Tensor> work = params;
  for (auto& [name, tensor] : work) {
    Tensor grad = Tensor::zeros_like(tensor);
    for (int64_t i = 0; i < tensor.numel(); ++i) {
      const double orig = tensor[i];
      tensor[i] = orig + step;
      const double up = f(work);
      tensor[i] = orig - step;
      const double down = f(work);
      tensor[i] = orig;
      grad[i] = (up - down) / (2.0 * step);
    }
    out.emplace(name, std::move(grad));
  }
  return out;
}

struct GradCheckStats {
  double max_rel_err = 0.0;
  double frac_below = 1.0;  // fraction of coordinates below the soft bound
  int64_t coords = 0;
};

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

inline GradCheckStats compare_gradients(const GradientMap& analytic, const GradientMap& fd,
                                        double soft_bound = 1e-4) {
  GradCheckStats stats;
  int64_t below = 0;
  for (const auto& [name, g] : analytic) {
    const Tensor& f = fd.at(name);
    for (int64_t i = 0; i < g.numel(); ++i) {
      const double e = rel_err(g[i], f[i]);
      stats.max_rel_err = std::max(stats.max_rel_err, e);
      if (e < soft_bound) ++below;
      ++stats.coords;
    }
  }
  stats.frac_below = static_cast<double>(below) / static_cast<double>(stats.coords);
  return stats;
}

// Quadratic objective 0.5 theta^T A theta with a dense symmetric A; the
// gradient A theta is computed with a plain loop.
struct QuadraticObjective {
  std::vector<std::vector<double>> a;
  std::vector<Param> theta;

  explicit QuadraticObjective(std::vector<std::vector<double>> matrix,
                              std::vector<double> start = {})
      : a(std::move(matrix)) {
    const int64_t n = static_cast<int64_t>(a.size());
    Tensor t({n});
    for (int64_t i = 0; i < n && i < static_cast<int64_t>(start.size()); ++i) t[i] = start[i];
    theta.push_back({"theta", std::move(t), optlab::MupRole::kHiddenWeight, n, n});
  }

  std::vector<Param>& params() { return theta; }

  GradientMap gradients() {
    const Tensor& t = theta[0].value;
    const int64_t n = t.numel();
    Tensor g({n});
    for (int64_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (int64_t j = 0; j < n; ++j) s += a[i][j] * t[j];
      g[i] = s;
    }
    GradientMap out;
    out.emplace("theta", std::move(g));
    return out;
  }
};

// Softmax regression on one datum: logits = x W, loss = cross-entropy.
// Gradients run through the production tape; the analytic Gauss-Newton
// diagonal used against it is computed in the tests.
struct SoftmaxRegressionObjective {
  Tensor x;  // [1 x D]
  std::vector<int32_t> targets;
  std::vector<Param> weights;

  SoftmaxRegressionObjective(Tensor input, int64_t classes, Tensor w0, int32_t target)
      : x(std::move(input)), targets{target} {
    weights.push_back({"w", std::move(w0), optlab::MupRole::kHiddenWeight, x.cols(), classes});
  }

  std::vector<Param>& params() { return weights; }

  Tensor logits() {
    optlab::Graph g;
    auto w = g.leaf("w", weights[0].value);
    auto xs = g.constant(x);
    return g.value(g.matmul(xs, w));
  }

  GradientMap gradients_for_labels(const std::vector<int32_t>& labels) {
    optlab::Graph g;
    auto w = g.leaf("w", weights[0].value);
    auto xs = g.constant(x);
    return g.backward(g.softmax_cross_entropy(g.matmul(xs, w), labels));
  }

  GradientMap gradients() { return gradients_for_labels(targets); }

  int64_t num_predictions() const { return 1; }
};

}  // namespace testutil
