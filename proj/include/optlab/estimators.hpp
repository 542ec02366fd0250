#pragma once

#include <concepts>
#include <cstdint>
#include <vector>

#include "optlab/errors.hpp"
#include "optlab/graph.hpp"
#include "optlab/model.hpp"
#include "optlab/rng.hpp"

namespace optlab {

enum class EstimatorKind { kHutchinson, kGnb };

// Anything with named parameters and a gradient oracle. The estimators only
// ever touch parameters through this surface, so test problems (quadratics,
// softmax regression) plug in next to full models.
template <typename T>
concept GradientObjective = requires(T& obj) {
  { obj.params() } -> std::same_as<std::vector<Param>&>;
  { obj.gradients() } -> std::same_as<GradientMap>;
};

// Objectives whose loss is a softmax cross-entropy over logits, as required
// by the label-resampling estimator.
template <typename T>
concept CategoricalObjective =
    GradientObjective<T> && requires(T& obj, const std::vector<int32_t>& labels) {
      { obj.logits() } -> std::same_as<Tensor>;
      { obj.gradients_for_labels(labels) } -> std::same_as<GradientMap>;
      { obj.num_predictions() } -> std::convertible_to<int64_t>;
    };

// A model plus one batch, viewed as a differentiable objective.
struct ModelBatchObjective {
  Model* model;
  const TokenBatch* batch;

  std::vector<Param>& params() { return model->params; }
  GradientMap gradients() { return loss_and_gradients(*model, *batch).second; }
  Tensor logits() {
    LossGraph lg = loss_graph(*model, *batch);
    return lg.graph.value(lg.logits);
  }
  GradientMap gradients_for_labels(const std::vector<int32_t>& labels) {
    Graph g;
    auto fwd = detail::build_forward(g, *model, *batch);
    NodeId loss = g.softmax_cross_entropy(fwd.logits, labels);
    return g.backward(loss);
  }
  int64_t num_predictions() const { return batch->tokens(); }
};

// Hessian-vector product by central differences of the gradient:
// Hv ~ (grad(theta + s v) - grad(theta - s v)) / (2 s). Parameters are
// restored bit-exactly afterwards.
template <GradientObjective Obj>
GradientMap hessian_vector_product(Obj& obj, const GradientMap& v, double fd_step) {
  if (fd_step <= 0.0) throw ContractError("hessian_vector_product: fd_step must be positive");
  std::vector<Param>& params = obj.params();
  std::vector<Tensor> saved;
  saved.reserve(params.size());
  for (const auto& p : params) {
    auto it = v.find(p.name);
    if (it == v.end() || !it->second.same_shape(p.value)) {
      throw ShapeError("hessian_vector_product: direction missing or mis-shaped for '" + p.name +
                       "'");
    }
    saved.push_back(p.value);
  }
  auto shift = [&](double s) {
    for (size_t i = 0; i < params.size(); ++i) {
      const Tensor& dir = v.at(params[i].name);
      double* pp = params[i].value.data();
      const double* porig = saved[i].data();
      const double* pv = dir.data();
      for (int64_t j = 0; j < params[i].value.numel(); ++j) pp[j] = porig[j] + s * pv[j];
    }
  };
  shift(fd_step);
  GradientMap g_plus = obj.gradients();
  shift(-fd_step);
  GradientMap g_minus = obj.gradients();
  for (size_t i = 0; i < params.size(); ++i) params[i].value = saved[i];

  GradientMap hv;
  const double inv = 1.0 / (2.0 * fd_step);
  for (auto& [name, gp] : g_plus) {
    const Tensor& gm = g_minus.at(name);
    Tensor out = Tensor::zeros_like(gp);
    double* po = out.data();
    const double* pp = gp.data();
    const double* pm = gm.data();
    for (int64_t j = 0; j < out.numel(); ++j) po[j] = (pp[j] - pm[j]) * inv;
    if (!out.all_finite()) {
      throw NumericError("hessian_vector_product: non-finite result for parameter '" + name + "'");
    }
    hv.emplace(name, std::move(out));
  }
  return hv;
}

// Diagonal Hessian estimate: average of u * (H u) over Rademacher probes.
template <GradientObjective Obj>
GradientMap hutchinson_diag(Obj& obj, int64_t probes, uint64_t seed, double fd_step = 1e-4) {
  if (probes < 1) throw ContractError("hutchinson_diag: probes must be >= 1");
  GradientMap acc;
  for (const auto& p : obj.params()) acc.emplace(p.name, Tensor::zeros_like(p.value));
  for (int64_t i = 0; i < probes; ++i) {
    Rng rng(Rng::mix(seed, static_cast<uint64_t>(i)));
    GradientMap u;
    for (const auto& p : obj.params()) {
      Tensor t = Tensor::zeros_like(p.value);
      for (double& x : t.values()) x = rng.next_rademacher();
      u.emplace(p.name, std::move(t));
    }
    GradientMap hv = hessian_vector_product(obj, u, fd_step);
    for (auto& [name, a] : acc) {
      const double* pu = u.at(name).data();
      const double* ph = hv.at(name).data();
      double* pa = a.data();
      for (int64_t j = 0; j < a.numel(); ++j) pa[j] += pu[j] * ph[j];
    }
  }
  const double inv = 1.0 / static_cast<double>(probes);
  for (auto& [name, a] : acc) {
    for (double& x : a.values()) x *= inv;
  }
  return acc;
}

// Gauss-Newton-Bartlett estimate: resample labels from the model's own
// softmax, take the gradient of the mean loss on those labels, square it,
// and scale by the number of predictions.
template <CategoricalObjective Obj>
GradientMap gnb_diag(Obj& obj, uint64_t seed) {
  Tensor logits = obj.logits();
  const int64_t rows = logits.rows(), classes = logits.cols();
  Rng rng(seed);
  std::vector<int32_t> labels(static_cast<size_t>(rows));
  std::vector<double> probs(static_cast<size_t>(classes));
  const double* pl = logits.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = pl + r * classes;
    double mx = row[0];
    for (int64_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double denom = 0.0;
    for (int64_t c = 0; c < classes; ++c) {
      probs[static_cast<size_t>(c)] = std::exp(row[c] - mx);
      denom += probs[static_cast<size_t>(c)];
    }
    double u = rng.next_double() * denom;
    double cum = 0.0;
    int32_t pick = static_cast<int32_t>(classes - 1);
    for (int64_t c = 0; c < classes; ++c) {
      cum += probs[static_cast<size_t>(c)];
      if (u < cum) {
        pick = static_cast<int32_t>(c);
        break;
      }
    }
    labels[static_cast<size_t>(r)] = pick;
  }
  GradientMap g = obj.gradients_for_labels(labels);
  const double scale = static_cast<double>(obj.num_predictions());
  for (auto& [name, t] : g) {
    for (double& x : t.values()) x = scale * x * x;
  }
  return g;
}

// Estimator dispatch used by the training loop on Sophia estimate steps.
template <CategoricalObjective Obj>
GradientMap sophia_estimate(Obj& obj, EstimatorKind kind, int64_t hutchinson_probes, uint64_t seed,
                            double fd_step) {
  if (kind == EstimatorKind::kGnb) return gnb_diag(obj, seed);
  return hutchinson_diag(obj, hutchinson_probes, seed, fd_step);
}

}  // namespace optlab
