#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "optlab/errors.hpp"
#include "optlab/train.hpp"

namespace optlab {

struct LossPoint {
  int64_t tokens = 0;
  double loss = 0.0;
};

using LossSeries = std::vector<LossPoint>;

inline LossSeries train_loss_series(const RunRecord& rec) {
  LossSeries s;
  s.reserve(rec.steps.size());
  for (const auto& st : rec.steps) s.push_back({st.tokens_seen, st.train_loss});
  return s;
}

inline void check_strictly_increasing(const LossSeries& series, const char* who) {
  for (size_t i = 1; i < series.size(); ++i) {
    if (series[i].tokens <= series[i - 1].tokens) {
      throw ContractError(std::string(who) + ": token coordinates must be strictly increasing");
    }
  }
}

// Mean loss over the final window_fraction of the series (by point count,
// ceil so the window is never empty).
inline double final_window_loss(const LossSeries& series, double window_fraction = 0.05) {
  if (series.empty()) throw ContractError("final_window_loss: empty series");
  if (window_fraction <= 0.0 || window_fraction > 1.0) {
    throw ContractError("final_window_loss: window_fraction must be in (0, 1]");
  }
  check_strictly_increasing(series, "final_window_loss");
  const size_t n = series.size();
  const size_t window = static_cast<size_t>(
      std::ceil(window_fraction * static_cast<double>(n)));
  double sum = 0.0;
  for (size_t i = n - window; i < n; ++i) sum += series[i].loss;
  return sum / static_cast<double>(window);
}

// Area under the loss curve: trapezoidal integral over the token axis,
// normalized by the token span so runs of different budgets are comparable.
// Units are nats.
inline double aulc(const LossSeries& series) {
  if (series.size() < 2) throw ContractError("aulc: need at least 2 points");
  check_strictly_increasing(series, "aulc");
  double area = 0.0;
  for (size_t i = 1; i < series.size(); ++i) {
    const double dt = static_cast<double>(series[i].tokens - series[i - 1].tokens);
    area += 0.5 * (series[i].loss + series[i - 1].loss) * dt;
  }
  const double span = static_cast<double>(series.back().tokens - series.front().tokens);
  return area / span;
}

struct NormBucket {
  int64_t tokens_end = 0;
  double mean_norm = 0.0;
};

// Mean global gradient L2 norm per token bucket. Bucket i covers steps with
// tokens_seen in (i * bucket_tokens, (i+1) * bucket_tokens].
inline std::vector<NormBucket> grad_norm_summary(const RunRecord& record, int64_t bucket_tokens) {
  if (record.steps.empty()) throw ContractError("grad_norm_summary: record has no steps");
  if (bucket_tokens <= 0) throw ContractError("grad_norm_summary: bucket_tokens must be positive");
  std::vector<NormBucket> out;
  std::vector<int64_t> counts;
  for (const auto& st : record.steps) {
    const int64_t bucket = (st.tokens_seen - 1) / bucket_tokens;
    while (static_cast<int64_t>(out.size()) <= bucket) {
      out.push_back({(static_cast<int64_t>(out.size()) + 1) * bucket_tokens, 0.0});
      counts.push_back(0);
    }
    out[static_cast<size_t>(bucket)].mean_norm += st.grad_l2_norm;
    counts[static_cast<size_t>(bucket)] += 1;
  }
  std::vector<NormBucket> filled;
  for (size_t i = 0; i < out.size(); ++i) {
    if (counts[i] == 0) continue;
    filled.push_back({out[i].tokens_end, out[i].mean_norm / static_cast<double>(counts[i])});
  }
  return filled;
}

}  // namespace optlab
