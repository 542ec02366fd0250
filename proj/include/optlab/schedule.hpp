#pragma once

#include <cstdint>

#include "optlab/errors.hpp"

namespace optlab {

// Linear warmup from zero to the peak over warmup_tokens, then linear decay
// to final_fraction * peak at total_tokens. Continuous, piecewise linear,
// maximal exactly at the warmup boundary.
struct Schedule {
  double peak_lr = 1e-3;
  int64_t warmup_tokens = 1;
  int64_t total_tokens = 2;
  double final_fraction = 0.1;

  void validate() const {
    if (peak_lr < 0.0) throw ConfigError("Schedule: peak_lr must be >= 0");
    if (warmup_tokens <= 0 || warmup_tokens >= total_tokens) {
      throw ConfigError("Schedule: need 0 < warmup_tokens < total_tokens");
    }
    if (final_fraction <= 0.0 || final_fraction > 1.0) {
      throw ConfigError("Schedule: final_fraction must be in (0, 1]");
    }
  }

  double lr_at(int64_t tokens_seen) const {
    if (tokens_seen < 0 || tokens_seen > total_tokens) {
      throw ContractError("Schedule::lr_at: tokens_seen outside [0, total_tokens]");
    }
    if (tokens_seen < warmup_tokens) {
      return peak_lr * static_cast<double>(tokens_seen) / static_cast<double>(warmup_tokens);
    }
    const double progress = static_cast<double>(tokens_seen - warmup_tokens) /
                            static_cast<double>(total_tokens - warmup_tokens);
    return peak_lr * (1.0 - (1.0 - final_fraction) * progress);
  }
};

}  // namespace optlab
