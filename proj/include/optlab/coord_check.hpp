#pragma once

#include <cstdint>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "optlab/data.hpp"
#include "optlab/model.hpp"
#include "optlab/train.hpp"

namespace optlab {

struct CoordCheckEntry {
  int64_t width = 0;
  std::string layer;
  double rms = 0.0;
};

// Per-(width, layer) activation scales after a short training run, plus the
// layers whose scale drifts monotonically with width beyond the flag ratio.
// A flagged layer is the width-scaling violation signal.
struct CoordCheckReport {
  std::vector<CoordCheckEntry> records;
  std::vector<std::string> flagged;
  double flag_ratio = 2.0;

  std::string text() const {
    std::ostringstream os;
    os << std::left << std::setw(10) << "width" << std::setw(12) << "layer"
       << "activation_rms\n";
    for (const auto& r : records) {
      os << std::left << std::setw(10) << r.width << std::setw(12) << r.layer << std::setprecision(6)
         << r.rms << "\n";
    }
    if (flagged.empty()) {
      os << "no flagged layers\n";
    } else {
      os << "flagged:";
      for (const auto& l : flagged) os << " " << l;
      os << "\n";
    }
    return os.str();
  }
};

// Trains a model per width for `steps` optimizer steps on the given corpus,
// then measures per-layer activation RMS on the first planned batch. A
// layer is flagged when its scale moves strictly monotonically across the
// width sweep and the extreme ratio exceeds flag_ratio.
inline CoordCheckReport coord_check(const std::function<Model(int64_t)>& builder,
                                    const std::vector<int64_t>& widths, int64_t steps,
                                    const Corpus& corpus, const TrainConfig& cfg_template,
                                    double flag_ratio = 2.0) {
  if (widths.empty()) throw ContractError("coord_check: need at least one width");
  CoordCheckReport report;
  report.flag_ratio = flag_ratio;
  std::map<std::string, std::vector<double>> by_layer;
  std::vector<std::string> layer_order;
  for (int64_t w : widths) {
    Model model = builder(w);
    TrainConfig cfg = cfg_template;
    cfg.max_steps = steps;
    train(model, corpus, cfg);
    ActivationStats stats;
    BatchStream stream(corpus, cfg.plan);
    TokenBatch probe = stream.batch(0);
    forward(model, probe, &stats);
    for (const auto& [layer, rms] : stats.rms) {
      report.records.push_back({w, layer, rms});
      if (by_layer.find(layer) == by_layer.end()) layer_order.push_back(layer);
      by_layer[layer].push_back(rms);
    }
  }
  if (widths.size() < 2) return report;  // nothing to compare
  for (const auto& layer : layer_order) {
    const std::vector<double>& v = by_layer[layer];
    if (v.size() != widths.size()) continue;
    bool increasing = true, decreasing = true;
    double lo = v[0], hi = v[0];
    for (size_t i = 1; i < v.size(); ++i) {
      increasing = increasing && v[i] > v[i - 1];
      decreasing = decreasing && v[i] < v[i - 1];
      lo = std::min(lo, v[i]);
      hi = std::max(hi, v[i]);
    }
    if ((increasing || decreasing) && hi > flag_ratio * lo) report.flagged.push_back(layer);
  }
  return report;
}

}  // namespace optlab
