#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "optlab/checkpoint.hpp"
#include "optlab/config_json.hpp"
#include "optlab/data.hpp"
#include "optlab/metrics.hpp"
#include "optlab/model.hpp"
#include "optlab/train.hpp"

namespace optlab {

struct SweepError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One grid axis point is (learning rate, output multiplier, rho); rho only
// exists for Sophia sweeps.
struct SweepSpec {
  ModelConfig model;
  MupContext mup;
  uint64_t model_seed = 42;
  TrainConfig train;
  std::vector<double> lr_grid;
  std::vector<double> output_mult_grid{1.0};
  std::vector<double> rho_grid;       // must be empty unless the optimizer is Sophia
  std::vector<uint64_t> repeat_seeds;  // empty: one run with model_seed

  std::vector<uint64_t> effective_seeds() const {
    return repeat_seeds.empty() ? std::vector<uint64_t>{model_seed} : repeat_seeds;
  }

  void validate() const {
    model.validate();
    mup.validate();
    train.validate();
    if (lr_grid.empty()) throw ConfigError("SweepSpec: lr_grid must be non-empty");
    if (output_mult_grid.empty()) throw ConfigError("SweepSpec: output_mult_grid must be non-empty");
    if (!rho_grid.empty() && train.opt.kind != OptimizerKind::kSophia) {
      throw ConfigError("SweepSpec: rho grid is only valid for Sophia");
    }
    if (mup.width != model.embedding_size) {
      throw ConfigError("SweepSpec: mup.width must equal the model embedding size");
    }
    for (double lr : lr_grid) {
      if (lr <= 0.0) throw ConfigError("SweepSpec: learning rates must be positive");
    }
  }
};

struct SweepPointResult {
  double lr = 0.0;
  double output_mult = 1.0;
  double rho = 0.0;  // 0 when the axis does not apply
  std::vector<double> seed_losses;
  double final_window_loss = std::numeric_limits<double>::quiet_NaN();
  double aulc = std::numeric_limits<double>::quiet_NaN();
  double wall_clock_seconds = 0.0;
  std::string status;  // "ok" or "diverged"
  std::string digest;

  bool ok() const { return status == "ok"; }
};

struct SweepResult {
  std::vector<SweepPointResult> points;  // canonical (lr, mult, rho) order
  int64_t selected = -1;

  const SweepPointResult& selected_point() const {
    if (selected < 0) throw SweepError("SweepResult: no selected point");
    return points[static_cast<size_t>(selected)];
  }
};

inline void to_json(json& j, const SweepPointResult& p) {
  j = json{{"lr", p.lr},
           {"output_mult", p.output_mult},
           {"rho", p.rho},
           {"seed_losses", p.seed_losses},
           {"final_window_loss", p.final_window_loss},
           {"aulc", p.aulc},
           {"wall_clock_seconds", p.wall_clock_seconds},
           {"status", p.status},
           {"digest", p.digest}};
}

inline void from_json(const json& j, SweepPointResult& p) {
  j.at("lr").get_to(p.lr);
  j.at("output_mult").get_to(p.output_mult);
  j.at("rho").get_to(p.rho);
  j.at("seed_losses").get_to(p.seed_losses);
  p.final_window_loss = j.at("final_window_loss").is_null()
                            ? std::numeric_limits<double>::quiet_NaN()
                            : j.at("final_window_loss").get<double>();
  p.aulc = j.at("aulc").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                  : j.at("aulc").get<double>();
  j.at("wall_clock_seconds").get_to(p.wall_clock_seconds);
  j.at("status").get_to(p.status);
  j.at("digest").get_to(p.digest);
}

namespace detail {

inline std::string hex64(uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline uint64_t sweep_spec_digest(const SweepSpec& spec) {
  Model probe;  // digest the shared parts through the run digest
  probe.config = spec.model;
  probe.mup = spec.mup;
  probe.init_seed = spec.model_seed;
  uint64_t h = run_digest(probe, spec.train);
  for (uint64_t s : spec.effective_seeds()) h = fnv1a(&s, sizeof(s), h);
  return h;
}

inline std::string point_digest(const SweepSpec& spec, double lr, double mult, double rho) {
  uint64_t h = sweep_spec_digest(spec);
  h = fnv1a(&lr, sizeof(lr), h);
  h = fnv1a(&mult, sizeof(mult), h);
  h = fnv1a(&rho, sizeof(rho), h);
  return hex64(h);
}

inline void parallel_for(size_t n, int workers, const std::function<void(size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::vector<std::thread> pool;
  const int count = std::min<int>(workers, static_cast<int>(n));
  pool.reserve(static_cast<size_t>(count));
  std::exception_ptr error;
  std::mutex error_mu;
  for (int w = 0; w < count; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// Divergence rule: non-finite loss anywhere, or a final window that sits
// more than one nat above the initial (pre-training) validation loss.
inline bool run_diverged(const TrainResult& r, double final_window) {
  if (r.diverged) return true;
  if (!std::isfinite(final_window)) return true;
  const double initial = r.record.evals.front().val_loss;
  return final_window > initial + 1.0;
}

}  // namespace detail

// Trains one grid point (all repeat seeds) and reduces to a point result.
inline SweepPointResult run_sweep_point(const SweepSpec& spec, const Corpus& corpus, double lr,
                                        double mult, double rho) {
  SweepPointResult out;
  out.lr = lr;
  out.output_mult = mult;
  out.rho = rho;
  out.digest = detail::point_digest(spec, lr, mult, rho);
  double loss_sum = 0.0, aulc_sum = 0.0, wall = 0.0;
  bool all_ok = true;
  const std::vector<uint64_t> seeds = spec.effective_seeds();
  for (uint64_t seed : seeds) {
    MupContext ctx = spec.mup;
    ctx.alpha_output = mult;
    Model model = build_model(spec.model, ctx, seed);
    TrainConfig cfg = spec.train;
    cfg.schedule.peak_lr = lr;
    if (cfg.opt.kind == OptimizerKind::kSophia && rho > 0.0) cfg.opt.sophia_rho = rho;
    TrainResult r = train(model, corpus, cfg);
    wall += r.record.wall_clock_seconds;
    double fw = std::numeric_limits<double>::quiet_NaN();
    if (!r.record.steps.empty()) fw = final_window_loss(train_loss_series(r.record));
    out.seed_losses.push_back(fw);
    if (detail::run_diverged(r, fw)) {
      all_ok = false;
      continue;
    }
    loss_sum += fw;
    if (r.record.steps.size() >= 2) aulc_sum += aulc(train_loss_series(r.record));
  }
  out.wall_clock_seconds = wall;
  if (all_ok) {
    const double inv = 1.0 / static_cast<double>(seeds.size());
    out.final_window_loss = loss_sum * inv;
    out.aulc = aulc_sum * inv;
    out.status = "ok";
  } else {
    out.status = "diverged";
  }
  return out;
}

// Grid search with final-window-loss argmin selection. Completed points are
// appended to <out_dir>/points.jsonl as they finish, and a killed sweep
// resumes from that ledger without recomputation. The result is a pure
// function of (spec, seeds): canonical point order, deterministic
// tie-breaking on (lr, output_mult, rho).
inline SweepResult run_sweep(const SweepSpec& spec, const Corpus& corpus,
                             const std::string& out_dir = "", int workers = 1) {
  spec.validate();
  corpus.validate();
  std::vector<double> lrs = spec.lr_grid;
  std::vector<double> mults = spec.output_mult_grid;
  std::vector<double> rhos = spec.rho_grid;
  std::sort(lrs.begin(), lrs.end());
  std::sort(mults.begin(), mults.end());
  std::sort(rhos.begin(), rhos.end());
  if (rhos.empty()) rhos.push_back(0.0);

  struct Coord {
    double lr, mult, rho;
  };
  std::vector<Coord> coords;
  for (double lr : lrs) {
    for (double mult : mults) {
      for (double rho : rhos) coords.push_back({lr, mult, rho});
    }
  }

  SweepResult result;
  result.points.resize(coords.size());
  std::vector<bool> done(coords.size(), false);

  std::string ledger_path;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    ledger_path = out_dir + "/points.jsonl";
    if (std::filesystem::exists(ledger_path)) {
      std::ifstream in(ledger_path);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        SweepPointResult p = json::parse(line).get<SweepPointResult>();
        for (size_t i = 0; i < coords.size(); ++i) {
          if (detail::point_digest(spec, coords[i].lr, coords[i].mult, coords[i].rho) == p.digest) {
            result.points[i] = p;
            done[i] = true;
          }
        }
      }
    }
  }

  std::mutex mu;
  std::ofstream ledger;
  if (!ledger_path.empty()) ledger.open(ledger_path, std::ios::app);

  detail::parallel_for(coords.size(), workers, [&](size_t i) {
    if (done[i]) return;
    SweepPointResult p = run_sweep_point(spec, corpus, coords[i].lr, coords[i].mult, coords[i].rho);
    std::lock_guard<std::mutex> lock(mu);
    result.points[i] = p;
    if (ledger.is_open()) {
      ledger << json(p).dump() << '\n';
      ledger.flush();
    }
  });

  // argmin over completed points, ties to the lexicographically smaller axes
  for (size_t i = 0; i < result.points.size(); ++i) {
    const auto& p = result.points[i];
    if (!p.ok()) continue;
    if (result.selected < 0) {
      result.selected = static_cast<int64_t>(i);
      continue;
    }
    const auto& best = result.points[static_cast<size_t>(result.selected)];
    if (p.final_window_loss < best.final_window_loss) result.selected = static_cast<int64_t>(i);
    // equal losses: the canonical enumeration is already (lr, mult, rho)
    // ascending, so keeping the earlier index is the documented tie-break
  }
  if (result.selected < 0) throw SweepError("run_sweep: every grid point failed");

  if (!out_dir.empty()) {
    json summary{{"spec",
                  json{{"model", spec.model},
                       {"mup", spec.mup},
                       {"model_seed", spec.model_seed},
                       {"train", spec.train},
                       {"lr_grid", lrs},
                       {"output_mult_grid", mults},
                       {"rho_grid", spec.rho_grid},
                       {"repeat_seeds", spec.effective_seeds()}}},
                 {"points", result.points},
                 {"selected", result.selected},
                 {"selected_digest", result.selected_point().digest}};
    std::ofstream os(out_dir + "/summary.json", std::ios::trunc);
    os << summary.dump(2) << '\n';
  }
  return result;
}

// ---------------------------------------------------------------------------
// Width-transfer report

struct TransferTemplate {
  ModelFamily family = ModelFamily::kGpt;
  int64_t n_layers = 2;
  int64_t head_size = 16;
  int64_t vocab = 256;
  int64_t context = 128;
  double alpha_output = 1.0;
  double base_sigma = 0.073;
  bool mup_enabled = true;
  uint64_t model_seed = 42;
  TrainConfig train;
};

struct TransferWidthResult {
  int64_t width = 0;
  int64_t argmin_index = -1;  // index into the sorted lr grid, -1 if all failed
  std::vector<double> losses;  // per grid point, NaN for failures
};

struct TransferReport {
  OptimizerKind optimizer = OptimizerKind::kAdamW;
  bool mup_enabled = true;
  std::vector<double> lr_grid;
  std::vector<TransferWidthResult> widths;
  int64_t max_gap = -1;
  bool pass = false;

  std::string text() const {
    std::ostringstream os;
    os << "transfer report: optimizer=" << optimizer_name(optimizer)
       << " mup=" << (mup_enabled ? "on" : "off") << "\n";
    os << std::left << std::setw(8) << "width";
    for (double lr : lr_grid) os << std::setw(13) << lr;
    os << "argmin\n";
    for (const auto& w : widths) {
      os << std::left << std::setw(8) << w.width;
      for (double l : w.losses) {
        if (std::isfinite(l)) {
          os << std::setw(13) << std::setprecision(6) << l;
        } else {
          os << std::setw(13) << "diverged";
        }
      }
      os << w.argmin_index << "\n";
    }
    os << "max argmin gap: " << max_gap << " -> " << (pass ? "PASS" : "FAIL") << "\n";
    return os.str();
  }
};

inline void to_json(json& j, const TransferTemplate& t) {
  j = json{{"family", family_name(t.family)}, {"n_layers", t.n_layers},
           {"head_size", t.head_size},       {"vocab", t.vocab},
           {"context", t.context},           {"alpha_output", t.alpha_output},
           {"base_sigma", t.base_sigma},     {"mup_enabled", t.mup_enabled},
           {"model_seed", t.model_seed},     {"train", t.train}};
}

inline void from_json(const json& j, TransferTemplate& t) {
  t = TransferTemplate{};
  t.family = family_from_string(j.at("family").get<std::string>());
  if (j.contains("n_layers")) j.at("n_layers").get_to(t.n_layers);
  if (j.contains("head_size")) j.at("head_size").get_to(t.head_size);
  if (j.contains("vocab")) j.at("vocab").get_to(t.vocab);
  if (j.contains("context")) j.at("context").get_to(t.context);
  if (j.contains("alpha_output")) j.at("alpha_output").get_to(t.alpha_output);
  if (j.contains("base_sigma")) j.at("base_sigma").get_to(t.base_sigma);
  if (j.contains("mup_enabled")) j.at("mup_enabled").get_to(t.mup_enabled);
  if (j.contains("model_seed")) j.at("model_seed").get_to(t.model_seed);
  j.at("train").get_to(t.train);
}

inline SweepSpec transfer_sweep_spec(const TransferTemplate& tpl, OptimizerKind kind,
                                     int64_t width, int64_t base_width, int64_t target_width,
                                     const std::vector<double>& lr_grid) {
  if (width % tpl.head_size != 0) {
    throw ConfigError("transfer: width must be a multiple of head_size");
  }
  SweepSpec spec;
  spec.model = ModelConfig::for_family(tpl.family, tpl.n_layers, width / tpl.head_size,
                                       tpl.head_size, tpl.vocab, tpl.context);
  spec.mup = MupContext::for_width(width, base_width, target_width, tpl.alpha_output);
  spec.mup.base_sigma = tpl.base_sigma;
  spec.mup.enabled = tpl.mup_enabled;
  spec.model_seed = tpl.model_seed;
  spec.train = tpl.train;
  if (spec.train.opt.kind != kind) spec.train.opt = OptimizerConfig::for_kind(kind);
  spec.lr_grid = lr_grid;
  spec.output_mult_grid = {tpl.alpha_output};
  return spec;
}

// Runs the lr grid at every width and reports the argmin index per width.
// PASS iff every width completed and the largest pairwise argmin-index gap
// is at most 1.
inline TransferReport mup_transfer_report(OptimizerKind kind, const std::vector<int64_t>& widths,
                                          const std::vector<double>& lr_grid,
                                          const TransferTemplate& tpl, const Corpus& corpus,
                                          const std::string& out_dir = "", int workers = 1) {
  if (widths.size() < 2) throw ConfigError("mup_transfer_report: need at least 2 widths");
  if (lr_grid.size() < 3) throw ConfigError("mup_transfer_report: need at least 3 grid points");
  TransferReport report;
  report.optimizer = kind;
  report.mup_enabled = tpl.mup_enabled;
  report.lr_grid = lr_grid;
  std::sort(report.lr_grid.begin(), report.lr_grid.end());
  const int64_t base_width = *std::min_element(widths.begin(), widths.end());
  const int64_t target_width = *std::max_element(widths.begin(), widths.end());

  for (int64_t width : widths) {
    SweepSpec spec = transfer_sweep_spec(tpl, kind, width, base_width, target_width, lr_grid);
    std::string dir;
    if (!out_dir.empty()) {
      dir = out_dir + "/" + optimizer_name(kind) + (tpl.mup_enabled ? "_mup" : "_sp") + "_w" +
            std::to_string(width);
    }
    TransferWidthResult wr;
    wr.width = width;
    try {
      SweepResult sr = run_sweep(spec, corpus, dir, workers);
      for (const auto& p : sr.points) wr.losses.push_back(p.final_window_loss);
      const auto& sel = sr.selected_point();
      for (size_t i = 0; i < report.lr_grid.size(); ++i) {
        if (report.lr_grid[i] == sel.lr) wr.argmin_index = static_cast<int64_t>(i);
      }
    } catch (const SweepError&) {
      wr.losses.assign(report.lr_grid.size(), std::numeric_limits<double>::quiet_NaN());
      wr.argmin_index = -1;
    }
    report.widths.push_back(std::move(wr));
  }

  bool any_undefined = false;
  report.max_gap = 0;
  for (const auto& a : report.widths) {
    if (a.argmin_index < 0) any_undefined = true;
    for (const auto& b : report.widths) {
      if (a.argmin_index >= 0 && b.argmin_index >= 0) {
        report.max_gap = std::max(report.max_gap, std::abs(a.argmin_index - b.argmin_index));
      }
    }
  }
  report.pass = !any_undefined && report.max_gap <= 1;

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    json j{{"optimizer", optimizer_name(kind)},
           {"mup_enabled", tpl.mup_enabled},
           {"lr_grid", report.lr_grid},
           {"max_gap", report.max_gap},
           {"pass", report.pass}};
    j["widths"] = json::array();
    for (const auto& w : report.widths) {
      j["widths"].push_back(json{{"width", w.width},
                                 {"argmin_index", w.argmin_index},
                                 {"losses", w.losses}});
    }
    std::ofstream os(out_dir + "/transfer_" + optimizer_name(kind) +
                     (tpl.mup_enabled ? "_mup" : "_sp") + ".json");
    os << j.dump(2) << '\n';
  }
  return report;
}

}  // namespace optlab
