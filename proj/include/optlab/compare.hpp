#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "optlab/sweep.hpp"

namespace optlab {

// One optimizer x architecture x regime cell with its tuned hyperparameters.
struct CompareCell {
  ModelFamily family = ModelFamily::kGpt;
  OptimizerKind optimizer = OptimizerKind::kAdamW;
  DataRegime regime = DataRegime::kUnique;
  int64_t epochs = 1;
  double lr = 1e-3;
  double output_mult = 1.0;
  double rho = 0.0;  // Sophia only
};

struct CompareTemplate {
  int64_t width = 128;
  int64_t n_layers = 2;
  int64_t head_size = 16;
  int64_t context = 128;
  SyntheticSpec data;            // vocab comes from here
  int64_t corpus_tokens = 500000;  // unique-regime corpus size; repeated uses 1/epochs of it
  int64_t batch_tokens = 8192;
  double validation_fraction = 0.1;
  double warmup_fraction = 0.0125;
  int64_t grad_accum_steps = 1;
  int64_t eval_interval_tokens = 0;
  double base_sigma = 0.073;
  uint64_t model_seed = 42;
  uint64_t shuffle_seed = 42;
  uint64_t estimator_seed = 42;
  double grad_clip_max = 1.0;
};

inline void to_json(json& j, const CompareCell& c) {
  j = json{{"family", family_name(c.family)}, {"optimizer", optimizer_name(c.optimizer)},
           {"regime", to_string(c.regime)},   {"epochs", c.epochs},
           {"lr", c.lr},                      {"output_mult", c.output_mult},
           {"rho", c.rho}};
}

inline void from_json(const json& j, CompareCell& c) {
  c = CompareCell{};
  c.family = family_from_string(j.at("family").get<std::string>());
  c.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
  if (j.contains("regime")) c.regime = regime_from_string(j.at("regime"));
  if (j.contains("epochs")) j.at("epochs").get_to(c.epochs);
  j.at("lr").get_to(c.lr);
  if (j.contains("output_mult")) j.at("output_mult").get_to(c.output_mult);
  if (j.contains("rho")) j.at("rho").get_to(c.rho);
}

inline void to_json(json& j, const CompareTemplate& t) {
  j = json{{"width", t.width},
           {"n_layers", t.n_layers},
           {"head_size", t.head_size},
           {"context", t.context},
           {"data", t.data},
           {"corpus_tokens", t.corpus_tokens},
           {"batch_tokens", t.batch_tokens},
           {"validation_fraction", t.validation_fraction},
           {"warmup_fraction", t.warmup_fraction},
           {"grad_accum_steps", t.grad_accum_steps},
           {"eval_interval_tokens", t.eval_interval_tokens},
           {"base_sigma", t.base_sigma},
           {"model_seed", t.model_seed},
           {"shuffle_seed", t.shuffle_seed},
           {"estimator_seed", t.estimator_seed},
           {"grad_clip_max", t.grad_clip_max}};
}

inline void from_json(const json& j, CompareTemplate& t) {
  t = CompareTemplate{};
  if (j.contains("width")) j.at("width").get_to(t.width);
  if (j.contains("n_layers")) j.at("n_layers").get_to(t.n_layers);
  if (j.contains("head_size")) j.at("head_size").get_to(t.head_size);
  if (j.contains("context")) j.at("context").get_to(t.context);
  if (j.contains("data")) j.at("data").get_to(t.data);
  if (j.contains("corpus_tokens")) j.at("corpus_tokens").get_to(t.corpus_tokens);
  if (j.contains("batch_tokens")) j.at("batch_tokens").get_to(t.batch_tokens);
  if (j.contains("validation_fraction")) j.at("validation_fraction").get_to(t.validation_fraction);
  if (j.contains("warmup_fraction")) j.at("warmup_fraction").get_to(t.warmup_fraction);
  if (j.contains("grad_accum_steps")) j.at("grad_accum_steps").get_to(t.grad_accum_steps);
  if (j.contains("eval_interval_tokens")) {
    j.at("eval_interval_tokens").get_to(t.eval_interval_tokens);
  }
  if (j.contains("base_sigma")) j.at("base_sigma").get_to(t.base_sigma);
  if (j.contains("model_seed")) j.at("model_seed").get_to(t.model_seed);
  if (j.contains("shuffle_seed")) j.at("shuffle_seed").get_to(t.shuffle_seed);
  if (j.contains("estimator_seed")) j.at("estimator_seed").get_to(t.estimator_seed);
  if (j.contains("grad_clip_max")) j.at("grad_clip_max").get_to(t.grad_clip_max);
}

struct LeaderboardRow {
  std::string arch;
  std::string optimizer;
  std::string regime;
  double final_train_loss = 0.0;
  double final_val_loss = 0.0;
  double aulc = 0.0;
  double wall_clock_seconds = 0.0;
  std::string status;
};

inline void to_json(json& j, const LeaderboardRow& r) {
  j = json{{"arch", r.arch},
           {"optimizer", r.optimizer},
           {"regime", r.regime},
           {"final_train_loss", r.final_train_loss},
           {"final_val_loss", r.final_val_loss},
           {"aulc", r.aulc},
           {"wall_clock_seconds", r.wall_clock_seconds},
           {"status", r.status}};
}

struct Leaderboard {
  std::vector<LeaderboardRow> rows;
  std::vector<RunRecord> records;  // parallel to rows, for plot emission

  std::string text() const {
    std::ostringstream os;
    os << std::left << std::setw(8) << "arch" << std::setw(9) << "optim" << std::setw(14)
       << "regime" << std::setw(14) << "train_loss" << std::setw(14) << "val_loss" << std::setw(12)
       << "aulc" << std::setw(10) << "seconds"
       << "status\n";
    for (const auto& r : rows) {
      os << std::left << std::setw(8) << r.arch << std::setw(9) << r.optimizer << std::setw(14)
         << r.regime << std::setw(14) << std::setprecision(6) << r.final_train_loss
         << std::setw(14) << r.final_val_loss << std::setw(12) << r.aulc << std::setw(10)
         << std::setprecision(4) << r.wall_clock_seconds << r.status << "\n";
    }
    return os.str();
  }
};

namespace detail {

inline TrainConfig compare_train_config(const CompareTemplate& tpl, const CompareCell& cell,
                                        const Corpus& corpus) {
  TrainConfig cfg;
  cfg.plan.context_length = tpl.context;
  cfg.plan.batch_tokens = tpl.batch_tokens;
  cfg.plan.regime = cell.regime;
  cfg.plan.epochs = cell.regime == DataRegime::kRepeated ? cell.epochs : 1;
  cfg.plan.shuffle_seed = tpl.shuffle_seed;
  cfg.plan.validation_fraction = tpl.validation_fraction;
  cfg.opt = OptimizerConfig::for_kind(cell.optimizer);
  if (cell.optimizer == OptimizerKind::kSophia && cell.rho > 0.0) cfg.opt.sophia_rho = cell.rho;
  cfg.grad_accum_steps = tpl.grad_accum_steps;
  cfg.eval_interval_tokens = tpl.eval_interval_tokens;
  cfg.estimator_seed = tpl.estimator_seed;
  cfg.grad_clip_max = tpl.grad_clip_max;
  BatchStream stream(corpus, cfg.plan);
  cfg.schedule.total_tokens = stream.total_tokens();
  cfg.schedule.warmup_tokens = std::max<int64_t>(
      1, static_cast<int64_t>(tpl.warmup_fraction * static_cast<double>(cfg.schedule.total_tokens)));
  cfg.schedule.peak_lr = cell.lr;
  return cfg;
}

}  // namespace detail

// Trains every requested cell at the shared budget with its tuned
// hyperparameters and tabulates the outcomes: the desk-scale head-to-head.
// Repeated-regime cells train on a 1/epochs slice of the corpus budget so
// the total token count matches the unique regime.
inline Leaderboard compare_optimizers(const std::vector<CompareCell>& cells,
                                      const CompareTemplate& tpl, const std::string& out_dir = "",
                                      int workers = 1) {
  if (cells.empty()) throw ConfigError("compare_optimizers: no cells");
  Leaderboard board;
  board.rows.resize(cells.size());
  board.records.resize(cells.size());

  // one corpus per distinct regime slice, shared across cells
  std::map<int64_t, Corpus> corpora;
  for (const auto& cell : cells) {
    const int64_t epochs = cell.regime == DataRegime::kRepeated ? cell.epochs : 1;
    if (corpora.find(epochs) == corpora.end()) {
      corpora.emplace(epochs, generate_markov(tpl.data, tpl.corpus_tokens / epochs));
    }
  }

  detail::parallel_for(cells.size(), workers, [&](size_t i) {
    const CompareCell& cell = cells[i];
    const int64_t epochs = cell.regime == DataRegime::kRepeated ? cell.epochs : 1;
    const Corpus& corpus = corpora.at(epochs);
    TrainConfig cfg = detail::compare_train_config(tpl, cell, corpus);
    ModelConfig mc = ModelConfig::for_family(cell.family, tpl.n_layers, tpl.width / tpl.head_size,
                                             tpl.head_size, tpl.data.vocab_size, tpl.context);
    MupContext ctx = MupContext::for_width(tpl.width, tpl.width, tpl.width, cell.output_mult);
    ctx.base_sigma = tpl.base_sigma;
    Model model = build_model(mc, ctx, tpl.model_seed);
    TrainResult r = train(model, corpus, cfg);

    LeaderboardRow row;
    row.arch = family_name(cell.family);
    row.optimizer = optimizer_name(cell.optimizer);
    row.regime = cell.regime == DataRegime::kUnique
                     ? "unique"
                     : "repeated_x" + std::to_string(cell.epochs);
    row.wall_clock_seconds = r.record.wall_clock_seconds;
    if (r.diverged || r.record.steps.empty()) {
      row.status = "diverged";
    } else {
      row.status = "ok";
      row.final_train_loss = final_window_loss(train_loss_series(r.record));
      row.final_val_loss = r.record.evals.back().val_loss;
      row.aulc = aulc(train_loss_series(r.record));
    }
    board.rows[i] = std::move(row);
    board.records[i] = std::move(r.record);
  });

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream os(out_dir + "/leaderboard.jsonl", std::ios::trunc);
    for (const auto& row : board.rows) os << json(row).dump() << '\n';
    std::ofstream txt(out_dir + "/leaderboard.txt", std::ios::trunc);
    txt << board.text();
  }
  return board;
}

// ---------------------------------------------------------------------------
// Plot-data emission: delimited text with a header row, one file per curve.

inline void emit_loss_curve(const RunRecord& rec, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("emit_loss_curve: cannot open '" + path + "'");
  os << "tokens\ttrain_loss\tlr\tgrad_l2\n";
  os << std::setprecision(17);
  for (const auto& s : rec.steps) {
    os << s.tokens_seen << '\t' << s.train_loss << '\t' << s.lr << '\t' << s.grad_l2_norm << '\n';
  }
}

inline void emit_sweep_heatmap(const SweepResult& result, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("emit_sweep_heatmap: cannot open '" + path + "'");
  os << "lr\toutput_mult\trho\tfinal_window_loss\tstatus\n";
  os << std::setprecision(17);
  for (const auto& p : result.points) {
    os << p.lr << '\t' << p.output_mult << '\t' << p.rho << '\t' << p.final_window_loss << '\t'
       << p.status << '\n';
  }
}

// One file per width: rows of (lr, final loss).
inline std::vector<std::string> emit_transfer_curves(const TransferReport& report,
                                                     const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> files;
  for (const auto& w : report.widths) {
    const std::string path = dir + "/transfer_" + std::string(optimizer_name(report.optimizer)) +
                             "_w" + std::to_string(w.width) + ".tsv";
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("emit_transfer_curves: cannot open '" + path + "'");
    os << "lr\tfinal_window_loss\n";
    os << std::setprecision(17);
    for (size_t i = 0; i < report.lr_grid.size(); ++i) {
      os << report.lr_grid[i] << '\t'
         << (i < w.losses.size() ? w.losses[i] : std::numeric_limits<double>::quiet_NaN()) << '\n';
    }
    files.push_back(path);
  }
  return files;
}

}  // namespace optlab
