// Experiment driver: single runs, grid sweeps, width-transfer checks,
// optimizer comparisons, and plot-data emission. Config files are JSON;
// schemas are documented in the README.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "optlab/checkpoint.hpp"
#include "optlab/compare.hpp"
#include "optlab/config_json.hpp"
#include "optlab/coord_check.hpp"
#include "optlab/sweep.hpp"

namespace {

using optlab::json;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitDivergence = 3;

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw optlab::IoError("cannot open config file '" + path + "'");
  json j;
  in >> j;
  return j;
}

// data: {"synthetic": {...}, "n_tokens": N} | {"text": path} | {"cache": path}
optlab::Corpus resolve_corpus(const json& j) {
  if (j.contains("cache") && std::filesystem::exists(j.at("cache").get<std::string>())) {
    return optlab::load_corpus(j.at("cache").get<std::string>());
  }
  optlab::Corpus corpus;
  if (j.contains("synthetic")) {
    auto spec = j.at("synthetic").get<optlab::SyntheticSpec>();
    corpus = optlab::generate_markov(spec, j.at("n_tokens").get<int64_t>());
  } else if (j.contains("text")) {
    corpus = optlab::load_text(j.at("text").get<std::string>());
  } else {
    throw optlab::ConfigError("data: need 'synthetic' + 'n_tokens', 'text', or an existing 'cache'");
  }
  if (j.contains("cache")) optlab::save_corpus(j.at("cache").get<std::string>(), corpus);
  return corpus;
}

int cmd_train(const std::string& config_path, const std::string& record_out,
              const std::string& model_out, const std::string& checkpoint_out,
              const std::string& resume_path, int64_t stop_after) {
  json j = load_json(config_path);
  optlab::Corpus corpus = resolve_corpus(j.at("data"));
  auto cfg = j.at("train").get<optlab::TrainConfig>();

  optlab::TrainResult result;
  optlab::Model model;
  if (!resume_path.empty()) {
    optlab::RunCheckpoint ck = optlab::load_run_checkpoint(resume_path);
    result = optlab::resume_train(ck, corpus, cfg, &model);
  } else {
    auto mc = j.at("model").get<optlab::ModelConfig>();
    auto mup = j.at("mup").get<optlab::MupContext>();
    const uint64_t init_seed = j.value("init_seed", 42ULL);
    model = optlab::build_model(mc, mup, init_seed);
    optlab::RunCheckpoint pause;
    result = optlab::train(model, corpus, cfg, stop_after, checkpoint_out.empty() ? nullptr : &pause);
    if (result.paused && !checkpoint_out.empty()) {
      optlab::save_run_checkpoint(checkpoint_out, pause, cfg.opt);
      std::cout << "paused at step " << pause.steps_done << ", checkpoint written to "
                << checkpoint_out << "\n";
    }
  }

  if (!record_out.empty()) optlab::save_run_record_jsonl(record_out, result.record);
  if (!model_out.empty() && !result.paused) optlab::save_model(model_out, model);

  if (!result.record.steps.empty()) {
    std::cout << "steps: " << result.record.steps.size()
              << "  final train loss: " << result.record.steps.back().train_loss << "\n";
  }
  if (!result.record.evals.empty()) {
    std::cout << "final val loss: " << result.record.evals.back().val_loss << "\n";
  }
  if (result.diverged) {
    std::cerr << "run diverged: " << result.divergence << "\n";
    return kExitDivergence;
  }
  return kExitOk;
}

int cmd_sweep(const std::string& config_path, const std::string& out_dir, int workers) {
  json j = load_json(config_path);
  optlab::Corpus corpus = resolve_corpus(j.at("data"));
  optlab::SweepSpec spec;
  j.at("model").get_to(spec.model);
  j.at("mup").get_to(spec.mup);
  j.at("train").get_to(spec.train);
  spec.model_seed = j.value("model_seed", 42ULL);
  j.at("lr_grid").get_to(spec.lr_grid);
  if (j.contains("output_mult_grid")) j.at("output_mult_grid").get_to(spec.output_mult_grid);
  if (j.contains("rho_grid")) j.at("rho_grid").get_to(spec.rho_grid);
  if (j.contains("repeat_seeds")) j.at("repeat_seeds").get_to(spec.repeat_seeds);

  optlab::SweepResult result = optlab::run_sweep(spec, corpus, out_dir, workers);
  const auto& sel = result.selected_point();
  std::cout << "selected: lr=" << sel.lr << " output_mult=" << sel.output_mult;
  if (!spec.rho_grid.empty()) std::cout << " rho=" << sel.rho;
  std::cout << "  final_window_loss=" << sel.final_window_loss << "\n";
  return kExitOk;
}

int cmd_mup_check(const std::string& config_path, const std::string& out_dir, int workers) {
  json j = load_json(config_path);
  optlab::Corpus corpus = resolve_corpus(j.at("data"));
  auto tpl = j.at("template").get<optlab::TransferTemplate>();
  auto kind = optlab::optimizer_from_string(j.at("optimizer").get<std::string>());
  auto widths = j.at("widths").get<std::vector<int64_t>>();
  auto lr_grid = j.at("lr_grid").get<std::vector<double>>();

  optlab::TransferReport report =
      optlab::mup_transfer_report(kind, widths, lr_grid, tpl, corpus, out_dir, workers);
  std::cout << report.text();

  if (j.value("coord_check", true)) {
    const int64_t steps = j.value("coord_check_steps", int64_t{50});
    const int64_t base = *std::min_element(widths.begin(), widths.end());
    const int64_t target = *std::max_element(widths.begin(), widths.end());
    // the coord check runs at the selected lr of the smallest width, or the
    // grid median when unavailable
    optlab::TrainConfig cfg = tpl.train;
    cfg.opt.kind = kind;
    cfg.schedule.peak_lr = lr_grid[lr_grid.size() / 2];
    auto builder = [&](int64_t w) {
      optlab::ModelConfig mc = optlab::ModelConfig::for_family(
          tpl.family, tpl.n_layers, w / tpl.head_size, tpl.head_size, tpl.vocab, tpl.context);
      optlab::MupContext ctx = optlab::MupContext::for_width(w, base, target, tpl.alpha_output);
      ctx.base_sigma = tpl.base_sigma;
      ctx.enabled = tpl.mup_enabled;
      return optlab::build_model(mc, ctx, tpl.model_seed);
    };
    optlab::CoordCheckReport cc = optlab::coord_check(builder, widths, steps, corpus, cfg);
    std::cout << cc.text();
    if (!out_dir.empty()) {
      std::filesystem::create_directories(out_dir);
      std::ofstream os(out_dir + "/coord_check.txt");
      os << cc.text();
      json rec = json::array();
      for (const auto& r : cc.records) {
        rec.push_back(json{{"width", r.width}, {"layer", r.layer}, {"rms", r.rms}});
      }
      std::ofstream js(out_dir + "/coord_check.json");
      js << json{{"records", rec}, {"flagged", cc.flagged}}.dump(2) << "\n";
    }
  }
  return report.pass ? kExitOk : kExitDivergence;
}

int cmd_compare(const std::string& config_path, const std::string& out_dir, int workers) {
  json j = load_json(config_path);
  auto tpl = j.at("template").get<optlab::CompareTemplate>();
  auto cells = j.at("cells").get<std::vector<optlab::CompareCell>>();
  optlab::Leaderboard board = optlab::compare_optimizers(cells, tpl, out_dir, workers);
  std::cout << board.text();
  if (!out_dir.empty()) {
    for (size_t i = 0; i < board.records.size(); ++i) {
      optlab::emit_loss_curve(board.records[i],
                              out_dir + "/curve_" + board.rows[i].arch + "_" +
                                  board.rows[i].optimizer + "_" + board.rows[i].regime + ".tsv");
    }
  }
  for (const auto& row : board.rows) {
    if (row.status != "ok") return kExitDivergence;
  }
  return kExitOk;
}

int cmd_report(const std::string& kind, const std::string& in_path, const std::string& out_path) {
  if (kind == "loss_curve") {
    optlab::RunRecord rec = optlab::load_run_record_jsonl(in_path);
    optlab::emit_loss_curve(rec, out_path);
  } else if (kind == "sweep_heatmap") {
    json j = load_json(in_path);  // a sweep summary.json
    optlab::SweepResult result;
    j.at("points").get_to(result.points);
    result.selected = j.value("selected", int64_t{-1});
    optlab::emit_sweep_heatmap(result, out_path);
  } else if (kind == "transfer_curves") {
    json j = load_json(in_path);  // a transfer_*.json
    optlab::TransferReport report;
    report.optimizer = optlab::optimizer_from_string(j.at("optimizer").get<std::string>());
    j.at("lr_grid").get_to(report.lr_grid);
    for (const auto& w : j.at("widths")) {
      optlab::TransferWidthResult wr;
      wr.width = w.at("width").get<int64_t>();
      wr.argmin_index = w.at("argmin_index").get<int64_t>();
      for (const auto& l : w.at("losses")) {
        wr.losses.push_back(l.is_null() ? std::numeric_limits<double>::quiet_NaN()
                                        : l.get<double>());
      }
      report.widths.push_back(std::move(wr));
    }
    optlab::emit_transfer_curves(report, out_path);
  } else {
    throw optlab::ConfigError("report: unknown kind '" + kind + "'");
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"optlab: optimizer comparison lab for tiny transformers"};
  app.require_subcommand(1);

  std::string config, out, record_out, model_out, checkpoint_out, resume_path, report_kind, in_path;
  int64_t stop_after = -1;
  int workers = 1;

  auto* train = app.add_subcommand("train", "train one model from a config file");
  train->add_option("--config", config, "run config (json)")->required();
  train->add_option("--record-out", record_out, "run record output (jsonl)");
  train->add_option("--model-out", model_out, "model checkpoint output");
  train->add_option("--checkpoint-out", checkpoint_out, "resumable checkpoint on pause");
  train->add_option("--resume", resume_path, "resume from a run checkpoint");
  train->add_option("--stop-after", stop_after, "pause after N optimizer steps");

  auto* sweep = app.add_subcommand("sweep", "hyperparameter grid search");
  sweep->add_option("--config", config, "sweep config (json)")->required();
  sweep->add_option("--out", out, "result directory")->required();
  sweep->add_option("--workers", workers, "parallel grid points");

  auto* mup = app.add_subcommand("mup-check", "width-transfer report plus coordinate check");
  mup->add_option("--config", config, "mup-check config (json)")->required();
  mup->add_option("--out", out, "result directory")->required();
  mup->add_option("--workers", workers, "parallel grid points");

  auto* compare = app.add_subcommand("compare", "optimizer x architecture leaderboard");
  compare->add_option("--config", config, "compare config (json)")->required();
  compare->add_option("--out", out, "result directory")->required();
  compare->add_option("--workers", workers, "parallel cells");

  auto* report = app.add_subcommand("report", "emit plot data from stored results");
  report->add_option("--kind", report_kind, "loss_curve | sweep_heatmap | transfer_curves")
      ->required();
  report->add_option("--in", in_path, "input record/summary file")->required();
  report->add_option("--out", out, "output file or directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      return cmd_train(config, record_out, model_out, checkpoint_out, resume_path, stop_after);
    }
    if (sweep->parsed()) return cmd_sweep(config, out, workers);
    if (mup->parsed()) return cmd_mup_check(config, out, workers);
    if (compare->parsed()) return cmd_compare(config, out, workers);
    if (report->parsed()) return cmd_report(report_kind, in_path, out);
  } catch (const optlab::SweepError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}
