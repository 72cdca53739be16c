// Command-line harness: gen-data, train, adapt-study, control-eval, report.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mako/dataset.hpp"
#include "mako/error.hpp"
#include "mako/experiment.hpp"
#include "mako/synthetic.hpp"
#include "mako/trainer.hpp"

namespace fs = std::filesystem;
using namespace mako;

namespace {

struct CommonOptions {
  std::string config;
  std::string scale;
  std::string run_dir;
  std::string mode;
  std::int64_t seed = -1;
  bool force = false;
};

struct Run {
  ExperimentConfig config;
  RunLayout layout;
};

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path.string());
  out << text;
}

// Resolves the configuration and prepares the run directory. The config file
// is copied verbatim; the effective settings land next to it.
Run open_run(const CommonOptions& opt) {
  const std::string raw = read_text(opt.config);
  Run run;
  run.config = config_from_json(raw, opt.scale);
  if (opt.seed >= 0) run.config.seed = static_cast<std::uint64_t>(opt.seed);
  if (!opt.mode.empty()) run.config.mode = parse_adapt_mode(opt.mode);

  const std::string name = std::string(to_string(run.config.system)) + "-" +
                           std::string(to_string(run.config.scale)) + "-seed" +
                           std::to_string(run.config.seed);
  run.layout.root = opt.run_dir.empty() ? fs::path("runs") / name : fs::path(opt.run_dir);
  run.layout.create();

  const std::string resolved = config_to_json(run.config) + "\n";
  auto settings = [](const std::string& text) {
    auto j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_object()) j.erase("mode");
    return j;
  };
  if (fs::exists(run.layout.resolved_config()) && !opt.force &&
      settings(read_text(run.layout.resolved_config())) != settings(resolved)) {
    throw ArgumentError("run directory " + run.layout.root.string() +
                        " was created with different settings; use --force to overwrite");
  }
  write_text(run.layout.config(), raw);
  write_text(run.layout.resolved_config(), resolved);
  return run;
}

void guard(const fs::path& output, bool force) {
  if (fs::exists(output) && !force) {
    throw ArgumentError(output.string() + " already exists; use --force to overwrite");
  }
}

MetaDataset ensure_dataset(const Run& run, bool force) {
  const auto& path = run.layout.dataset_file();
  if (fs::exists(path) && !force) return load_meta_dataset(path);
  std::cout << "generating " << run.config.num_tasks << " sub-datasets for "
            << to_string(run.config.system) << "\n";
  MetaDataset meta = generate_meta_dataset(run.config.system, data_config(run.config));
  std::vector<std::string> warnings;
  meta.norm = compute_norm_stats(meta, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  save_meta_dataset(meta, path);
  write_manifest(meta, run.layout.manifest_file());
  int regenerated = 0;
  for (const auto& sub : meta.subdatasets) regenerated += sub.regenerated;
  std::cout << "wrote " << path.string() << " (" << regenerated << " diverged episodes regenerated)\n";
  return meta;
}

int cmd_gen_data(const CommonOptions& opt) {
  Run run = open_run(opt);
  guard(run.layout.dataset_file(), opt.force);
  ensure_dataset(run, true);
  return 0;
}

int cmd_train(const CommonOptions& opt) {
  Run run = open_run(opt);
  guard(run.layout.model_file(), opt.force);
  const MetaDataset meta = normalized(ensure_dataset(run, false));
  TrainConfig tc = train_config(run.config);
  tc.on_epoch = [](int epoch, double tr, double va, double te) {
    std::printf("epoch %4d  train %.4e  validation %.4e  test %.4e\n", epoch, tr, va, te);
    std::fflush(stdout);
  };
  const TrainResult result = train(meta, tc);
  save_model(result.model, run.layout.model_file());
  result.report.write_csv(run.layout.curve_file());
  std::cout << "best validation " << result.report.best_validation << " at epoch "
            << result.report.best_epoch << "\n";
  if (result.report.aborted) {
    std::cerr << "training aborted: " << result.report.abort_reason << "\n";
    return 3;
  }
  return 0;
}

int cmd_adapt_study(const CommonOptions& opt, bool synthetic, int plant_steps) {
  Run run = open_run(opt);
  const auto& traces = run.layout.traces();
  if (synthetic) {
    for (AdaptMode mode : {AdaptMode::Nominal, AdaptMode::Robust}) {
      const fs::path out = traces / ("adapt_synthetic_" + std::string(to_string(mode)) + ".csv");
      guard(out, opt.force);
      const AdaptStudyResult r = run_adaptation_study(synthetic_study_config(run.config, mode));
      write_adapt_trace(r.trace, out);
      std::cout << to_string(mode) << ": V " << r.initial_lyapunov << " -> "
                << r.trace.back().lyapunov << ", final |x_resid| " << r.trace.back().x_resid_norm
                << "\n";
    }
    return 0;
  }
  if (!fs::exists(run.layout.model_file())) {
    throw ArgumentError("no trained model in " + run.layout.root.string() + "; run train first");
  }
  const MakoModel model = load_model(run.layout.model_file());
  const fs::path out = traces / ("adapt_" + std::string(to_string(run.config.system)) + "_" +
                                 std::string(to_string(run.config.mode)) + ".csv");
  guard(out, opt.force);
  const auto trace = plant_adaptation_study(model, run.config, run.config.mode, plant_steps);
  write_adapt_trace(trace, out);
  std::cout << "wrote " << out.string() << "\n";
  return 0;
}

int cmd_control_eval(const CommonOptions& opt) {
  Run run = open_run(opt);
  if (!fs::exists(run.layout.model_file())) {
    throw ArgumentError("no trained model in " + run.layout.root.string() + "; run train first");
  }
  const MakoModel model = load_model(run.layout.model_file());
  std::vector<AdaptMode> modes{AdaptMode::Nominal, AdaptMode::Robust};
  if (!opt.mode.empty()) modes = {run.config.mode};

  std::vector<GridReport> reports;
  for (AdaptMode mode : modes) {
    const std::string tag(to_string(mode));
    const fs::path grid_file = run.layout.report() / ("grid_" + tag + ".csv");
    guard(grid_file, opt.force);
    std::vector<EpisodeRecord> episodes;
    GridReport report = evaluate_param_grid(model, run.config, mode, &episodes);
    for (std::size_t i = 0; i < episodes.size(); ++i) {
      write_episode_csv(episodes[i],
                        run.layout.traces() / ("episode_" + tag + "_" + std::to_string(i) + ".csv"));
    }
    write_grid_csv(report, grid_file);
    std::cout << tag << ": stabilized " << report.stabilized_count << "/" << report.entries.size()
              << ", mean cumulative tracking error " << report.mean_cumulative_error
              << ", mean solve time " << report.mean_solve_seconds << " s\n";
    reports.push_back(std::move(report));
  }
  if (reports.size() == 2) {
    write_pairwise_csv(reports[0], reports[1], run.layout.report() / "grid_pairwise.csv");
  }
  return 0;
}

// Collects per-step tracking errors of every episode into one wide table per
// mode and writes a JSON summary of what the run contains.
int cmd_report(const CommonOptions& opt) {
  Run run = open_run(opt);
  const auto& L = run.layout;
  nlohmann::json summary;
  summary["system"] = std::string(to_string(run.config.system));
  summary["scale"] = std::string(to_string(run.config.scale));
  summary["seed"] = run.config.seed;

  if (fs::exists(L.curve_file())) {
    fs::copy_file(L.curve_file(), L.report() / "prediction_error_curve.csv",
                  fs::copy_options::overwrite_existing);
    summary["prediction_error_curve"] = "prediction_error_curve.csv";
  }
  for (const char* mode : {"nominal", "robust"}) {
    std::vector<std::vector<std::string>> columns;
    for (int i = 0;; ++i) {
      const fs::path trace = L.traces() / ("episode_" + std::string(mode) + "_" + std::to_string(i) + ".csv");
      if (!fs::exists(trace)) break;
      std::ifstream in(trace);
      std::string line;
      std::vector<std::string> col;
      int err_col = -1;
      while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
        if (err_col < 0) {
          for (std::size_t c = 0; c < cells.size(); ++c) {
            if (cells[c] == "tracking_error") err_col = static_cast<int>(c);
          }
          continue;
        }
        col.push_back(cells.at(static_cast<std::size_t>(err_col)));
      }
      columns.push_back(std::move(col));
    }
    if (columns.empty()) continue;
    const fs::path out_path = L.report() / ("tracking_error_" + std::string(mode) + ".csv");
    std::ofstream out(out_path);
    out << "# mako-tracking-error v1\nk";
    std::size_t rows = 0;
    for (std::size_t c = 0; c < columns.size(); ++c) {
      out << ",episode" << c;
      rows = std::max(rows, columns[c].size());
    }
    out << '\n';
    for (std::size_t r = 0; r < rows; ++r) {
      out << r;
      for (const auto& col : columns) out << ',' << (r < col.size() ? col[r] : "");
      out << '\n';
    }
    summary[std::string("tracking_error_") + mode] = out_path.filename().string();
  }
  for (const char* name : {"grid_nominal.csv", "grid_robust.csv", "grid_pairwise.csv"}) {
    if (fs::exists(L.report() / name)) summary[name] = true;
  }
  for (const char* name : {"adapt_synthetic_nominal.csv", "adapt_synthetic_robust.csv"}) {
    if (fs::exists(L.traces() / name)) {
      fs::copy_file(L.traces() / name, L.report() / name, fs::copy_options::overwrite_existing);
      summary[name] = true;
    }
  }
  write_text(L.report() / "summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  return 0;
}

void add_common(CLI::App* sub, CommonOptions& opt) {
  sub->add_option("--config", opt.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  sub->add_option("--scale", opt.scale, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  sub->add_option("--seed", opt.seed, "master seed");
  sub->add_option("--mode", opt.mode, "nominal or robust")->check(CLI::IsMember({"nominal", "robust"}));
  sub->add_option("--run-dir", opt.run_dir, "output directory (default runs/<system>-<scale>-seed<seed>)");
  sub->add_flag("--force", opt.force, "overwrite existing outputs");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-learned Koopman models with adaptive MPC"};
  app.require_subcommand(1);
  CommonOptions opt;
  bool synthetic = false;
  int plant_steps = 2000;

  auto* gen = app.add_subcommand("gen-data", "generate the meta-dataset");
  auto* tr = app.add_subcommand("train", "meta-train the lifting and operators");
  auto* ad = app.add_subcommand("adapt-study", "online adaptation convergence study");
  auto* ce = app.add_subcommand("control-eval", "closed-loop evaluation over the parameter grid");
  auto* rp = app.add_subcommand("report", "collect plot-ready CSVs");
  for (auto* sub : {gen, tr, ad, ce, rp}) add_common(sub, opt);
  ad->add_flag("--synthetic", synthetic, "use the lifted-linear plant with known operators");
  ad->add_option("--steps", plant_steps, "steps for the plant study");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) return cmd_gen_data(opt);
    if (*tr) return cmd_train(opt);
    if (*ad) return cmd_adapt_study(opt, synthetic, plant_steps);
    if (*ce) return cmd_control_eval(opt);
    if (*rp) return cmd_report(opt);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
