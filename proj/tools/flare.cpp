// Command-line entry point: train single runs, execute ordering suites,
// aggregate logs into SVG learning curves, and roll out saved checkpoints.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "flare/harness/harness.hpp"

namespace fs = std::filesystem;
using namespace flare;
using Scalar = float;

namespace {

std::string output_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("FLARE_OUTPUT_ROOT"); env && *env) return env;
  return "flare_out";
}

void print_progress(const std::string& line) {
  std::printf("%s\n", line.c_str());
  std::fflush(stdout);
}

int cmd_train(const std::string& config_path, int seed, const std::string& out,
              const std::string& root_flag) {
  harness::RunConfig cfg = harness::load_config(config_path);
  cfg.validate();
  harness::RunLog log;
  std::string dir;
  if (!out.empty()) {
    fs::create_directories(out);
    const auto t0 = std::chrono::steady_clock::now();
    log = harness::run_training<Scalar>(cfg, seed, out);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    harness::RunConfig mine = cfg;
    mine.seeds = {seed};
    harness::write_meta(out + "/meta.json", harness::run_hash(cfg, seed),
                        fs::path(config_path).stem().string(), seed, cfg.steps, wall,
                        mine.serialize());
    dir = out;
  } else {
    const std::string root = output_root(root_flag);
    const harness::RunHandle h =
        harness::ensure_run(cfg, seed, root, fs::path(config_path).stem().string(),
                            print_progress);
    log = harness::read_csv(h.dir + "/log.csv");
    dir = h.dir;
  }
  std::printf("run directory: %s\n", dir.c_str());
  if (!log.rows.empty())
    std::printf("final evaluation: %.4f (+/- %.4f) at step %lld\n",
                log.rows.back().eval_return_mean, log.rows.back().eval_return_std,
                static_cast<long long>(log.rows.back().env_step));
  return 0;
}

int cmd_suite(const std::string& name, const std::vector<int>& seeds, int jobs,
              const std::string& root_flag) {
  const std::string root = output_root(root_flag);
  const harness::SuiteResult res =
      harness::run_suite(name, seeds, root, jobs, print_progress);
  std::printf("\nsuite %s: %d executed, %d cached\n", res.name.c_str(),
              res.runs_executed, res.runs_cached);
  for (const harness::VariantResult& v : res.variants)
    std::printf("  %-24s final %9.4f  auc %12.1f  seeds %zu/%d\n", v.label.c_str(),
                v.final_score, v.auc, v.seeds.size(), v.seeds_expected);
  for (const harness::Verdict& v : res.verdicts)
    std::printf("%s %s: %s\n", v.pass ? "PASS" : "FAIL", v.name.c_str(),
                v.detail.c_str());
  for (const std::string& msg : res.failures) std::printf("ERROR %s\n", msg.c_str());
  std::printf("reports: %s/suites/%s\n", root.c_str(), res.name.c_str());
  if (!res.complete) std::printf("RESULT INCOMPLETE\n");
  return res.all_pass() ? 0 : 1;
}

/// Label for one run log: the meta sidecar's label when present, otherwise
/// the most informative directory component of its path.
std::string label_for(const fs::path& csv) {
  const std::string from_meta =
      harness::read_meta_field((csv.parent_path() / "meta.json").string(), "label");
  if (!from_meta.empty()) return from_meta;
  fs::path dir = csv.parent_path();
  std::string name = dir.filename().string();
  if (name.rfind("seed", 0) == 0 && dir.has_parent_path())
    name = dir.parent_path().filename().string();
  return name.empty() ? csv.stem().string() : name;
}

int cmd_plot(const std::vector<std::string>& inputs, const std::string& out,
             const std::string& title, const std::string& x_label,
             const std::string& y_label) {
  std::vector<fs::path> files;
  for (const std::string& in : inputs) {
    if (fs::is_directory(in)) {
      for (const auto& entry : fs::recursive_directory_iterator(in))
        if (entry.is_regular_file() && entry.path().filename() == "log.csv")
          files.push_back(entry.path());
    } else {
      files.push_back(in);
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("plot: no input logs found");

  // Group seeds of the same variant, preserving first-seen label order.
  std::vector<std::string> order;
  std::map<std::string, std::vector<harness::RunLog>> groups;
  for (const fs::path& f : files) {
    const std::string label = label_for(f);
    if (!groups.count(label)) order.push_back(label);
    groups[label].push_back(harness::read_csv(f.string()));
  }
  std::vector<harness::PlotSeries> series;
  for (const std::string& label : order)
    series.push_back({label, harness::aggregate_eval(groups[label])});

  harness::PlotOptions opt;
  opt.title = title;
  if (!x_label.empty()) opt.x_label = x_label;
  if (!y_label.empty()) opt.y_label = y_label;
  harness::write_svg(series, opt, out);
  std::printf("wrote %s (%zu series, %zu logs)\n", out.c_str(), series.size(),
              files.size());
  return 0;
}

int cmd_eval(const std::string& checkpoint, int episodes, int seed) {
  harness::RestoredRun<Scalar> run = harness::restore_run<Scalar>(checkpoint);
  harness::RunConfig cfg = run.cfg;
  if (episodes > 0) cfg.eval_episodes = episodes;
  const uint64_t base = derive_stream(static_cast<uint64_t>(seed), harness::kStreamEval);
  const harness::EvalResult res =
      harness::evaluate(run.learner, *run.environment, cfg, base, 0);
  std::printf("checkpoint: %s (trained to step %lld, seed %d)\n", checkpoint.c_str(),
              static_cast<long long>(run.env_step), run.seed);
  std::printf("episodes: %zu  mean %.4f  std %.4f\n", res.returns.size(), res.mean,
              res.dev);
  for (size_t i = 0; i < res.returns.size(); ++i)
    std::printf("  episode %2zu: %.4f\n", i, res.returns[i]);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "flare: frame-wise latent flow reinforcement learning runs and reports"};
  app.require_subcommand(1);

  std::string config_path, out_dir, root_flag;
  int seed = 0;
  auto* train = app.add_subcommand("train", "Train one run from a config file");
  train->add_option("--config", config_path, "run configuration file")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--seed", seed, "training seed (default 0)");
  train->add_option("--out", out_dir,
                    "write results to this directory instead of the cached layout");
  train->add_option("--root", root_flag,
                    "output root (default $FLARE_OUTPUT_ROOT or flare_out)");

  std::string suite_name;
  std::vector<int> suite_seeds;
  int jobs = 1;
  std::string suite_root;
  auto* suite = app.add_subcommand("suite", "Run an ordering suite and grade it");
  std::string names;
  for (const std::string& s : harness::suite_names())
    names += (names.empty() ? "" : ", ") + s;
  suite->add_option("--name", suite_name, "suite name (" + names + ")")->required();
  suite->add_option("--seeds", suite_seeds,
                    "override the preset seed list (space separated)");
  suite->add_option("--jobs", jobs, "parallel runs (default 1)")
      ->check(CLI::PositiveNumber);
  suite->add_option("--root", suite_root,
                    "output root (default $FLARE_OUTPUT_ROOT or flare_out)");

  std::vector<std::string> plot_inputs;
  std::string plot_out, plot_title, plot_x, plot_y;
  auto* plot = app.add_subcommand(
      "plot", "Aggregate run logs into an SVG learning-curve figure");
  plot->add_option("--input", plot_inputs,
                   "log.csv files or directories to scan for them")
      ->required();
  plot->add_option("--out", plot_out, "output SVG path")->required();
  plot->add_option("--title", plot_title, "figure title");
  plot->add_option("--x-label", plot_x, "x axis label");
  plot->add_option("--y-label", plot_y, "y axis label");

  std::string ck_path;
  int eval_episodes = 0, eval_seed = 12345;
  auto* evalc = app.add_subcommand("eval", "Roll out a saved checkpoint");
  evalc->add_option("--checkpoint", ck_path, "checkpoint file (final.ck)")
      ->required()
      ->check(CLI::ExistingFile);
  evalc->add_option("--episodes", eval_episodes,
                    "episode count (default: the config's eval_episodes)");
  evalc->add_option("--seed", eval_seed, "evaluation seed (default 12345)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (train->parsed()) return cmd_train(config_path, seed, out_dir, root_flag);
    if (suite->parsed()) return cmd_suite(suite_name, suite_seeds, jobs, suite_root);
    if (plot->parsed())
      return cmd_plot(plot_inputs, plot_out, plot_title, plot_x, plot_y);
    if (evalc->parsed()) return cmd_eval(ck_path, eval_episodes, eval_seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
