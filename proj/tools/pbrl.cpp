// Command-line front end: run, sweep, evaluate.
//
//   pbrl run --config configs/pebble.cfg --seed 3 --out runs/pebble/seed_3
//   pbrl run --config configs/human.cfg --out runs/human --host 127.0.0.1 --port 8080 --ui web/dist
//   pbrl sweep --grid configs/sweep.grid --out runs
//   pbrl evaluate --runs runs

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "pbrl/config.hpp"
#include "pbrl/labeling_service.hpp"
#include "pbrl/orchestrator.hpp"

namespace fs = std::filesystem;

namespace {

void print_result(const std::string& name, const pbrl::RunResult& r) {
  std::cout << name << ": episodes=" << r.eval_scores.size() << " labels=" << r.labels << " sessions=" << r.sessions
            << " final_distance=" << r.summary.at("final_window_distance").get<double>()
            << " runtime=" << r.summary.at("runtime_seconds").get<double>() << "s\n";
}

int run_command(const std::string& config_path, std::optional<std::uint64_t> seed, const std::string& out,
                const std::string& host, int port, const std::string& ui_dir) {
  pbrl::RunConfig cfg = pbrl::config_from_map(pbrl::read_config_file(config_path));
  if (seed) cfg.seed = *seed;
  if (!cfg.human_teacher) {
    print_result(out, pbrl::run_experiment(cfg, fs::path(out)));
    return 0;
  }
  pbrl::service::SessionStore store;
  pbrl::service::LabelingServer server(store, ui_dir);
  const int bound = server.start(host, port);
  std::cout << "labelling service on http://" << host << ":" << bound << "/\n" << std::flush;
  const auto timeout = std::chrono::milliseconds(static_cast<long>(cfg.human_timeout_seconds * 1000.0));
  pbrl::service::HumanTeacher teacher(store, timeout);
  pbrl::ExperimentRunner runner(cfg, &teacher);
  runner.set_checkpoint_dir(fs::path(out));
  print_result(out, runner.run(fs::path(out)));
  return 0;
}

int sweep_command(const std::string& grid_path, const std::string& out) {
  std::vector<std::uint64_t> seeds;
  const auto points = pbrl::expand_grid(pbrl::read_config_file(grid_path), seeds);
  for (const auto& point : points) {
    pbrl::RunConfig cfg = pbrl::config_from_map(point.config);
    if (!point.label.empty() && cfg.reward_source == pbrl::RewardSource::learned)
      cfg.group += "[" + point.label + "]";
    for (const std::uint64_t s : seeds) {
      cfg.seed = s;
      const fs::path dir = fs::path(out) / cfg.group / ("seed_" + std::to_string(s));
      print_result(dir.string(), pbrl::run_experiment(cfg, dir));
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference-based RL lab"};
  app.require_subcommand(1);

  std::string config_path, out = "runs/out", host = "127.0.0.1", ui_dir;
  std::optional<std::uint64_t> seed;
  int port = 8080;
  auto* run = app.add_subcommand("run", "Run one experiment");
  run->add_option("--config", config_path, "Key/value config file")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--out", out, "Output directory");
  run->add_option("--host", host, "Labelling service host (teacher = human)");
  run->add_option("--port", port, "Labelling service port (teacher = human)");
  run->add_option("--ui", ui_dir, "Directory with the built labelling UI");

  std::string grid_path, sweep_out = "runs";
  auto* sweep = app.add_subcommand("sweep", "Run every grid combination for every seed");
  sweep->add_option("--grid", grid_path, "Grid file; comma-separated values are axes")->required()->check(CLI::ExistingFile);
  sweep->add_option("--out", sweep_out, "Root output directory");

  std::string runs_dir;
  auto* evaluate = app.add_subcommand("evaluate", "Normalized-return table over a runs directory");
  evaluate->add_option("--runs", runs_dir, "Directory holding run outputs")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return run_command(config_path, seed, out, host, port, ui_dir);
    if (*sweep) return sweep_command(grid_path, sweep_out);
    if (*evaluate) {
      std::cout << pbrl::evaluate_runs(runs_dir);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
