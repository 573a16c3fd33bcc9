#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "deca/experiment.hpp"

namespace {

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const deca::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DeCA denoising toolkit: cross-model-agreement training experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "runs";
  int workers = 1;
  std::optional<std::uint64_t> seed_override;

  auto add_common = [&](CLI::App* cmd, bool with_workers) {
    cmd->add_option("--config", config_path, "experiment config JSON")->required();
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed-override", seed_override, "run a single seed instead of the list");
    if (with_workers) cmd->add_option("--workers", workers, "parallel grid cells");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "materialize the configured dataset as JSON");
  add_common(gen, false);

  CLI::App* train = app.add_subcommand("train", "run the configured trainer over all seeds");
  add_common(train, false);

  CLI::App* sweep = app.add_subcommand("sweep", "expand config grids and run every cell");
  add_common(sweep, true);

  CLI::App* compare = app.add_subcommand("compare", "median-over-seeds comparison table");
  std::vector<std::string> report_paths;
  std::string baseline_id, challenger_id;
  compare->add_option("reports", report_paths, "run report JSON files")->required();
  compare->add_option("--baseline", baseline_id, "baseline trainer id")->required();
  compare->add_option("--challenger", challenger_id, "challenger trainer id")->required();
  compare->add_option("--out", out_dir, "output directory");

  CLI::App* diag = app.add_subcommand("diagnose-disagreement",
                                      "cross-seed prediction differences on clean vs noisy data");
  add_common(diag, false);

  CLI::App* rating = app.add_subcommand("rating-study",
                                        "real-positive probability per rating bucket");
  add_common(rating, false);

  CLI11_PARSE(app, argc, argv);

  auto load_config = [&] {
    auto config = deca::ExperimentConfig::load(config_path);
    if (seed_override) config.seeds = {*seed_override};
    return config;
  };

  if (gen->parsed()) {
    return run_guarded([&] {
      std::cout << deca::run_gen_data(load_config(), out_dir) << "\n";
      return 0;
    });
  }
  if (train->parsed()) {
    return run_guarded([&] {
      const auto artifacts = deca::run_experiment(load_config(), out_dir);
      for (const auto& path : artifacts.report_paths) std::cout << path << "\n";
      return 0;
    });
  }
  if (sweep->parsed()) {
    return run_guarded([&] {
      std::ifstream in(config_path);
      if (!in) throw deca::ConfigError("cannot open config file " + config_path);
      nlohmann::json doc;
      in >> doc;
      deca::run_sweep(doc, out_dir, workers);
      return 0;
    });
  }
  if (compare->parsed()) {
    return run_guarded([&] {
      std::vector<deca::RunReport> reports;
      for (const auto& path : report_paths) {
        std::ifstream in(path);
        if (!in) throw deca::ConfigError("cannot open report " + path);
        nlohmann::json doc;
        in >> doc;
        reports.push_back(deca::RunReport::from_json(doc));
      }
      const auto rows = deca::compare_runs(reports, baseline_id, challenger_id);
      std::cout << std::setprecision(6) << std::left << std::setw(16) << "metric" << std::setw(12)
                << baseline_id << std::setw(12) << challenger_id << std::setw(12) << "delta"
                << "winner\n";
      for (const auto& row : rows) {
        std::cout << std::setw(16) << row.metric;
        auto put = [](const std::optional<double>& v) {
          std::ostringstream os;
          if (v) {
            os << std::setprecision(6) << *v;
          } else {
            os << "gap";
          }
          return os.str();
        };
        std::cout << std::setw(12) << put(row.baseline) << std::setw(12) << put(row.challenger)
                  << std::setw(12) << put(row.delta) << row.winner << "\n";
      }
      deca::write_comparison_csv(rows, out_dir + "/comparison.csv");
      return 0;
    });
  }
  if (diag->parsed()) {
    return run_guarded([&] {
      deca::run_disagreement_study(load_config(), out_dir);
      return 0;
    });
  }
  if (rating->parsed()) {
    return run_guarded([&] {
      deca::run_rating_study(load_config(), out_dir);
      return 0;
    });
  }
  return 0;
}
