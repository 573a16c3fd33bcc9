#pragma once

#include <optional>
#include <string>
#include <vector>

#include "deca/dataset.hpp"
#include "deca/losses.hpp"
#include "deca/model.hpp"
#include "deca/train.hpp"
#include "json.hpp"

namespace deca {

// A fully validated experiment description. One JSON document determines
// every artifact: dataset, split, model, trainer, hyperparameters, seeds.
struct ExperimentConfig {
  nlohmann::json raw;
  std::string task;     // binary-ranking | binary-generic | multi-class
  std::string trainer;  // normal | wbpr | tce | itlm | ensemble | deca | deca_p
  std::vector<std::uint64_t> seeds;

  static ExperimentConfig parse(const nlohmann::json& doc);
  static ExperimentConfig load(const std::string& path);
};

struct RunArtifacts {
  std::vector<std::string> report_paths;
  std::vector<RunReport> reports;
};

// Executes one training run per seed and persists a JSON report plus a
// metrics CSV per run under `out_dir`.
RunArtifacts run_experiment(const ExperimentConfig& config, const std::string& out_dir,
                            std::optional<std::uint64_t> seed_override = {},
                            const std::string& file_prefix = "");

// Cartesian expansion of array-valued scalar fields (alpha, C constants,
// learning rate, noise levels, ...). Each cell is a complete config.
std::vector<ExperimentConfig> expand_grid(const nlohmann::json& doc);

// Grid runner: every cell runs its full seed list; cells execute in parallel
// up to `workers`. Emits per-cell artifacts plus sweep_summary.csv and
// plot.csv (x, series, y).
void run_sweep(const nlohmann::json& doc, const std::string& out_dir, int workers);

struct ComparisonRow {
  std::string metric;
  std::optional<double> baseline;
  std::optional<double> challenger;
  std::optional<double> delta;
  std::string winner;  // baseline id, challenger id, "tie" or "gap"
};

// Per-metric median over seeds for two trainer ids drawn from the same
// experiment family. Reports must share dataset, split and task sections.
std::vector<ComparisonRow> compare_runs(const std::vector<RunReport>& reports,
                                        const std::string& baseline_id,
                                        const std::string& challenger_id);

void write_comparison_csv(const std::vector<ComparisonRow>& rows, const std::string& path);

// Cross-model agreement study: trains two seeds of the same model per listed
// seed and writes plot rows (x=clean|noisy, series, y=mean difference).
void run_disagreement_study(const ExperimentConfig& config, const std::string& out_dir);

// Rating-bucket study of the real-positive probability for a trained
// denoiser; writes plot rows (x=rating, series, y=mean probability).
void run_rating_study(const ExperimentConfig& config, const std::string& out_dir);

// Materializes the configured dataset to dataset.json.
std::string run_gen_data(const ExperimentConfig& config, const std::string& out_dir);

std::string config_hash(const nlohmann::json& doc);

}  // namespace deca
