#include "deca/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "deca/metrics.hpp"

namespace deca {

namespace fs = std::filesystem;

std::string config_hash(const nlohmann::json& doc) {
  const std::string dump = doc.dump();
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (const unsigned char c : dump) {
    hash ^= c;
    hash *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << hash;
  return os.str();
}

namespace {

const std::map<std::string, std::vector<std::string>> kTrainerByTask = {
    {"binary-ranking", {"normal", "wbpr", "tce", "deca", "deca_p", "ensemble"}},
    {"binary-generic", {"normal", "deca", "deca_p"}},
    {"multi-class", {"normal", "itlm", "deca_p", "ensemble"}},
};

constexpr std::uint64_t kPriorSeedOffset = 1000003;
constexpr std::uint64_t kEnsembleSeedOffset = 500009;
constexpr std::uint64_t kTwinSeedOffset = 424243;

DecaConfig deca_config_from(const nlohmann::json& doc, const std::string& task,
                            std::uint64_t run_seed) {
  DecaConfig cfg;
  const nlohmann::json d = doc.value("deca", nlohmann::json::object());
  cfg.alpha = d.value("alpha", 0.5);
  if (task == "multi-class") {
    if (d.contains("c_pairs")) {
      // per-focus-class (C_k1, C_k2) pairs for class-dependent noise
      cfg.c_constants.clear();
      for (const auto& pair : d.at("c_pairs")) {
        cfg.c_constants.push_back({pair.at(0).get<double>(), pair.at(1).get<double>()});
      }
    } else {
      cfg.c_constants = {{d.value("c1", 1.0), d.value("c2", 1.0)}};
    }
    cfg.learn_rate = d.value("learn_rate", 0.01);
    cfg.batch_size = d.value("batch_size", 100);
  } else {
    // Binary focus-class constants: c_dp drives the Denoising-Positive step
    // (focus class 0), c_dn the Denoising-Negative step (focus class 1).
    const double c_dp = d.value("c_dp", 1000.0);
    const double c_dn = d.value("c_dn", 100.0);
    cfg.c_constants = {{c_dp, c_dp}, {c_dn, c_dn}};
    cfg.learn_rate = d.value("learn_rate", 0.001);
    cfg.batch_size = d.value("batch_size", 2048);
  }
  cfg.epochs = d.value("epochs", 50);
  cfg.phase1_epochs = d.value("phase1_epochs", -1);
  cfg.reg_weight = d.value("reg_weight", 0.0);
  cfg.patience = d.value("patience", 10);
  cfg.prob_clamp = d.value("prob_clamp", kProbClamp);
  cfg.seed_main = run_seed;
  cfg.seed_prior = run_seed + kPriorSeedOffset;
  return cfg;
}

SplitSpec split_spec_from(const nlohmann::json& doc) {
  SplitSpec spec;
  const nlohmann::json s = doc.value("split", nlohmann::json::object());
  const std::string mode = s.value("mode", "random");
  if (mode == "random") {
    spec.mode = SplitMode::kRandom;
  } else if (mode == "chronological") {
    spec.mode = SplitMode::kChronological;
  } else {
    throw ConfigError("unknown split mode '" + mode + "'");
  }
  if (s.contains("ratios")) {
    const auto ratios = s.at("ratios").get<std::vector<double>>();
    if (ratios.size() != 3) throw ConfigError("split ratios must have three entries");
    spec.train_ratio = ratios[0];
    spec.valid_ratio = ratios[1];
    spec.test_ratio = ratios[2];
  }
  const std::string rule = s.value("clean_rule", "rating==5");
  if (rule == "hidden-truth") {
    spec.clean_rule = CleanRule::kHiddenTruth;
  } else if (rule.rfind("rating==", 0) == 0) {
    spec.clean_rule = CleanRule::kRatingEquals;
    spec.clean_rating = std::stoi(rule.substr(8));
  } else {
    throw ConfigError("unknown clean rule '" + rule + "'");
  }
  spec.validate();
  return spec;
}

ImplicitDataset build_implicit(const nlohmann::json& doc, std::uint64_t run_seed) {
  const nlohmann::json& ds = doc.at("dataset");
  if (ds.contains("path")) return load_movielens_100k(ds.at("path").get<std::string>());
  const std::string gen = ds.value("generator", "planted");
  if (gen != "planted") throw ConfigError("task needs an implicit dataset, got '" + gen + "'");
  return gen_planted_implicit(ds.value("num_users", 200), ds.value("num_items", 100),
                              ds.value("latent_dim", 8), ds.value("noise_pos", 0.0),
                              ds.value("noise_neg", 0.0), ds.value("seed", run_seed));
}

MultiClassDataset build_multiclass(const nlohmann::json& doc, std::uint64_t run_seed) {
  const nlohmann::json& ds = doc.at("dataset");
  const std::string gen = ds.value("generator", "blobs");
  if (gen != "blobs") throw ConfigError("task needs a feature dataset, got '" + gen + "'");
  return gen_multiclass_blobs(ds.value("num_classes", 4), ds.value("per_class", 500),
                              ds.value("dim", 2), ds.value("spread", 1.0),
                              ds.value("noise_ratio", 0.0), ds.value("seed", run_seed));
}

ModelSpec ranking_model_spec(const nlohmann::json& doc, const ImplicitDataset& data) {
  const nlohmann::json m = doc.value("model", nlohmann::json::object());
  ModelSpec spec;
  spec.kind = model_kind_from_string(m.value("kind", "mf"));
  if (spec.kind != ModelKind::kMF && spec.kind != ModelKind::kGMF) {
    throw ConfigError("ranking target must be mf or gmf");
  }
  spec.num_users = data.num_users;
  spec.num_items = data.num_items;
  spec.latent_dim = m.value("latent_dim", 32);
  spec.init_scale = m.value("init_scale", 0.01);
  return spec;
}

ModelSpec feature_model_spec(const nlohmann::json& doc, const MultiClassDataset& data,
                             bool classifier) {
  const nlohmann::json m = doc.value("model", nlohmann::json::object());
  ModelSpec spec;
  spec.kind = classifier ? ModelKind::kMlpClassifier : ModelKind::kMlpBinary;
  spec.input_dim = data.feature_dim;
  spec.hidden = m.value("hidden", std::vector<int>{32});
  spec.num_classes = classifier ? data.num_classes : 0;
  spec.init_scale = m.value("init_scale", 0.01);
  return spec;
}

// Inference-only mean of two trained models; backward and clone unsupported.
class EnsembleModel final : public DifferentiableModel {
 public:
  EnsembleModel(const DifferentiableModel& a, const DifferentiableModel& b)
      : DifferentiableModel(a.spec()), a_(a), b_(b) {}
  int output_dim() const override { return a_.output_dim(); }
  void forward(const Input& in, std::span<double> out) const override {
    const auto pa = a_.forward_vec(in);
    const auto pb = b_.forward_vec(in);
    double sum = 0.0;
    for (std::size_t j = 0; j < pa.size(); ++j) {
      out[j] = 0.5 * (pa[j] + pb[j]);
      sum += out[j];
    }
    if (pa.size() > 1 && sum > 0.0) {
      for (std::size_t j = 0; j < pa.size(); ++j) out[j] /= sum;
    }
  }
  void backward(const Input&, std::span<const double>, std::span<double>) const override {
    throw ConfigError("ensemble model is inference-only");
  }
  std::unique_ptr<DifferentiableModel> clone() const override {
    throw ConfigError("ensemble model cannot be cloned");
  }

 private:
  const DifferentiableModel& a_;
  const DifferentiableModel& b_;
};

RunReport run_one_ranking(const ExperimentConfig& config, std::uint64_t seed) {
  const ImplicitDataset data = build_implicit(config.raw, seed);
  const SplitResult splits = split(data, split_spec_from(config.raw), seed);
  if (splits.clean_test_empty) {
    std::cerr << "[run] warning: clean test set is empty for seed " << seed << "\n";
  }
  RankingTask task;
  task.train = &splits.train;
  task.valid = &splits.valid;
  task.test = &splits.test;
  task.ks = config.raw.value("metric_ks", std::vector<int>{5, 20});
  task.strategy =
      config.trainer == "wbpr" ? NegStrategy::kWbpr : NegStrategy::kUniform;
  task.eval_candidates = config.raw.value("eval_candidates", 0);

  const ModelSpec f_spec = ranking_model_spec(config.raw, data);
  const DecaConfig cfg = deca_config_from(config.raw, config.task, seed);

  BinaryTrainOutcome outcome;
  if (config.trainer == "normal" || config.trainer == "wbpr") {
    outcome = train_normal(f_spec, task, cfg);
    outcome.report.trainer = config.trainer;
  } else if (config.trainer == "tce") {
    TceSchedule schedule;
    const nlohmann::json t = config.raw.value("tce", nlohmann::json::object());
    schedule.delta_max = t.value("delta_max", 0.2);
    schedule.warmup_epochs = t.value("warmup_epochs", 10);
    outcome = train_tce(f_spec, task, cfg, schedule);
  } else if (config.trainer == "deca") {
    outcome = train_deca(f_spec, task, cfg);
  } else if (config.trainer == "deca_p") {
    outcome = train_deca_p(f_spec, task, cfg);
  } else if (config.trainer == "ensemble") {
    DecaConfig cfg_b = deca_config_from(config.raw, config.task, seed + kEnsembleSeedOffset);
    BinaryTrainOutcome a = train_normal(f_spec, task, cfg);
    BinaryTrainOutcome b = train_normal(f_spec, task, cfg_b);
    EnsembleModel mean(*a.target, *b.target);
    outcome.report = a.report;
    outcome.report.trainer = "ensemble";
    outcome.report.final_metrics.clear();
    const RankingEvalSet test_eval = RankingEvalSet::build(splits.train, splits.test);
    if (!test_eval.users.empty()) {
      const RankingMetrics m = recall_ndcg(mean, test_eval, task.ks);
      for (const int k : task.ks) {
        outcome.report.final_metrics["recall@" + std::to_string(k)] = m.recall_at.at(k);
        outcome.report.final_metrics["ndcg@" + std::to_string(k)] = m.ndcg_at.at(k);
      }
    }
    outcome.target = std::move(a.target);
  } else {
    throw ConfigError("trainer '" + config.trainer + "' not valid for ranking");
  }
  return std::move(outcome.report);
}

RunReport run_one_generic(const ExperimentConfig& config, std::uint64_t seed) {
  MultiClassDataset data = build_multiclass(config.raw, seed);
  if (data.num_classes != 2) throw ConfigError("binary-generic task needs two classes");
  const nlohmann::json s = config.raw.value("split", nlohmann::json::object());
  const auto ratios = s.value("ratios", std::vector<double>{0.8, 0.1, 0.1});
  const MultiClassSplit splits = split_multiclass(data, ratios[0], ratios[1], seed);
  GenericBinaryTask task{&splits.train, &splits.valid, &splits.test};
  const ModelSpec f_spec = feature_model_spec(config.raw, data, /*classifier=*/false);
  const DecaConfig cfg = deca_config_from(config.raw, config.task, seed);

  BinaryTrainOutcome outcome;
  if (config.trainer == "normal") {
    outcome = train_normal_generic(f_spec, task, cfg);
  } else if (config.trainer == "deca") {
    outcome = train_deca_generic(f_spec, task, cfg);
  } else if (config.trainer == "deca_p") {
    outcome = train_deca_p_generic(f_spec, task, cfg);
  } else {
    throw ConfigError("trainer '" + config.trainer + "' not valid for binary-generic");
  }
  return std::move(outcome.report);
}

RunReport run_one_multiclass(const ExperimentConfig& config, std::uint64_t seed) {
  MultiClassDataset data = build_multiclass(config.raw, seed);
  const nlohmann::json s = config.raw.value("split", nlohmann::json::object());
  const auto ratios = s.value("ratios", std::vector<double>{0.7, 0.15, 0.15});
  const MultiClassSplit splits = split_multiclass(data, ratios[0], ratios[1], seed);
  MultiClassTask task{&splits.train, &splits.valid, &splits.test};
  const ModelSpec f_spec = feature_model_spec(config.raw, data, /*classifier=*/true);
  const DecaConfig cfg = deca_config_from(config.raw, config.task, seed);

  MultiTrainOutcome outcome;
  if (config.trainer == "normal") {
    outcome = train_normal_multiclass(f_spec, task, cfg);
  } else if (config.trainer == "itlm") {
    const nlohmann::json i = config.raw.value("itlm", nlohmann::json::object());
    outcome = train_itlm(f_spec, task, cfg, i.value("keep_fraction", 0.8),
                         i.value("rounds", 3));
  } else if (config.trainer == "deca_p") {
    outcome = train_deca_p_multiclass(f_spec, task, cfg);
  } else if (config.trainer == "ensemble") {
    DecaConfig cfg_b = deca_config_from(config.raw, config.task, seed + kEnsembleSeedOffset);
    MultiTrainOutcome a = train_normal_multiclass(f_spec, task, cfg);
    MultiTrainOutcome b = train_normal_multiclass(f_spec, task, cfg_b);
    EnsembleModel mean(*a.target, *b.target);
    outcome.report = a.report;
    outcome.report.trainer = "ensemble";
    outcome.report.final_metrics.clear();
    outcome.report.final_metrics["accuracy"] = accuracy(mean, splits.test, LabelSet::kTrue);
    outcome.target = std::move(a.target);
  } else {
    throw ConfigError("trainer '" + config.trainer + "' not valid for multi-class");
  }
  return std::move(outcome.report);
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(const nlohmann::json& doc) {
  ExperimentConfig config;
  config.raw = doc;
  config.task = doc.value("task", "");
  const auto it = kTrainerByTask.find(config.task);
  if (it == kTrainerByTask.end()) {
    throw ConfigError("unknown task '" + config.task + "'");
  }
  config.trainer = doc.value("trainer", "");
  if (std::find(it->second.begin(), it->second.end(), config.trainer) == it->second.end()) {
    throw ConfigError("trainer '" + config.trainer + "' is not valid for task '" + config.task +
                      "'");
  }
  if (!doc.contains("dataset")) throw ConfigError("config needs a dataset section");
  config.seeds = doc.value("seeds", std::vector<std::uint64_t>{});
  if (config.seeds.empty()) throw ConfigError("config needs a non-empty seed list");

  // Validate hyperparameters and split early, before any training starts.
  deca_config_from(doc, config.task, config.seeds.front())
      .validate(config.task == "multi-class"
                    ? doc.at("dataset").value("num_classes", 4)
                    : 2);
  if (config.task == "binary-ranking") split_spec_from(doc);
  return config;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config parse failure: " + std::string(e.what()));
  }
  return parse(doc);
}

RunArtifacts run_experiment(const ExperimentConfig& config, const std::string& out_dir,
                            std::optional<std::uint64_t> seed_override,
                            const std::string& file_prefix) {
  fs::create_directories(out_dir);
  std::vector<std::uint64_t> seeds =
      seed_override ? std::vector<std::uint64_t>{*seed_override} : config.seeds;

  RunArtifacts artifacts;
  const std::string hash = config_hash(config.raw);
  for (const std::uint64_t seed : seeds) {
    const auto started = std::chrono::steady_clock::now();
    RunReport report;
    if (config.task == "binary-ranking") {
      report = run_one_ranking(config, seed);
    } else if (config.task == "binary-generic") {
      report = run_one_generic(config, seed);
    } else {
      report = run_one_multiclass(config, seed);
    }
    report.config_echo = config.raw;
    report.config_hash = hash;
    report.wall_clock_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    const std::string stem =
        file_prefix + report.trainer + "_seed" + std::to_string(seed);
    const std::string report_path = (fs::path(out_dir) / (stem + ".json")).string();
    std::ofstream(report_path) << report.to_json().dump(2) << "\n";
    std::ofstream csv((fs::path(out_dir) / (stem + "_metrics.csv")).string());
    report.write_metrics_csv(csv);
    std::ofstream table((fs::path(out_dir) / (stem + "_metric_table.csv")).string());
    report.write_metric_table_csv(table);

    artifacts.report_paths.push_back(report_path);
    artifacts.reports.push_back(std::move(report));
  }
  return artifacts;
}

namespace {

// Scalar fields that may carry an array of alternatives in a sweep config.
const std::vector<std::string> kSweepPaths = {
    "/trainer",          "/deca/alpha",       "/deca/c_dp",       "/deca/c_dn",
    "/deca/c1",          "/deca/c2",          "/deca/learn_rate", "/deca/epochs",
    "/deca/reg_weight",  "/deca/batch_size",  "/model/latent_dim",
    "/dataset/noise_pos", "/dataset/noise_neg", "/dataset/noise_ratio",
    "/tce/delta_max",    "/itlm/keep_fraction"};

struct GridCell {
  nlohmann::json doc;
  std::map<std::string, nlohmann::json> assignment;
};

std::vector<GridCell> expand_cells(const nlohmann::json& doc) {
  std::vector<GridCell> cells{{doc, {}}};
  for (const std::string& path : kSweepPaths) {
    const nlohmann::json::json_pointer ptr(path);
    if (!doc.contains(ptr) || !doc.at(ptr).is_array()) continue;
    const nlohmann::json options = doc.at(ptr);
    std::vector<GridCell> next;
    next.reserve(cells.size() * options.size());
    for (const GridCell& cell : cells) {
      for (const nlohmann::json& option : options) {
        GridCell expanded = cell;
        expanded.doc[ptr] = option;
        expanded.assignment[path] = option;
        next.push_back(std::move(expanded));
      }
    }
    cells = std::move(next);
  }
  return cells;
}

}  // namespace

std::vector<ExperimentConfig> expand_grid(const nlohmann::json& doc) {
  std::vector<ExperimentConfig> configs;
  for (const GridCell& cell : expand_cells(doc)) {
    configs.push_back(ExperimentConfig::parse(cell.doc));
  }
  return configs;
}

void run_sweep(const nlohmann::json& doc, const std::string& out_dir, int workers) {
  const std::vector<GridCell> cells = expand_cells(doc);
  std::vector<ExperimentConfig> configs;
  configs.reserve(cells.size());
  for (const GridCell& cell : cells) configs.push_back(ExperimentConfig::parse(cell.doc));

  fs::create_directories(out_dir);
  std::vector<RunArtifacts> results(cells.size());
  std::atomic<std::size_t> cursor{0};
  std::mutex log_mutex;
  auto worker = [&]() {
    while (true) {
      const std::size_t idx = cursor.fetch_add(1);
      if (idx >= cells.size()) return;
      std::ostringstream prefix;
      prefix << "cell" << std::setw(3) << std::setfill('0') << idx << "_";
      results[idx] = run_experiment(configs[idx], out_dir, {}, prefix.str());
      std::lock_guard<std::mutex> lock(log_mutex);
      std::cout << "[sweep] finished cell " << idx << " (" << configs[idx].trainer << ")\n";
    }
  };
  std::vector<std::thread> pool;
  const int n_workers = std::max(1, std::min<int>(workers, static_cast<int>(cells.size())));
  pool.reserve(n_workers);
  for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();

  std::ofstream summary((fs::path(out_dir) / "sweep_summary.csv").string());
  summary << std::setprecision(17) << "cell,trainer,seed,assignment,metric,value\n";
  for (std::size_t idx = 0; idx < cells.size(); ++idx) {
    const nlohmann::json assignment(cells[idx].assignment);
    for (const RunReport& report : results[idx].reports) {
      for (const auto& [metric, value] : report.final_metrics) {
        summary << idx << "," << report.trainer << "," << report.seed << ",\""
                << assignment.dump() << "\"," << metric << "," << value << "\n";
      }
    }
  }

  // Plot rows keyed by the first numeric swept field; series is the trainer
  // plus any other swept assignments.
  std::string x_path;
  for (const std::string& path : kSweepPaths) {
    if (path != "/trainer" && doc.contains(nlohmann::json::json_pointer(path)) &&
        doc.at(nlohmann::json::json_pointer(path)).is_array()) {
      x_path = path;
      break;
    }
  }
  std::ofstream plot((fs::path(out_dir) / "plot.csv").string());
  plot << std::setprecision(17) << "x,series,y\n";
  for (std::size_t idx = 0; idx < cells.size(); ++idx) {
    if (results[idx].reports.empty()) continue;
    const std::string metric =
        results[idx].reports.front().final_metrics.count("accuracy") ? "accuracy" : [&] {
          std::string best;
          for (const auto& [name, _] : results[idx].reports.front().final_metrics) {
            if (name.rfind("recall@", 0) == 0) best = name;
          }
          return best;
        }();
    if (metric.empty()) continue;
    std::vector<double> values;
    for (const RunReport& report : results[idx].reports) {
      const auto it = report.final_metrics.find(metric);
      if (it != report.final_metrics.end()) values.push_back(it->second);
    }
    if (values.empty()) continue;
    std::sort(values.begin(), values.end());
    const double median = values.size() % 2 == 1
                              ? values[values.size() / 2]
                              : 0.5 * (values[values.size() / 2 - 1] + values[values.size() / 2]);
    std::string x = "0";
    std::ostringstream series;
    series << configs[idx].trainer;
    for (const auto& [path, value] : cells[idx].assignment) {
      if (path == x_path) {
        x = value.dump();
      } else if (path != "/trainer") {
        series << " " << path << "=" << value.dump();
      }
    }
    plot << x << "," << series.str() << "," << median << "\n";
  }
}

std::vector<ComparisonRow> compare_runs(const std::vector<RunReport>& reports,
                                        const std::string& baseline_id,
                                        const std::string& challenger_id) {
  if (reports.empty()) throw ConfigError("no reports to compare");
  for (const RunReport& report : reports) {
    for (const char* section : {"dataset", "split", "task"}) {
      if (report.config_echo.value(section, nlohmann::json()) !=
          reports.front().config_echo.value(section, nlohmann::json())) {
        throw ConfigError("reports disagree on '" + std::string(section) +
                          "'; comparison is undefined");
      }
    }
  }

  auto collect = [&](const std::string& id) {
    std::map<std::string, std::vector<double>> by_metric;
    for (const RunReport& report : reports) {
      if (report.trainer != id) continue;
      for (const auto& [metric, value] : report.final_metrics) {
        by_metric[metric].push_back(value);
      }
    }
    return by_metric;
  };
  auto median_of = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v.size() % 2 == 1 ? v[v.size() / 2]
                             : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
  };

  const auto base = collect(baseline_id);
  const auto chal = collect(challenger_id);
  if (base.empty()) throw ConfigError("no reports for baseline '" + baseline_id + "'");
  if (chal.empty()) throw ConfigError("no reports for challenger '" + challenger_id + "'");

  std::vector<std::string> metrics;
  for (const auto& [metric, _] : base) metrics.push_back(metric);
  for (const auto& [metric, _] : chal) {
    if (std::find(metrics.begin(), metrics.end(), metric) == metrics.end()) {
      metrics.push_back(metric);
    }
  }
  std::sort(metrics.begin(), metrics.end());

  std::vector<ComparisonRow> rows;
  for (const std::string& metric : metrics) {
    ComparisonRow row;
    row.metric = metric;
    const auto bit = base.find(metric);
    const auto cit = chal.find(metric);
    if (bit != base.end()) row.baseline = median_of(bit->second);
    if (cit != chal.end()) row.challenger = median_of(cit->second);
    if (row.baseline && row.challenger) {
      row.delta = *row.challenger - *row.baseline;
      row.winner = *row.delta > 0 ? challenger_id : (*row.delta < 0 ? baseline_id : "tie");
    } else {
      row.winner = "gap";
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_comparison_csv(const std::vector<ComparisonRow>& rows, const std::string& path) {
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream os(path);
  os << std::setprecision(17) << "metric,baseline,challenger,delta,winner\n";
  for (const ComparisonRow& row : rows) {
    os << row.metric << ",";
    if (row.baseline) {
      os << *row.baseline;
    } else {
      os << "gap";
    }
    os << ",";
    if (row.challenger) {
      os << *row.challenger;
    } else {
      os << "gap";
    }
    os << ",";
    if (row.delta) {
      os << *row.delta;
    } else {
      os << "gap";
    }
    os << "," << row.winner << "\n";
  }
}

void run_disagreement_study(const ExperimentConfig& config, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream plot((fs::path(out_dir) / "disagreement.csv").string());
  plot << std::setprecision(17) << "x,series,y\n";
  int noisy_greater = 0;

  for (const std::uint64_t seed : config.seeds) {
    double diff_clean = 0.0, diff_noisy = 0.0;
    if (config.task == "binary-ranking") {
      const ImplicitDataset data = build_implicit(config.raw, seed);
      const SplitResult splits = split(data, split_spec_from(config.raw), seed);
      RankingTask task;
      task.train = &splits.train;
      task.valid = &splits.valid;
      task.test = &splits.test;
      task.ks = config.raw.value("metric_ks", std::vector<int>{5, 20});
      const ModelSpec f_spec = ranking_model_spec(config.raw, data);

      DecaConfig cfg_a = deca_config_from(config.raw, config.task, seed);
      DecaConfig cfg_b = deca_config_from(config.raw, config.task, seed + kTwinSeedOffset);
      const auto model_a = train_normal(f_spec, task, cfg_a).target;
      const auto model_b = train_normal(f_spec, task, cfg_b).target;

      std::vector<std::pair<int, int>> clean_pairs, noisy_pairs;
      for (const Interaction& it : splits.train.interactions) {
        (splits.train.true_positive(it.user, it.item) ? clean_pairs : noisy_pairs)
            .emplace_back(it.user, it.item);
      }
      const DisagreementReport report =
          disagreement_binary(*model_a, *model_b, clean_pairs, noisy_pairs);
      diff_clean = report.mean_diff_clean;
      diff_noisy = report.mean_diff_noisy;
    } else {
      MultiClassDataset data = build_multiclass(config.raw, seed);
      const nlohmann::json s = config.raw.value("split", nlohmann::json::object());
      const auto ratios = s.value("ratios", std::vector<double>{0.7, 0.15, 0.15});
      const MultiClassSplit splits = split_multiclass(data, ratios[0], ratios[1], seed);
      MultiClassTask task{&splits.train, &splits.valid, &splits.test};
      const ModelSpec f_spec = feature_model_spec(config.raw, data, /*classifier=*/true);

      DecaConfig cfg_a = deca_config_from(config.raw, config.task, seed);
      DecaConfig cfg_b = deca_config_from(config.raw, config.task, seed + kTwinSeedOffset);
      const auto model_a = train_normal_multiclass(f_spec, task, cfg_a).target;
      const auto model_b = train_normal_multiclass(f_spec, task, cfg_b).target;
      const DisagreementReport report =
          disagreement_multiclass(*model_a, *model_b, splits.train);
      diff_clean = report.mean_diff_clean;
      diff_noisy = report.mean_diff_noisy;
    }
    plot << "clean,seed" << seed << "," << diff_clean << "\n";
    plot << "noisy,seed" << seed << "," << diff_noisy << "\n";
    if (diff_noisy > diff_clean) ++noisy_greater;
    std::cout << "[disagreement] seed " << seed << ": clean=" << diff_clean
              << " noisy=" << diff_noisy << "\n";
  }
  std::cout << "[disagreement] noisy > clean in " << noisy_greater << "/" << config.seeds.size()
            << " repetitions\n";
}

void run_rating_study(const ExperimentConfig& config, const std::string& out_dir) {
  if (config.task != "binary-ranking") {
    throw ConfigError("rating study needs the binary-ranking task");
  }
  fs::create_directories(out_dir);
  std::ofstream plot((fs::path(out_dir) / "rating_buckets.csv").string());
  plot << std::setprecision(17) << "x,series,y\n";

  for (const std::uint64_t seed : config.seeds) {
    const ImplicitDataset data = build_implicit(config.raw, seed);
    const SplitResult splits = split(data, split_spec_from(config.raw), seed);
    RankingTask task;
    task.train = &splits.train;
    task.valid = &splits.valid;
    task.test = &splits.test;
    task.ks = config.raw.value("metric_ks", std::vector<int>{5, 20});
    const ModelSpec f_spec = ranking_model_spec(config.raw, data);
    const DecaConfig cfg = deca_config_from(config.raw, config.task, seed);

    BinaryTrainOutcome outcome;
    DenoiseMode mode;
    if (config.trainer == "deca") {
      outcome = train_deca(f_spec, task, cfg);
      mode = DenoiseMode::kDeca;
    } else if (config.trainer == "deca_p") {
      outcome = train_deca_p(f_spec, task, cfg);
      mode = DenoiseMode::kDecaP;
    } else {
      throw ConfigError("rating study needs trainer deca or deca_p");
    }

    const RatingBucketReport report = rating_bucket_probability(
        *outcome.target, outcome.channel_neg.get(), outcome.channel_pos.get(), splits.train,
        mode);
    std::vector<double> xs, ys;
    for (const auto& [rating, mean] : report.mean_prob) {
      plot << rating << "," << config.trainer << "_seed" << seed << "," << mean << "\n";
      xs.push_back(rating);
      ys.push_back(mean);
    }
    const double rho = xs.size() >= 2 ? spearman(xs, ys) : 0.0;
    std::cout << "[rating-study] seed " << seed << ": spearman(rating, mean prob) = " << rho
              << "\n";
  }
}

std::string run_gen_data(const ExperimentConfig& config, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const std::string path = (fs::path(out_dir) / "dataset.json").string();
  nlohmann::json doc;
  if (config.task == "binary-ranking") {
    doc = build_implicit(config.raw, config.seeds.front()).to_json();
  } else {
    doc = build_multiclass(config.raw, config.seeds.front()).to_json();
  }
  std::ofstream(path) << doc.dump() << "\n";
  return path;
}

}  // namespace deca
