#include "deca/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <ostream>

namespace deca {

AdamOptimizer::AdamOptimizer(std::size_t num_params, double learn_rate)
    : lr_(learn_rate), m_(num_params, 0.0), v_(num_params, 0.0) {}

void AdamOptimizer::step(std::span<double> params, std::span<const double> grad) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + eps_);
  }
}

nlohmann::json RunReport::to_json() const {
  nlohmann::json epochs_json = nlohmann::json::array();
  for (const EpochRecord& e : epochs) {
    epochs_json.push_back(
        {{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_metrics", e.val_metrics}});
  }
  return {{"schema_version", std::to_string(schema_major) + "." + std::to_string(schema_minor)},
          {"trainer", trainer},
          {"seed", seed},
          {"config", config_echo},
          {"config_hash", config_hash},
          {"epochs", std::move(epochs_json)},
          {"final_metrics", final_metrics},
          {"wall_clock_sec", wall_clock_sec}};
}

RunReport RunReport::from_json(const nlohmann::json& j) {
  RunReport r;
  const std::string version = j.at("schema_version").get<std::string>();
  const auto dot = version.find('.');
  r.schema_major = std::stoi(version.substr(0, dot));
  r.schema_minor = dot == std::string::npos ? 0 : std::stoi(version.substr(dot + 1));
  if (r.schema_major != 1) {
    throw DataError("unsupported report schema version " + version);
  }
  r.trainer = j.at("trainer").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config_echo = j.at("config");
  r.config_hash = j.at("config_hash").get<std::string>();
  for (const auto& e : j.at("epochs")) {
    EpochRecord rec;
    rec.epoch = e.at("epoch").get<int>();
    rec.train_loss = e.at("train_loss").get<double>();
    rec.val_metrics = e.at("val_metrics").get<std::map<std::string, double>>();
    r.epochs.push_back(std::move(rec));
  }
  r.final_metrics = j.at("final_metrics").get<std::map<std::string, double>>();
  r.wall_clock_sec = j.value("wall_clock_sec", 0.0);
  return r;
}

void RunReport::write_metric_table_csv(std::ostream& os) const {
  os << "metric,K,split,value\n";
  os << std::setprecision(17);
  for (const auto& [name, value] : final_metrics) {
    const auto at = name.find('@');
    if (at == std::string::npos) {
      os << name << ",,test," << value << "\n";
    } else {
      os << name.substr(0, at) << "," << name.substr(at + 1) << ",test," << value << "\n";
    }
  }
}

void RunReport::write_metrics_csv(std::ostream& os) const {
  os << "epoch,split,metric,value\n";
  os << std::setprecision(17);
  for (const EpochRecord& e : epochs) {
    os << e.epoch << ",train,loss," << e.train_loss << "\n";
    for (const auto& [name, value] : e.val_metrics) {
      os << e.epoch << ",valid," << name << "," << value << "\n";
    }
  }
  for (const auto& [name, value] : final_metrics) {
    os << "-1,test," << name << "," << value << "\n";
  }
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_finite(double loss, const std::string& trainer) {
  if (!std::isfinite(loss)) {
    throw DataError(trainer + " diverged: non-finite loss");
  }
}

// L2 penalty on the target parameters, added to loss and gradient in place.
double add_regularization(const DifferentiableModel& model, std::vector<double>& grad,
                          double reg_weight) {
  if (reg_weight == 0.0) return 0.0;
  double sq = 0.0;
  const auto params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    sq += params[i] * params[i];
    grad[i] += 2.0 * reg_weight * params[i];
  }
  return reg_weight * sq;
}

struct Snapshot {
  std::vector<std::pair<DifferentiableModel*, std::vector<double>>> saved;

  void capture(std::initializer_list<DifferentiableModel*> models) {
    saved.clear();
    for (DifferentiableModel* m : models) {
      if (m != nullptr) {
        saved.emplace_back(m, std::vector<double>(m->params().begin(), m->params().end()));
      }
    }
  }
  void restore() {
    for (auto& [model, params] : saved) {
      std::copy(params.begin(), params.end(), model->params().begin());
    }
  }
};

// patience > 0: stop after that many evaluations without improvement and
// return the best snapshot. patience == 0: never stop, still return the best
// snapshot. patience < 0: never stop and keep the final model (plain
// training, used by the memorization studies).
struct EarlyStopper {
  double best = kNegInf;
  int stale = 0;
  int patience;

  explicit EarlyStopper(int patience_evals) : patience(patience_evals) {}
  // Returns true when the snapshot should be refreshed.
  bool observe(double metric) {
    if (metric > best) {
      best = metric;
      stale = 0;
      return true;
    }
    ++stale;
    return patience < 0;  // final-model mode tracks every epoch
  }
  bool exhausted() const { return patience > 0 && stale >= patience; }
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  return seed + stream * 0x9E3779B97F4A7C15ull;
}

// --- Ranking plumbing ---------------------------------------------------------

std::vector<std::pair<int, int>> positive_pairs(const ImplicitDataset& data) {
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(data.interactions.size());
  for (const Interaction& it : data.interactions) pairs.emplace_back(it.user, it.item);
  return pairs;
}

ModelSpec pair_channel_spec(const ModelSpec& f_spec, std::uint64_t seed) {
  ModelSpec s;
  s.kind = ModelKind::kHPairwise;
  s.num_users = f_spec.num_users;
  s.num_items = f_spec.num_items;
  s.latent_dim = f_spec.latent_dim;
  s.init_scale = f_spec.init_scale;
  s.seed = seed;
  return s;
}

struct RankingEvalSets {
  RankingEvalSet valid;
  RankingEvalSet test;
};

RankingEvalSets build_eval_sets(const RankingTask& task) {
  RankingEvalSets sets;
  sets.valid = RankingEvalSet::build(*task.train, *task.valid, task.eval_candidates);
  sets.test = RankingEvalSet::build(*task.train, *task.test, task.eval_candidates);
  return sets;
}

int validation_k(std::span<const int> ks) {
  return ks.empty() ? 20 : *std::max_element(ks.begin(), ks.end());
}

double ranking_val_metric(const DifferentiableModel& f, const RankingEvalSet& valid,
                          std::span<const int> ks) {
  if (valid.users.empty()) return 0.0;
  const int k = validation_k(ks);
  return recall_ndcg(f, valid, {&k, 1}).recall_at.at(k);
}

void fill_final_ranking_metrics(const DifferentiableModel& f, const RankingEvalSet& test,
                                std::span<const int> ks, RunReport& report) {
  if (test.users.empty()) return;
  const RankingMetrics m = recall_ndcg(f, test, ks);
  for (const int k : ks) {
    report.final_metrics["recall@" + std::to_string(k)] = m.recall_at.at(k);
    report.final_metrics["ndcg@" + std::to_string(k)] = m.ndcg_at.at(k);
  }
}

// Shared BCE engine for Normal and T-CE on ranking data. `delta(epoch)` gives
// the fraction of highest-loss positives whose gradient is dropped.
template <typename DeltaFn>
BinaryTrainOutcome run_bce_ranking(const ModelSpec& f_spec, const RankingTask& task,
                                   const DecaConfig& cfg, const std::string& trainer_name,
                                   DeltaFn delta) {
  cfg.validate(2);
  ModelSpec spec = f_spec;
  spec.seed = cfg.seed_main;
  auto f = build_model(spec);
  AdamOptimizer opt(f->num_params(), cfg.learn_rate);

  const RankingEvalSets evals = build_eval_sets(task);
  auto positives = positive_pairs(*task.train);
  Rng rng(mix_seed(cfg.seed_main, 1));

  RunReport report;
  report.trainer = trainer_name;
  report.seed = cfg.seed_main;
  EarlyStopper stopper(cfg.patience);
  Snapshot best;
  best.capture({f.get()});

  std::vector<double> grad(f->num_params());
  std::vector<std::size_t> order;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(positives.begin(), positives.end(), rng);
    const double drop_fraction = delta(epoch);
    double epoch_loss = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < positives.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(positives.size(), start + cfg.batch_size);
      std::span<const std::pair<int, int>> batch_pos(positives.data() + start, end - start);
      const auto negatives = sample_negatives(*task.train, batch_pos, task.strategy, rng);

      // Per-example BCE on positives (candidates for dropping) and negatives.
      std::vector<double> pos_loss(batch_pos.size());
      std::vector<double> pos_prob(batch_pos.size());
      for (std::size_t i = 0; i < batch_pos.size(); ++i) {
        Input in{batch_pos[i].first, batch_pos[i].second, {}, -1};
        const double p = clamp_prob(f->forward_scalar(in), cfg.prob_clamp);
        pos_prob[i] = p;
        pos_loss[i] = -std::log(p);
      }
      std::size_t dropped = 0;
      order.resize(batch_pos.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      if (drop_fraction > 0.0) {
        dropped = static_cast<std::size_t>(drop_fraction * batch_pos.size());
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
          if (pos_loss[a] != pos_loss[b]) return pos_loss[a] > pos_loss[b];
          return a < b;
        });
      }

      const std::size_t kept = batch_pos.size() - dropped + negatives.size();
      const double inv_n = kept > 0 ? 1.0 / static_cast<double>(kept) : 0.0;
      std::fill(grad.begin(), grad.end(), 0.0);
      double loss = 0.0;
      for (std::size_t pos = dropped; pos < order.size(); ++pos) {
        const std::size_t i = order[pos];
        Input in{batch_pos[i].first, batch_pos[i].second, {}, -1};
        loss += pos_loss[i] * inv_n;
        const double up = -1.0 / pos_prob[i] * clamp_pass(pos_prob[i], cfg.prob_clamp) * inv_n;
        f->backward(in, {&up, 1}, grad);
      }
      for (const auto& [user, item] : negatives) {
        Input in{user, item, {}, -1};
        const double p = clamp_prob(f->forward_scalar(in), cfg.prob_clamp);
        loss += -std::log(1.0 - p) * inv_n;
        const double up = 1.0 / (1.0 - p) * clamp_pass(p, cfg.prob_clamp) * inv_n;
        f->backward(in, {&up, 1}, grad);
      }
      loss += add_regularization(*f, grad, cfg.reg_weight);
      check_finite(loss, trainer_name);
      opt.step(f->params(), grad);
      epoch_loss += loss;
      ++steps;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = steps > 0 ? epoch_loss / steps : 0.0;
    const double val = ranking_val_metric(*f, evals.valid, task.ks);
    rec.val_metrics["recall@" + std::to_string(validation_k(task.ks))] = val;
    report.epochs.push_back(std::move(rec));
    if (stopper.observe(val)) best.capture({f.get()});
    if (stopper.exhausted()) break;
  }

  best.restore();
  report.final_metrics["val_best"] = stopper.best;
  fill_final_ranking_metrics(*f, evals.test, task.ks, report);

  BinaryTrainOutcome outcome;
  outcome.report = std::move(report);
  outcome.target = std::move(f);
  return outcome;
}

}  // namespace

BinaryTrainOutcome train_normal(const ModelSpec& f_spec, const RankingTask& task,
                                const DecaConfig& cfg) {
  return run_bce_ranking(f_spec, task, cfg, "normal", [](int) { return 0.0; });
}

BinaryTrainOutcome train_tce(const ModelSpec& f_spec, const RankingTask& task,
                             const DecaConfig& cfg, const TceSchedule& schedule) {
  if (schedule.delta_max < 0.0 || schedule.delta_max >= 1.0) {
    throw ConfigError("delta_max must lie in [0, 1)");
  }
  const int warmup = std::max(schedule.warmup_epochs, 1);
  return run_bce_ranking(f_spec, task, cfg, "tce", [=](int epoch) {
    const double ramp = std::min(1.0, static_cast<double>(epoch) / warmup);
    return schedule.delta_max * ramp;
  });
}

std::unique_ptr<DifferentiableModel> pretrain_prior(const ModelSpec& f_spec,
                                                    const RankingTask& task,
                                                    const DecaConfig& cfg) {
  cfg.validate(2);
  DecaConfig prior_cfg = cfg;
  prior_cfg.seed_main = cfg.seed_prior;
  prior_cfg.seed_prior = cfg.seed_main;  // unused by the BCE engine, kept distinct
  return train_normal(f_spec, task, prior_cfg).target;
}

namespace {

// Alternating DP/DN loop shared by DeCA and DeCA(p) on ranking data.
BinaryTrainOutcome run_deca_ranking(const ModelSpec& f_spec, const RankingTask& task,
                                    const DecaConfig& cfg, bool pretrained_prior) {
  cfg.validate(2);
  ModelSpec spec = f_spec;
  spec.seed = cfg.seed_main;

  BinaryTrainOutcome outcome;
  if (pretrained_prior) outcome.prior = pretrain_prior(f_spec, task, cfg);

  auto f = build_model(spec);
  std::unique_ptr<DifferentiableModel> g;
  if (!pretrained_prior) {
    ModelSpec g_spec = pair_channel_spec(f_spec, mix_seed(cfg.seed_main, 2));
    g_spec.kind = ModelKind::kMF;
    g = build_model(g_spec);
  }
  auto h = build_model(pair_channel_spec(f_spec, mix_seed(cfg.seed_main, 3)));
  auto h_prime = build_model(pair_channel_spec(f_spec, mix_seed(cfg.seed_main, 4)));

  AdamOptimizer opt_f(f->num_params(), cfg.learn_rate);
  std::unique_ptr<AdamOptimizer> opt_g;
  if (g) opt_g = std::make_unique<AdamOptimizer>(g->num_params(), cfg.learn_rate);
  AdamOptimizer opt_h(h->num_params(), cfg.learn_rate);
  AdamOptimizer opt_hp(h_prime->num_params(), cfg.learn_rate);

  const RankingEvalSets evals = build_eval_sets(task);
  auto positives = positive_pairs(*task.train);
  Rng rng(mix_seed(cfg.seed_main, 1));

  RunReport report;
  report.trainer = pretrained_prior ? "deca_p" : "deca";
  report.seed = cfg.seed_main;
  EarlyStopper stopper(cfg.patience);
  Snapshot best;
  best.capture({f.get(), g.get(), h.get(), h_prime.get()});

  std::vector<LabeledExample> batch;
  long long count = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(positives.begin(), positives.end(), rng);
    double epoch_loss = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < positives.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(positives.size(), start + cfg.batch_size);
      std::span<const std::pair<int, int>> batch_pos(positives.data() + start, end - start);
      const auto negatives = sample_negatives(*task.train, batch_pos, task.strategy, rng);
      batch.clear();
      for (const auto& [user, item] : batch_pos) {
        batch.push_back({Input{user, item, {}, -1}, 1});
      }
      for (const auto& [user, item] : negatives) {
        batch.push_back({Input{user, item, {}, -1}, 0});
      }

      const Phase phase = phase_for_step(count);
      LossBundle bundle = pretrained_prior
                              ? deca_p_loss(*f, *outcome.prior, *h, *h_prime, batch, cfg, phase)
                              : deca_loss(*f, *g, *h, *h_prime, batch, cfg, phase);
      bundle.value += add_regularization(*f, bundle.grads.at(Role::kTarget), cfg.reg_weight);
      check_finite(bundle.value, report.trainer);

      opt_f.step(f->params(), bundle.grads.at(Role::kTarget));
      if (g) opt_g->step(g->params(), bundle.grads.at(Role::kAuxiliary));
      if (phase == Phase::kDenoisePositive) {
        opt_h.step(h->params(), bundle.grads.at(Role::kChannelNeg));
      } else {
        opt_hp.step(h_prime->params(), bundle.grads.at(Role::kChannelPos));
      }
      epoch_loss += bundle.value;
      ++steps;
      ++count;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = steps > 0 ? epoch_loss / steps : 0.0;
    const double val = ranking_val_metric(*f, evals.valid, task.ks);
    rec.val_metrics["recall@" + std::to_string(validation_k(task.ks))] = val;
    report.epochs.push_back(std::move(rec));
    if (stopper.observe(val)) best.capture({f.get(), g.get(), h.get(), h_prime.get()});
    if (stopper.exhausted()) break;
  }

  best.restore();
  report.final_metrics["val_best"] = stopper.best;
  fill_final_ranking_metrics(*f, evals.test, task.ks, report);

  outcome.report = std::move(report);
  outcome.target = std::move(f);
  outcome.auxiliary = std::move(g);
  outcome.channel_neg = std::move(h);
  outcome.channel_pos = std::move(h_prime);
  return outcome;
}

}  // namespace

BinaryTrainOutcome train_deca(const ModelSpec& f_spec, const RankingTask& task,
                              const DecaConfig& cfg) {
  return run_deca_ranking(f_spec, task, cfg, /*pretrained_prior=*/false);
}

BinaryTrainOutcome train_deca_p(const ModelSpec& f_spec, const RankingTask& task,
                                const DecaConfig& cfg) {
  return run_deca_ranking(f_spec, task, cfg, /*pretrained_prior=*/true);
}

// --- Generic binary task -------------------------------------------------------

namespace {

double binary_accuracy(const DifferentiableModel& f, const MultiClassDataset& data,
                       const std::vector<int>& labels) {
  if (data.size() == 0) return 0.0;
  int correct = 0;
  for (int i = 0; i < data.size(); ++i) {
    Input in;
    in.features = data.row(i);
    const int pred = f.forward_scalar(in) >= 0.5 ? 1 : 0;
    if (pred == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / data.size();
}

ModelSpec feature_channel_spec(const ModelSpec& f_spec, std::uint64_t seed) {
  ModelSpec s = f_spec;
  s.kind = ModelKind::kMlpBinary;
  s.seed = seed;
  return s;
}

template <typename StepFn>
BinaryTrainOutcome run_generic_engine(const GenericBinaryTask& task, const DecaConfig& cfg,
                                      const std::string& trainer_name,
                                      std::initializer_list<DifferentiableModel*> trained,
                                      DifferentiableModel* f, StepFn step_fn) {
  const MultiClassDataset& train = *task.train;
  Rng rng(mix_seed(cfg.seed_main, 1));
  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  RunReport report;
  report.trainer = trainer_name;
  report.seed = cfg.seed_main;
  EarlyStopper stopper(cfg.patience);
  Snapshot best;
  best.capture(trained);

  std::vector<LabeledExample> batch;
  long long count = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) {
        Input in;
        in.features = train.row(order[i]);
        batch.push_back({in, train.noisy_labels[order[i]]});
      }
      const double loss = step_fn(batch, count);
      check_finite(loss, trainer_name);
      epoch_loss += loss;
      ++steps;
      ++count;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = steps > 0 ? epoch_loss / steps : 0.0;
    const double val = binary_accuracy(*f, *task.valid, task.valid->noisy_labels);
    rec.val_metrics["accuracy"] = val;
    report.epochs.push_back(std::move(rec));
    if (stopper.observe(val)) best.capture(trained);
    if (stopper.exhausted()) break;
  }
  best.restore();
  report.final_metrics["val_best"] = stopper.best;
  report.final_metrics["accuracy"] = binary_accuracy(*f, *task.test, task.test->true_labels);

  BinaryTrainOutcome outcome;
  outcome.report = std::move(report);
  return outcome;
}

}  // namespace

BinaryTrainOutcome train_normal_generic(const ModelSpec& f_spec, const GenericBinaryTask& task,
                                        const DecaConfig& cfg) {
  cfg.validate(2);
  ModelSpec spec = f_spec;
  spec.seed = cfg.seed_main;
  auto f = build_model(spec);
  AdamOptimizer opt(f->num_params(), cfg.learn_rate);
  std::vector<double> grad(f->num_params());

  auto outcome = run_generic_engine(
      task, cfg, "normal", {f.get()}, f.get(),
      [&](const std::vector<LabeledExample>& batch, long long) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double loss = 0.0;
        const double inv_n = 1.0 / static_cast<double>(batch.size());
        for (const LabeledExample& ex : batch) {
          const double p = clamp_prob(f->forward_scalar(ex.input), cfg.prob_clamp);
          const double pass = clamp_pass(p, cfg.prob_clamp);
          if (ex.label == 1) {
            loss += -std::log(p) * inv_n;
            const double up = -1.0 / p * pass * inv_n;
            f->backward(ex.input, {&up, 1}, grad);
          } else {
            loss += -std::log(1.0 - p) * inv_n;
            const double up = 1.0 / (1.0 - p) * pass * inv_n;
            f->backward(ex.input, {&up, 1}, grad);
          }
        }
        loss += add_regularization(*f, grad, cfg.reg_weight);
        opt.step(f->params(), grad);
        return loss;
      });
  outcome.target = std::move(f);
  return outcome;
}

namespace {

BinaryTrainOutcome run_deca_generic(const ModelSpec& f_spec, const GenericBinaryTask& task,
                                    const DecaConfig& cfg, bool pretrained_prior) {
  cfg.validate(2);
  ModelSpec spec = f_spec;
  spec.seed = cfg.seed_main;

  std::unique_ptr<DifferentiableModel> prior;
  if (pretrained_prior) {
    DecaConfig prior_cfg = cfg;
    prior_cfg.seed_main = cfg.seed_prior;
    prior_cfg.seed_prior = cfg.seed_main;
    prior = train_normal_generic(f_spec, task, prior_cfg).target;
  }

  auto f = build_model(spec);
  std::unique_ptr<DifferentiableModel> g;
  if (!pretrained_prior) {
    // Logistic-linear auxiliary: simple on purpose, it should only be able to
    // fit the robust component of the data.
    ModelSpec g_spec;
    g_spec.kind = ModelKind::kMlpBinary;
    g_spec.input_dim = f_spec.input_dim;
    g_spec.init_scale = f_spec.init_scale;
    g_spec.seed = mix_seed(cfg.seed_main, 2);
    g = build_model_unchecked(g_spec);
  }
  auto h = build_model(feature_channel_spec(f_spec, mix_seed(cfg.seed_main, 3)));
  auto h_prime = build_model(feature_channel_spec(f_spec, mix_seed(cfg.seed_main, 4)));

  AdamOptimizer opt_f(f->num_params(), cfg.learn_rate);
  std::unique_ptr<AdamOptimizer> opt_g;
  if (g) opt_g = std::make_unique<AdamOptimizer>(g->num_params(), cfg.learn_rate);
  AdamOptimizer opt_h(h->num_params(), cfg.learn_rate);
  AdamOptimizer opt_hp(h_prime->num_params(), cfg.learn_rate);

  auto outcome = run_generic_engine(
      task, cfg, pretrained_prior ? "deca_p" : "deca",
      {f.get(), g.get(), h.get(), h_prime.get()}, f.get(),
      [&](const std::vector<LabeledExample>& batch, long long count) {
        const Phase phase = phase_for_step(count);
        LossBundle bundle = pretrained_prior
                                ? deca_p_loss(*f, *prior, *h, *h_prime, batch, cfg, phase)
                                : deca_loss(*f, *g, *h, *h_prime, batch, cfg, phase);
        bundle.value += add_regularization(*f, bundle.grads.at(Role::kTarget), cfg.reg_weight);
        opt_f.step(f->params(), bundle.grads.at(Role::kTarget));
        if (g) opt_g->step(g->params(), bundle.grads.at(Role::kAuxiliary));
        if (phase == Phase::kDenoisePositive) {
          opt_h.step(h->params(), bundle.grads.at(Role::kChannelNeg));
        } else {
          opt_hp.step(h_prime->params(), bundle.grads.at(Role::kChannelPos));
        }
        return bundle.value;
      });
  outcome.target = std::move(f);
  outcome.auxiliary = std::move(g);
  outcome.channel_neg = std::move(h);
  outcome.channel_pos = std::move(h_prime);
  outcome.prior = std::move(prior);
  return outcome;
}

}  // namespace

BinaryTrainOutcome train_deca_generic(const ModelSpec& f_spec, const GenericBinaryTask& task,
                                      const DecaConfig& cfg) {
  return run_deca_generic(f_spec, task, cfg, /*pretrained_prior=*/false);
}

BinaryTrainOutcome train_deca_p_generic(const ModelSpec& f_spec, const GenericBinaryTask& task,
                                        const DecaConfig& cfg) {
  return run_deca_generic(f_spec, task, cfg, /*pretrained_prior=*/true);
}

// --- Multi-class classification -------------------------------------------------

namespace {

double ce_loss_at(const DifferentiableModel& f, const MultiClassDataset& data, int idx,
                  double eps) {
  Input in;
  in.features = data.row(idx);
  const auto p = f.forward_vec(in);
  return -std::log(clamp_prob(p[data.noisy_labels[idx]], eps));
}

}  // namespace

std::vector<int> itlm_keep_indices(const DifferentiableModel& f, const MultiClassDataset& data,
                                   double keep_fraction, double eps) {
  std::vector<std::pair<double, int>> losses(data.size());
  for (int i = 0; i < data.size(); ++i) losses[i] = {ce_loss_at(f, data, i, eps), i};
  std::sort(losses.begin(), losses.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return a.second < b.second;
  });
  const auto keep = static_cast<std::size_t>(keep_fraction * data.size());
  std::vector<int> kept;
  kept.reserve(keep);
  for (std::size_t i = 0; i < keep && i < losses.size(); ++i) kept.push_back(losses[i].second);
  std::sort(kept.begin(), kept.end());
  return kept;
}

namespace {

// Normal multi-class training restricted to `subset`, re-selected every round.
MultiTrainOutcome run_ce_multiclass(const ModelSpec& f_spec, const MultiClassTask& task,
                                    const DecaConfig& cfg, const std::string& trainer_name,
                                    double keep_fraction, int rounds) {
  cfg.validate(f_spec.num_classes);
  if (keep_fraction <= 0.0 || keep_fraction > 1.0) {
    throw ConfigError("keep_fraction must lie in (0, 1]");
  }
  if (rounds < 1) throw ConfigError("rounds must be at least 1");
  const MultiClassDataset& train = *task.train;
  const auto keep_count = static_cast<std::size_t>(keep_fraction * train.size());
  if (keep_count < static_cast<std::size_t>(train.num_classes)) {
    // Warning contract: too small to cover all classes, training continues.
    std::cerr << "[" << trainer_name << "] warning: kept subset (" << keep_count
              << ") smaller than class count (" << train.num_classes << ")\n";
  }

  ModelSpec spec = f_spec;
  spec.seed = cfg.seed_main;
  auto f = build_model(spec);
  AdamOptimizer opt(f->num_params(), cfg.learn_rate);
  std::vector<double> grad(f->num_params());
  Rng rng(mix_seed(cfg.seed_main, 1));

  RunReport report;
  report.trainer = trainer_name;
  report.seed = cfg.seed_main;
  EarlyStopper stopper(cfg.patience);
  Snapshot best;
  best.capture({f.get()});

  std::vector<int> subset(train.size());
  std::iota(subset.begin(), subset.end(), 0);
  std::vector<double> upstream(static_cast<std::size_t>(train.num_classes));

  // Round boundaries re-rank the full training set by current loss.
  std::vector<int> boundaries;
  for (int r = 1; r < rounds; ++r) {
    boundaries.push_back(static_cast<int>(static_cast<long long>(r) * cfg.epochs / rounds));
  }

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const bool boundary = keep_fraction < 1.0 && epoch > 0 &&
                          std::find(boundaries.begin(), boundaries.end(), epoch) !=
                              boundaries.end();
    if (boundary) subset = itlm_keep_indices(*f, train, keep_fraction, cfg.prob_clamp);

    std::shuffle(subset.begin(), subset.end(), rng);
    double epoch_loss = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < subset.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(subset.size(), start + cfg.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      double loss = 0.0;
      const double inv_n = 1.0 / static_cast<double>(end - start);
      for (std::size_t pos = start; pos < end; ++pos) {
        const int idx = subset[pos];
        Input in;
        in.features = train.row(idx);
        const auto p = f->forward_vec(in);
        const int label = train.noisy_labels[idx];
        const double pc = clamp_prob(p[label], cfg.prob_clamp);
        loss += -std::log(pc) * inv_n;
        std::fill(upstream.begin(), upstream.end(), 0.0);
        upstream[label] = -1.0 / pc * clamp_pass(p[label], cfg.prob_clamp) * inv_n;
        f->backward(in, upstream, grad);
      }
      loss += add_regularization(*f, grad, cfg.reg_weight);
      check_finite(loss, trainer_name);
      opt.step(f->params(), grad);
      epoch_loss += loss;
      ++steps;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = steps > 0 ? epoch_loss / steps : 0.0;
    const double val = accuracy(*f, *task.valid, LabelSet::kNoisy);
    rec.val_metrics["accuracy"] = val;
    report.epochs.push_back(std::move(rec));
    if (stopper.observe(val)) best.capture({f.get()});
    if (stopper.exhausted()) break;
  }

  best.restore();
  report.final_metrics["val_best"] = stopper.best;
  report.final_metrics["accuracy"] = accuracy(*f, *task.test, LabelSet::kTrue);

  MultiTrainOutcome outcome;
  outcome.report = std::move(report);
  outcome.target = std::move(f);
  return outcome;
}

}  // namespace

MultiTrainOutcome train_normal_multiclass(const ModelSpec& f_spec, const MultiClassTask& task,
                                          const DecaConfig& cfg) {
  return run_ce_multiclass(f_spec, task, cfg, "normal", 1.0, 1);
}

MultiTrainOutcome train_itlm(const ModelSpec& f_spec, const MultiClassTask& task,
                             const DecaConfig& cfg, double keep_fraction, int rounds) {
  return run_ce_multiclass(f_spec, task, cfg, "itlm", keep_fraction, rounds);
}

std::unique_ptr<DifferentiableModel> pretrain_prior_multiclass(const ModelSpec& f_spec,
                                                               const MultiClassTask& task,
                                                               const DecaConfig& cfg) {
  DecaConfig prior_cfg = cfg;
  prior_cfg.seed_main = cfg.seed_prior;
  prior_cfg.seed_prior = cfg.seed_main;
  return train_normal_multiclass(f_spec, task, prior_cfg).target;
}

MultiTrainOutcome train_deca_p_multiclass(const ModelSpec& f_spec, const MultiClassTask& task,
                                          const DecaConfig& cfg) {
  cfg.validate(f_spec.num_classes);
  const MultiClassDataset& train = *task.train;

  MultiTrainOutcome outcome;
  outcome.prior = pretrain_prior_multiclass(f_spec, task, cfg);

  ModelSpec spec = f_spec;
  spec.seed = cfg.seed_main;
  auto f = build_model(spec);

  ModelSpec h_spec;
  h_spec.kind = ModelKind::kHMulticlass;
  h_spec.input_dim = f->embedding_dim();
  h_spec.num_classes = train.num_classes;
  h_spec.init_scale = f_spec.init_scale;
  h_spec.seed = mix_seed(cfg.seed_main, 5);
  auto h = build_model(h_spec);

  AdamOptimizer opt_f(f->num_params(), cfg.learn_rate);
  AdamOptimizer opt_h(h->num_params(), cfg.learn_rate);
  Rng rng(mix_seed(cfg.seed_main, 1));

  RunReport report;
  report.trainer = "deca_p";
  report.seed = cfg.seed_main;
  EarlyStopper stopper(cfg.patience);
  Snapshot best;
  best.capture({f.get(), h.get()});

  const int phase1_epochs = cfg.phase1_epochs < 0 ? cfg.epochs : cfg.phase1_epochs;
  std::vector<int> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> batch_idx;
  long long count = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const MultiPhase phase = epoch < phase1_epochs ? MultiPhase::kPhase1 : MultiPhase::kPhase2;
    double epoch_loss = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch_idx.assign(order.begin() + start, order.begin() + end);
      const int k = static_cast<int>(count % train.num_classes);
      MultiClassBatch batch{&train, batch_idx};
      LossBundle bundle = deca_p_multiclass_loss(*f, *outcome.prior, *h, batch, cfg, k, phase);
      bundle.value += add_regularization(*f, bundle.grads.at(Role::kTarget), cfg.reg_weight);
      check_finite(bundle.value, "deca_p");
      opt_f.step(f->params(), bundle.grads.at(Role::kTarget));
      opt_h.step(h->params(), bundle.grads.at(Role::kChannel));
      epoch_loss += bundle.value;
      ++steps;
      ++count;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = steps > 0 ? epoch_loss / steps : 0.0;
    const double val = accuracy(*f, *task.valid, LabelSet::kNoisy);
    rec.val_metrics["accuracy"] = val;
    report.epochs.push_back(std::move(rec));
    if (stopper.observe(val)) best.capture({f.get(), h.get()});
    if (stopper.exhausted()) break;
  }

  best.restore();
  report.final_metrics["val_best"] = stopper.best;
  report.final_metrics["accuracy"] = accuracy(*f, *task.test, LabelSet::kTrue);

  outcome.report = std::move(report);
  outcome.target = std::move(f);
  outcome.channel = std::move(h);
  return outcome;
}

std::vector<std::vector<double>> ensemble_predict(const DifferentiableModel& a,
                                                  const DifferentiableModel& b,
                                                  std::span<const Input> inputs) {
  if (a.output_dim() != b.output_dim()) throw DataError("ensemble models disagree on shape");
  std::vector<std::vector<double>> out;
  out.reserve(inputs.size());
  for (const Input& in : inputs) {
    const auto pa = a.forward_vec(in);
    const auto pb = b.forward_vec(in);
    std::vector<double> mean(pa.size());
    double sum = 0.0;
    for (std::size_t j = 0; j < pa.size(); ++j) {
      mean[j] = 0.5 * (pa[j] + pb[j]);
      sum += mean[j];
    }
    if (mean.size() > 1 && sum > 0.0) {
      for (double& v : mean) v /= sum;
    }
    out.push_back(std::move(mean));
  }
  return out;
}

}  // namespace deca
