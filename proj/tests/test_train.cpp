#include "deca/train.hpp"

#include <cmath>
#include <sstream>

#include "doctest.h"

using namespace deca;

namespace {

DecaConfig fast_cfg(std::uint64_t seed, int epochs = 8, double lr = 0.05) {
  DecaConfig cfg;
  cfg.alpha = 0.5;
  cfg.c_constants = {{10.0, 10.0}};  // shared across focus classes
  cfg.learn_rate = lr;
  cfg.epochs = epochs;
  cfg.batch_size = 64;
  cfg.seed_main = seed;
  cfg.seed_prior = seed + 1000;
  cfg.patience = 0;  // run every epoch, keep tests deterministic in length
  return cfg;
}

struct RankingFixture {
  ImplicitDataset data;
  SplitResult splits;
  RankingTask task;

  explicit RankingFixture(std::uint64_t seed = 5, double noise_pos = 0.3) {
    data = gen_planted_implicit(30, 20, 4, noise_pos, 0.0, seed);
    SplitSpec spec;
    spec.clean_rule = CleanRule::kHiddenTruth;
    splits = split(data, spec, seed);
    task.train = &splits.train;
    task.valid = &splits.valid;
    task.test = &splits.test;
    task.ks = {5, 10};
  }
};

ModelSpec small_mf(int users = 30, int items = 20) {
  ModelSpec spec;
  spec.kind = ModelKind::kMF;
  spec.num_users = users;
  spec.num_items = items;
  spec.latent_dim = 4;
  return spec;
}

struct BlobFixture {
  MultiClassDataset data;
  MultiClassSplit splits;
  MultiClassTask task;

  BlobFixture(int classes, double noise, std::uint64_t seed, int per_class = 60,
              double spread = 0.6) {
    data = gen_multiclass_blobs(classes, per_class, 2, spread, noise, seed);
    splits = split_multiclass(data, 0.7, 0.15, seed);
    task.train = &splits.train;
    task.valid = &splits.valid;
    task.test = &splits.test;
  }
};

ModelSpec small_classifier(int classes) {
  ModelSpec spec;
  spec.kind = ModelKind::kMlpClassifier;
  spec.input_dim = 2;
  spec.hidden = {16};
  spec.num_classes = classes;
  spec.init_scale = 0.1;
  return spec;
}

std::string csv_of(const RunReport& report) {
  std::ostringstream os;
  report.write_metrics_csv(os);
  return os.str();
}

}  // namespace

TEST_CASE("adam minimizes a quadratic") {
  std::vector<double> params{3.0, -2.0};
  AdamOptimizer opt(2, 0.1);
  std::vector<double> grad(2);
  for (int step = 0; step < 300; ++step) {
    grad[0] = 2.0 * params[0];
    grad[1] = 2.0 * params[1];
    opt.step(params, grad);
  }
  CHECK(std::abs(params[0]) < 1e-2);
  CHECK(std::abs(params[1]) < 1e-2);
}

TEST_CASE("normal training separates clean blobs") {
  BlobFixture fixture(2, 0.0, 7, 60, 0.3);
  const auto outcome =
      train_normal_multiclass(small_classifier(2), fixture.task, fast_cfg(7, 50, 0.05));
  CHECK(accuracy(*outcome.target, fixture.splits.train, LabelSet::kTrue) > 0.99);
}

TEST_CASE("overwhelming regularization pulls outputs toward uniform") {
  BlobFixture fixture(4, 0.0, 4);
  DecaConfig cfg = fast_cfg(4, 10, 0.05);
  cfg.reg_weight = 1e6;
  const auto outcome = train_normal_multiclass(small_classifier(4), fixture.task, cfg);
  // parameters collapse, so every class probability approaches 1/4
  Input in;
  in.features = fixture.splits.test.row(0);
  for (const double p : outcome.target->forward_vec(in)) {
    CHECK(p == doctest::Approx(0.25).epsilon(0.05));
  }
}

TEST_CASE("identical config and seed reproduce the report byte for byte") {
  RankingFixture fixture;
  const auto a = train_normal(small_mf(), fixture.task, fast_cfg(7));
  const auto b = train_normal(small_mf(), fixture.task, fast_cfg(7));
  CHECK(csv_of(a.report) == csv_of(b.report));
  CHECK(std::equal(a.target->params().begin(), a.target->params().end(),
                   b.target->params().begin()));
  const auto c = train_normal(small_mf(), fixture.task, fast_cfg(8));
  CHECK(csv_of(a.report) != csv_of(c.report));
}

TEST_CASE("tce with zero drop bit-matches normal training") {
  RankingFixture fixture;
  const auto normal = train_normal(small_mf(), fixture.task, fast_cfg(9));
  TceSchedule schedule;
  schedule.delta_max = 0.0;
  const auto tce = train_tce(small_mf(), fixture.task, fast_cfg(9), schedule);
  CHECK(std::equal(normal.target->params().begin(), normal.target->params().end(),
                   tce.target->params().begin()));
  // same trajectory modulo the trainer name
  RunReport renamed = tce.report;
  renamed.trainer = "normal";
  CHECK(csv_of(normal.report) == csv_of(renamed));
}

TEST_CASE("tce rejects a delta at or above one") {
  RankingFixture fixture;
  TceSchedule schedule;
  schedule.delta_max = 1.0;
  CHECK_THROWS_AS(train_tce(small_mf(), fixture.task, fast_cfg(9), schedule), ConfigError);
}

TEST_CASE("tce drops a noise-enriched set of positives") {
  // Hidden-truth audit of the dynamic-threshold selection: the top-loss
  // fraction of positives under the trained model carries more noise than
  // the 30% base rate planted into the data.
  const auto data = gen_planted_implicit(200, 100, 8, 0.3, 0.0, 1);
  SplitSpec sp;
  sp.clean_rule = CleanRule::kHiddenTruth;
  const auto splits = split(data, sp, 1);
  RankingTask task;
  task.train = &splits.train;
  task.valid = &splits.valid;
  task.test = &splits.test;
  task.ks = {5, 20};
  ModelSpec f = small_mf(200, 100);
  f.latent_dim = 8;
  DecaConfig cfg = fast_cfg(1, 20, 0.01);
  cfg.batch_size = 256;
  cfg.patience = -1;  // plain training, keep the final model
  TceSchedule schedule;
  schedule.delta_max = 0.3;
  schedule.warmup_epochs = 5;
  const auto outcome = train_tce(f, task, cfg, schedule);

  std::vector<std::pair<double, std::pair<int, int>>> losses;
  for (const Interaction& it : splits.train.interactions) {
    const double p = clamp_prob(outcome.target->forward_scalar({it.user, it.item, {}, -1}));
    losses.push_back({-std::log(p), {it.user, it.item}});
  }
  std::sort(losses.begin(), losses.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  const auto dropped = static_cast<std::size_t>(losses.size() * 0.3);
  int noisy = 0;
  for (std::size_t i = 0; i < dropped; ++i) {
    if (!splits.train.true_positive(losses[i].second.first, losses[i].second.second)) ++noisy;
  }
  const double fraction = static_cast<double>(noisy) / dropped;
  CHECK(fraction > 0.35);  // clearly above the 0.30 base rate
}

TEST_CASE("final-model mode skips the snapshot restore") {
  RankingFixture fixture;
  DecaConfig cfg = fast_cfg(43, 10);
  cfg.patience = -1;
  const auto outcome = train_normal(small_mf(), fixture.task, cfg);
  // the report still tracks the peak, but the model is the last epoch's
  CHECK(outcome.report.epochs.size() == 10);
  CHECK(outcome.report.final_metrics.at("val_best") >=
        outcome.report.epochs.back().val_metrics.at("recall@10"));
}

TEST_CASE("itlm with full keep matches normal training") {
  BlobFixture fixture(3, 0.2, 6);
  const auto normal =
      train_normal_multiclass(small_classifier(3), fixture.task, fast_cfg(6, 12));
  const auto itlm =
      train_itlm(small_classifier(3), fixture.task, fast_cfg(6, 12), 1.0, 3);
  CHECK(std::equal(normal.target->params().begin(), normal.target->params().end(),
                   itlm.target->params().begin()));
}

TEST_CASE("itlm selection is exactly the bottom-loss fraction") {
  BlobFixture fixture(3, 0.3, 8);
  const auto outcome =
      train_normal_multiclass(small_classifier(3), fixture.task, fast_cfg(8, 6));
  const MultiClassDataset& train = fixture.splits.train;
  const auto kept = itlm_keep_indices(*outcome.target, train, 0.6);
  CHECK(kept.size() == static_cast<std::size_t>(0.6 * train.size()));

  // audit: every kept loss is no larger than every dropped loss
  std::vector<double> losses(train.size());
  for (int i = 0; i < train.size(); ++i) {
    Input in;
    in.features = train.row(i);
    losses[i] = -std::log(clamp_prob(outcome.target->forward_vec(in)[train.noisy_labels[i]]));
  }
  std::vector<bool> is_kept(train.size(), false);
  for (const int i : kept) is_kept[i] = true;
  double max_kept = -1e300, min_dropped = 1e300;
  for (int i = 0; i < train.size(); ++i) {
    if (is_kept[i]) {
      max_kept = std::max(max_kept, losses[i]);
    } else {
      min_dropped = std::min(min_dropped, losses[i]);
    }
  }
  CHECK(max_kept <= min_dropped);
}

TEST_CASE("itlm keeps a cleaner subset than the full data") {
  BlobFixture fixture(4, 0.4, 10, 80);
  const auto outcome =
      train_normal_multiclass(small_classifier(4), fixture.task, fast_cfg(10, 15));
  const MultiClassDataset& train = fixture.splits.train;
  const auto kept = itlm_keep_indices(*outcome.target, train, 0.6);
  int kept_noisy = 0;
  for (const int i : kept) {
    if (train.noisy_labels[i] != train.true_labels[i]) ++kept_noisy;
  }
  const double kept_rate = static_cast<double>(kept_noisy) / kept.size();
  int total_noisy = 0;
  for (int i = 0; i < train.size(); ++i) {
    if (train.noisy_labels[i] != train.true_labels[i]) ++total_noisy;
  }
  const double total_rate = static_cast<double>(total_noisy) / train.size();
  CHECK(kept_rate < total_rate);
}

TEST_CASE("phase schedule alternates DP and DN") {
  for (long long step = 0; step < 6; ++step) {
    const Phase expected = step % 2 == 0 ? Phase::kDenoisePositive : Phase::kDenoiseNegative;
    CHECK(phase_for_step(step) == expected);
  }
}

TEST_CASE("deca and deca(p) run end to end on ranking data") {
  RankingFixture fixture;
  DecaConfig cfg = fast_cfg(11, 6);
  cfg.c_constants = {{50.0, 50.0}, {10.0, 10.0}};

  const auto deca = train_deca(small_mf(), fixture.task, cfg);
  CHECK(deca.report.epochs.size() == 6);
  CHECK(deca.auxiliary != nullptr);
  CHECK(deca.prior == nullptr);
  for (const auto& [name, value] : deca.report.final_metrics) {
    CHECK(std::isfinite(value));
  }

  const auto deca_p = train_deca_p(small_mf(), fixture.task, cfg);
  CHECK(deca_p.prior != nullptr);
  CHECK(deca_p.auxiliary == nullptr);
  CHECK(deca_p.report.final_metrics.count("recall@10") == 1);
}

TEST_CASE("the frozen prior survives deca(p) training untouched") {
  RankingFixture fixture;
  const DecaConfig cfg = fast_cfg(13, 5);
  const auto outcome = train_deca_p(small_mf(), fixture.task, cfg);
  const auto standalone = pretrain_prior(small_mf(), fixture.task, cfg);
  REQUIRE(outcome.prior != nullptr);
  CHECK(std::equal(outcome.prior->params().begin(), outcome.prior->params().end(),
                   standalone->params().begin()));
}

TEST_CASE("pretraining the prior is a rerun of normal training under seed one") {
  RankingFixture fixture;
  DecaConfig cfg = fast_cfg(17, 5);
  const auto prior = pretrain_prior(small_mf(), fixture.task, cfg);

  DecaConfig as_main = cfg;
  as_main.seed_main = cfg.seed_prior;
  as_main.seed_prior = cfg.seed_main;
  const auto rerun = train_normal(small_mf(), fixture.task, as_main);
  CHECK(std::equal(prior->params().begin(), prior->params().end(),
                   rerun.target->params().begin()));
}

TEST_CASE("prior and main seeds must differ") {
  RankingFixture fixture;
  DecaConfig cfg = fast_cfg(19, 3);
  cfg.seed_prior = cfg.seed_main;
  CHECK_THROWS_AS(train_deca_p(small_mf(), fixture.task, cfg), ConfigError);
}

TEST_CASE("huge C constants push deca toward plain label fitting") {
  RankingFixture fixture(21, 0.0);
  DecaConfig cfg = fast_cfg(21, 12);
  cfg.c_constants = {{1e4, 1e4}, {1e4, 1e4}};
  const auto deca = train_deca(small_mf(), fixture.task, cfg);
  const auto normal = train_normal(small_mf(), fixture.task, fast_cfg(21, 12));

  // both track the observed labels: positives scored above fresh negatives
  auto separation = [&](const DifferentiableModel& f) {
    double pos = 0.0, neg = 0.0;
    int n = 0;
    std::vector<std::pair<int, int>> positives;
    for (const Interaction& it : fixture.splits.train.interactions) {
      positives.emplace_back(it.user, it.item);
    }
    const auto negatives = sample_negatives(fixture.splits.train, positives,
                                            NegStrategy::kUniform, std::uint64_t{99});
    for (std::size_t i = 0; i < positives.size(); ++i) {
      pos += f.forward_scalar({positives[i].first, positives[i].second, {}, -1});
      neg += f.forward_scalar({negatives[i].first, negatives[i].second, {}, -1});
      ++n;
    }
    return (pos - neg) / n;
  };
  CHECK(separation(*normal.target) > 0.0);
  CHECK(separation(*deca.target) > 0.0);

  // training losses fell for both
  CHECK(deca.report.epochs.back().train_loss < deca.report.epochs.front().train_loss);
  CHECK(normal.report.epochs.back().train_loss < normal.report.epochs.front().train_loss);
}

TEST_CASE("deca(p) multi-class runs both phases and honours the focus schedule") {
  BlobFixture fixture(4, 0.3, 23, 40);
  DecaConfig cfg = fast_cfg(23, 6, 0.02);
  cfg.c_constants = {{1.0, 1.0}};
  cfg.phase1_epochs = 4;
  cfg.batch_size = 32;
  const auto outcome = train_deca_p_multiclass(small_classifier(4), fixture.task, cfg);
  CHECK(outcome.report.epochs.size() == 6);
  CHECK(outcome.channel != nullptr);
  CHECK(outcome.prior != nullptr);
  CHECK(std::isfinite(outcome.report.final_metrics.at("accuracy")));
}

TEST_CASE("generic binary trainers run end to end") {
  MultiClassDataset data = gen_multiclass_blobs(2, 80, 2, 0.8, 0.2, 29);
  const MultiClassSplit splits = split_multiclass(data, 0.7, 0.15, 29);
  GenericBinaryTask task{&splits.train, &splits.valid, &splits.test};
  ModelSpec spec;
  spec.kind = ModelKind::kMlpBinary;
  spec.input_dim = 2;
  spec.hidden = {8};
  spec.init_scale = 0.1;

  DecaConfig cfg = fast_cfg(29, 8, 0.05);
  cfg.batch_size = 32;
  cfg.c_constants = {{10.0, 10.0}, {10.0, 10.0}};
  const auto normal = train_normal_generic(spec, task, cfg);
  CHECK(normal.report.final_metrics.at("accuracy") > 0.6);
  const auto deca = train_deca_generic(spec, task, cfg);
  CHECK(std::isfinite(deca.report.final_metrics.at("accuracy")));
  const auto deca_p = train_deca_p_generic(spec, task, cfg);
  CHECK(std::isfinite(deca_p.report.final_metrics.at("accuracy")));
}

TEST_CASE("ensembling identical models returns their prediction") {
  const auto model = build_model(small_mf());
  const std::vector<Input> inputs{{3, 4, {}, -1}, {1, 2, {}, -1}};
  const auto mean = ensemble_predict(*model, *model, inputs);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    CHECK(mean[i][0] == doctest::Approx(model->forward_scalar(inputs[i])));
  }
}

TEST_CASE("ensemble averages binary outputs and keeps simplexes") {
  ModelSpec spec = small_classifier(3);
  spec.seed = 31;
  const auto a = build_model(spec);
  spec.seed = 32;
  const auto b = build_model(spec);
  std::vector<double> x{0.4, -0.7};
  Input in;
  in.features = x;
  const std::vector<Input> inputs{in};
  const auto mean = ensemble_predict(*a, *b, inputs);
  double sum = 0.0;
  for (const double p : mean[0]) {
    CHECK(p >= 0.0);
    sum += p;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("report json round trips") {
  RankingFixture fixture;
  const auto outcome = train_normal(small_mf(), fixture.task, fast_cfg(37, 3));
  RunReport report = outcome.report;
  report.config_echo = {{"demo", true}};
  report.config_hash = "abc";
  const auto round = RunReport::from_json(report.to_json());
  CHECK(csv_of(round) == csv_of(report));
  CHECK(round.trainer == report.trainer);
  CHECK(round.seed == report.seed);

  nlohmann::json bad = report.to_json();
  bad["schema_version"] = "2.0";
  CHECK_THROWS_AS(RunReport::from_json(bad), DataError);
}

TEST_CASE("early stopping returns the best validation snapshot") {
  RankingFixture fixture;
  DecaConfig cfg = fast_cfg(41, 12);
  cfg.patience = 10;
  const auto outcome = train_normal(small_mf(), fixture.task, cfg);
  double best = -1.0;
  for (const auto& epoch : outcome.report.epochs) {
    best = std::max(best, epoch.val_metrics.at("recall@10"));
  }
  CHECK(outcome.report.final_metrics.at("val_best") == doctest::Approx(best));

  // the returned model scores the recorded best validation metric
  const RankingEvalSet valid_set =
      RankingEvalSet::build(fixture.splits.train, fixture.splits.valid);
  const std::vector<int> ks{10};
  const auto m = recall_ndcg(*outcome.target, valid_set, ks);
  CHECK(m.recall_at.at(10) == doctest::Approx(best));
}
