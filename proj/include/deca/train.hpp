#pragma once

#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "deca/dataset.hpp"
#include "deca/losses.hpp"
#include "deca/metrics.hpp"
#include "deca/model.hpp"
#include "json.hpp"

namespace deca {

class AdamOptimizer {
 public:
  AdamOptimizer(std::size_t num_params, double learn_rate);
  void step(std::span<double> params, std::span<const double> grad);

 private:
  double lr_;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long long t_ = 0;
  std::vector<double> m_, v_;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  std::map<std::string, double> val_metrics;
};

struct RunReport {
  int schema_major = 1;
  int schema_minor = 0;
  std::string trainer;
  std::uint64_t seed = 0;
  nlohmann::json config_echo;
  std::string config_hash;
  std::vector<EpochRecord> epochs;
  std::map<std::string, double> final_metrics;
  double wall_clock_sec = 0.0;

  nlohmann::json to_json() const;
  static RunReport from_json(const nlohmann::json& j);
  // Rows: epoch,split,metric,value. Final metrics appear with split "test"
  // and epoch -1. Excludes wall clock so reruns are byte-identical.
  void write_metrics_csv(std::ostream& os) const;
  // Final-metric table as rows: metric,K,split,value (K empty for unranked
  // metrics such as accuracy).
  void write_metric_table_csv(std::ostream& os) const;
};

// --- Binary implicit-feedback tasks ------------------------------------------

struct RankingTask {
  const ImplicitDataset* train = nullptr;
  const ImplicitDataset* valid = nullptr;  // noisy validation, early stopping
  const ImplicitDataset* test = nullptr;   // clean test
  std::vector<int> ks = {5, 20};
  NegStrategy strategy = NegStrategy::kUniform;
  int eval_candidates = 0;  // 0 ranks all non-train items, >0 samples a pool
};

struct BinaryTrainOutcome {
  RunReport report;
  std::unique_ptr<DifferentiableModel> target;
  std::unique_ptr<DifferentiableModel> auxiliary;
  std::unique_ptr<DifferentiableModel> channel_neg;   // h
  std::unique_ptr<DifferentiableModel> channel_pos;   // h'
  std::unique_ptr<DifferentiableModel> prior;
};

struct TceSchedule {
  double delta_max = 0.0;   // in [0, 1)
  int warmup_epochs = 10;   // linear ramp horizon
};

BinaryTrainOutcome train_normal(const ModelSpec& f_spec, const RankingTask& task,
                                const DecaConfig& cfg);

// Truncated cross-entropy: drops the top delta(t) fraction of highest-loss
// positive examples per batch; delta ramps linearly to delta_max.
BinaryTrainOutcome train_tce(const ModelSpec& f_spec, const RankingTask& task,
                             const DecaConfig& cfg, const TceSchedule& schedule);

// Co-trained DeCA (target f, auxiliary g = MF, channels h/h'), alternating
// DP and DN phases per minibatch step.
BinaryTrainOutcome train_deca(const ModelSpec& f_spec, const RankingTask& task,
                              const DecaConfig& cfg);

// DeCA with a frozen pre-trained prior (seed s_1) replacing the auxiliary.
BinaryTrainOutcome train_deca_p(const ModelSpec& f_spec, const RankingTask& task,
                                const DecaConfig& cfg);

// Structural twin trained with seed s_1 under plain BCE, then frozen.
std::unique_ptr<DifferentiableModel> pretrain_prior(const ModelSpec& f_spec,
                                                    const RankingTask& task,
                                                    const DecaConfig& cfg);

// --- Generic binary task (features, labels in {0,1}) -------------------------

struct GenericBinaryTask {
  const MultiClassDataset* train = nullptr;
  const MultiClassDataset* valid = nullptr;
  const MultiClassDataset* test = nullptr;
};

BinaryTrainOutcome train_normal_generic(const ModelSpec& f_spec, const GenericBinaryTask& task,
                                        const DecaConfig& cfg);
BinaryTrainOutcome train_deca_generic(const ModelSpec& f_spec, const GenericBinaryTask& task,
                                      const DecaConfig& cfg);
BinaryTrainOutcome train_deca_p_generic(const ModelSpec& f_spec, const GenericBinaryTask& task,
                                        const DecaConfig& cfg);

// --- Multi-class classification ----------------------------------------------

struct MultiClassTask {
  const MultiClassDataset* train = nullptr;
  const MultiClassDataset* valid = nullptr;
  const MultiClassDataset* test = nullptr;
};

struct MultiTrainOutcome {
  RunReport report;
  std::unique_ptr<DifferentiableModel> target;
  std::unique_ptr<DifferentiableModel> channel;   // multi-class h
  std::unique_ptr<DifferentiableModel> prior;
};

MultiTrainOutcome train_normal_multiclass(const ModelSpec& f_spec, const MultiClassTask& task,
                                          const DecaConfig& cfg);

// Iterative trimmed loss: each round keeps the floor(keep_fraction * N)
// lowest-loss examples of the full training set and trains on that subset.
MultiTrainOutcome train_itlm(const ModelSpec& f_spec, const MultiClassTask& task,
                             const DecaConfig& cfg, double keep_fraction, int rounds);

// The ITLM selection rule: indices of the floor(keep_fraction * N) examples
// with the lowest current cross-entropy loss, in ascending index order.
std::vector<int> itlm_keep_indices(const DifferentiableModel& model,
                                   const MultiClassDataset& data, double keep_fraction,
                                   double eps = kProbClamp);

// Per-step itinerary: focus class k = step mod |C|; phase 1 while the epoch
// index is within phase1_epochs, phase 2 afterwards.
MultiTrainOutcome train_deca_p_multiclass(const ModelSpec& f_spec, const MultiClassTask& task,
                                          const DecaConfig& cfg);

std::unique_ptr<DifferentiableModel> pretrain_prior_multiclass(const ModelSpec& f_spec,
                                                               const MultiClassTask& task,
                                                               const DecaConfig& cfg);

// Arithmetic mean of output probabilities (renormalized for simplex outputs).
std::vector<std::vector<double>> ensemble_predict(const DifferentiableModel& a,
                                                  const DifferentiableModel& b,
                                                  std::span<const Input> inputs);

}  // namespace deca
