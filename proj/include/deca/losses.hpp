#pragma once

#include <array>
#include <map>
#include <span>
#include <vector>

#include "deca/common.hpp"
#include "deca/dataset.hpp"
#include "deca/model.hpp"

namespace deca {

// Participants of a loss evaluation. `kChannelNeg` is the model of
// P(observed=1 | true=0) and `kChannelPos` of P(observed=1 | true=1);
// `kChannel` is the single multi-class channel conditioned on the true class.
enum class Role { kTarget, kAuxiliary, kChannelNeg, kChannelPos, kChannel, kPrior };

std::string to_string(Role role);

struct LossBundle {
  double value = 0.0;
  std::map<Role, std::vector<double>> grads;
};

// Alternating binary sub-tasks. Denoising Positive pins the true-positive
// channel to 1 and trains h; Denoising Negative pins the true-negative
// channel to 0 and trains h'. Focus class 0 maps to DP, class 1 to DN.
enum class Phase { kDenoisePositive, kDenoiseNegative };

inline Phase phase_for_step(long long step) {
  return step % 2 == 0 ? Phase::kDenoisePositive : Phase::kDenoiseNegative;
}

// All training hyperparameters shared by the DeCA-family losses and trainers.
struct DecaConfig {
  double alpha = 0.5;  // weight between the two KL directions
  // Per-focus-class constants (C_k1, C_k2) substituting -log 0 channel terms.
  // One entry means all classes share the pair. In binary mode only C_k1 is
  // meaningful (the C_k2 case cannot occur with two classes): entry 0 is the
  // DP constant (alias C_0), entry 1 the DN constant (alias C_1).
  std::vector<std::array<double, 2>> c_constants{{10.0, 10.0}};
  double learn_rate = 0.001;
  int epochs = 50;
  int phase1_epochs = -1;  // multi-class T_1; -1 keeps phase 1 for all epochs
  double reg_weight = 0.0;
  int batch_size = 2048;
  std::uint64_t seed_prior = 1;  // s_1: prior pre-training
  std::uint64_t seed_main = 2;   // s_2: main run, must differ from s_1
  double prob_clamp = kProbClamp;
  int patience = 10;

  double c1(int focus_class) const;
  double c2(int focus_class) const;
  void validate(int num_classes) const;
};

struct LabeledExample {
  Input input;
  int label = 0;  // observed (noisy) label
};

using BinaryBatch = std::span<const LabeledExample>;

// --- KL divergences -------------------------------------------------------

double kl_bernoulli(double p, double q, double eps = kProbClamp);

// Clamps both arguments elementwise and renormalizes before evaluating.
double kl_categorical(std::span<const double> p, std::span<const double> q,
                      double eps = kProbClamp);

// --- Binary likelihood expectations ----------------------------------------

// E_{Y~P_f}[log P(observed | Y)] with the full two-sided channel.
// Gradients flow to f, h and h'. Batch-averaged.
LossBundle likelihood_expectation_binary(const DifferentiableModel& f,
                                         const DifferentiableModel& h,
                                         const DifferentiableModel& h_prime,
                                         BinaryBatch batch, double eps = kProbClamp);

// Denoising Positive: channel for true positives pinned to 1, the impossible
// -log(1 - h') term replaced by the constant c1. Trains f and h.
LossBundle dp_expectation(const DifferentiableModel& f, const DifferentiableModel& h,
                          BinaryBatch batch, double c1, double eps = kProbClamp);

// Denoising Negative: channel for true negatives pinned to 0, the impossible
// -log h term replaced by the constant c2. Trains f and h'.
LossBundle dn_expectation(const DifferentiableModel& f, const DifferentiableModel& h_prime,
                          BinaryBatch batch, double c2, double eps = kProbClamp);

// --- Composite binary objectives -------------------------------------------

// -E[log P(observed|Y)] + alpha KL(g||f) + (1-alpha) KL(f||g).
LossBundle deca_loss(const DifferentiableModel& f, const DifferentiableModel& g,
                     const DifferentiableModel& h, const DifferentiableModel& h_prime,
                     BinaryBatch batch, const DecaConfig& cfg, Phase phase);

// -E[log P(observed|Y)] + alpha KL(f||f') + (1-alpha) KL(f'||f), prior frozen.
LossBundle deca_p_loss(const DifferentiableModel& f, const DifferentiableModel& f_prior,
                       const DifferentiableModel& h, const DifferentiableModel& h_prime,
                       BinaryBatch batch, const DecaConfig& cfg, Phase phase);

// --- Multi-class objectives -------------------------------------------------

// Batch slice of a classification dataset.
struct MultiClassBatch {
  const MultiClassDataset* data = nullptr;
  std::span<const int> indices;
};

// Focus-class expectation with constant substitutions (phase 1):
//   observed == k:  -c1 (1 - P_f[k])              + log h(x,k)[k]   P_f[k]
//   observed != k:  -c2 (1 - P_f[k] - P_f[obs])   + log h(x,k)[obs] P_f[k]
// The channel model consumes f's penultimate embedding (detached) plus the
// one-hot focus class. Gradients flow to f and h.
LossBundle multiclass_expectation_phase1(const DifferentiableModel& f,
                                         const DifferentiableModel& h,
                                         const MultiClassBatch& batch, int focus_class,
                                         double c1, double c2, double eps = kProbClamp);

// Phase 2: constants replaced by live -log h terms under stop-gradient; only
// the focus-class channel trains, f receives gradients from every term.
LossBundle multiclass_expectation_phase2(const DifferentiableModel& f,
                                         const DifferentiableModel& h,
                                         const MultiClassBatch& batch, int focus_class,
                                         double eps = kProbClamp);

enum class MultiPhase { kPhase1, kPhase2 };

// -E[log P(observed|Y)] + sum_i KL(f(x_i) || f'(x_i)), batch-averaged.
LossBundle deca_p_multiclass_loss(const DifferentiableModel& f,
                                  const DifferentiableModel& f_prior,
                                  const DifferentiableModel& h, const MultiClassBatch& batch,
                                  const DecaConfig& cfg, int focus_class, MultiPhase phase);

// --- Interpretation ----------------------------------------------------------

enum class DenoiseMode { kDeca, kDecaP };

// P(true=1 | observed=1) for an interacted pair. DeCA mode uses the channel
// posterior h'f / (h'f + h(1-f)); DeCA(p) returns f directly. The h models may
// be null in DeCA(p) mode.
double real_positive_probability(const DifferentiableModel& f, const DifferentiableModel* h,
                                 const DifferentiableModel* h_prime,
                                 const ImplicitDataset& data, int user, int item,
                                 DenoiseMode mode, double eps = kProbClamp);

}  // namespace deca
