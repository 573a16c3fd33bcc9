#pragma once

#include <map>
#include <span>
#include <utility>
#include <vector>

#include "deca/dataset.hpp"
#include "deca/losses.hpp"
#include "deca/model.hpp"

namespace deca {

// Per-user ranking evaluation pool: candidates are every item the user did
// not interact with in training, relevance comes from the clean eval split.
// `max_candidates > 0` switches to a sampled pool: the user's relevant items
// plus a seeded uniform sample of other non-train items up to that size.
struct RankingEvalSet {
  struct UserEval {
    int user = 0;
    std::vector<int> candidates;
    std::vector<int> relevant;
  };
  std::vector<UserEval> users;
  int skipped_users = 0;

  static RankingEvalSet build(const ImplicitDataset& train, const ImplicitDataset& eval_positives,
                              int max_candidates = 0, std::uint64_t seed = 0x5EED);
};

struct RankingMetrics {
  std::map<int, double> recall_at;
  std::map<int, double> ndcg_at;
  int users_evaluated = 0;
  int users_skipped = 0;
};

// Macro-averaged recall@K / ndcg@K with binary gains, log2 discount, and
// score ties broken by ascending item id.
RankingMetrics recall_ndcg(const DifferentiableModel& model, const RankingEvalSet& eval,
                           std::span<const int> ks);

enum class LabelSet { kTrue, kNoisy };

// Argmax accuracy; ties resolved toward the lowest class index.
double accuracy(const DifferentiableModel& model, const MultiClassDataset& data,
                LabelSet labels = LabelSet::kTrue);

struct DisagreementRecord {
  int user = -1;
  int item = -1;
  int index = -1;
  double a = 0.0;
  double b = 0.0;
  double diff = 0.0;
};

struct DisagreementReport {
  double mean_diff_clean = 0.0;
  double mean_diff_noisy = 0.0;
  double mean_agree_clean = 1.0;
  double mean_agree_noisy = 1.0;
  std::vector<DisagreementRecord> records;
};

// |I(a >= 0.5) - I(b >= 0.5)| averaged separately over clean and noisy pairs.
DisagreementReport disagreement_binary(const DifferentiableModel& a, const DifferentiableModel& b,
                                       std::span<const std::pair<int, int>> clean_pairs,
                                       std::span<const std::pair<int, int>> noisy_pairs);

// Argmax agreement indicator per instance; both agreement and difference
// (1 - agreement) are reported.
DisagreementReport disagreement_multiclass(const DifferentiableModel& a,
                                           const DifferentiableModel& b,
                                           const MultiClassDataset& data);

struct RatingBucketReport {
  std::map<int, double> mean_prob;
  std::map<int, int> counts;
  std::vector<int> empty_buckets;
};

// Mean real-positive probability of interacted pairs grouped by rating.
RatingBucketReport rating_bucket_probability(const DifferentiableModel& f,
                                             const DifferentiableModel* h,
                                             const DifferentiableModel* h_prime,
                                             const ImplicitDataset& data, DenoiseMode mode);

double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace deca
