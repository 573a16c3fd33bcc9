#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "deca/common.hpp"
#include "json.hpp"

namespace deca {

// One observed positive interaction. `rating` is 0 when the source has none.
struct Interaction {
  int user = 0;
  int item = 0;
  int rating = 0;
  std::int64_t timestamp = 0;
};

// Implicit-feedback dataset: stored interactions are the observed positives,
// every missing (user, item) pair is an implicit observed negative. True
// labels are kept alongside for evaluation only and must never feed training.
class ImplicitDataset {
 public:
  int num_users = 0;
  int num_items = 0;
  std::vector<Interaction> interactions;

  // Hidden truth. Planted generators fill `dense_truth` (num_users*num_items,
  // row-major). File loaders fill `sparse_truth` for rated pairs only; pairs
  // absent from both are treated as true negatives.
  std::vector<std::uint8_t> dense_truth;
  std::unordered_map<std::int64_t, std::uint8_t> sparse_truth;

  // Rebuilds the observation index and item popularity counts. Must be called
  // after the interaction list is mutated; generators and loaders do so.
  void finalize();

  bool observed(int user, int item) const;
  bool true_positive(int user, int item) const;
  const std::vector<int>& item_popularity() const { return item_popularity_; }
  const std::vector<std::vector<int>>& items_by_user() const { return items_by_user_; }
  // Prefix sums of item popularity, for popularity-proportional draws.
  const std::vector<double>& popularity_prefix() const { return popularity_prefix_; }

  std::int64_t pair_key(int user, int item) const {
    return static_cast<std::int64_t>(user) * num_items + item;
  }

  nlohmann::json to_json() const;
  static ImplicitDataset from_json(const nlohmann::json& j);

 private:
  std::unordered_set<std::int64_t> observed_;
  std::vector<int> item_popularity_;
  std::vector<double> popularity_prefix_;
  std::vector<std::vector<int>> items_by_user_;
};

// Feature-vector classification dataset with noisy labels; `true_labels` is
// evaluation-only. Also used for the generic binary task with num_classes=2.
struct MultiClassDataset {
  int num_classes = 0;
  int feature_dim = 0;
  std::vector<double> features;  // row-major, size() * feature_dim
  std::vector<int> noisy_labels;
  std::vector<int> true_labels;
  double noise_ratio = 0.0;

  int size() const { return static_cast<int>(noisy_labels.size()); }
  std::span<const double> row(int i) const {
    return {features.data() + static_cast<std::size_t>(i) * feature_dim,
            static_cast<std::size_t>(feature_dim)};
  }

  nlohmann::json to_json() const;
  static MultiClassDataset from_json(const nlohmann::json& j);
};

enum class SplitMode { kChronological, kRandom };

// Rule deciding which held-out interactions count as clean test positives.
enum class CleanRule { kRatingEquals, kHiddenTruth };

struct SplitSpec {
  SplitMode mode = SplitMode::kRandom;
  double train_ratio = 0.8;
  double valid_ratio = 0.1;
  double test_ratio = 0.1;
  CleanRule clean_rule = CleanRule::kRatingEquals;
  int clean_rating = 5;

  void validate() const;
};

struct SplitResult {
  ImplicitDataset train;
  ImplicitDataset valid;
  ImplicitDataset test;  // clean test: filtered by the clean rule
  int dropped_test = 0;  // held-out interactions rejected by the clean rule
  bool clean_test_empty = false;
};

// Planted low-rank logistic generator. True preferences come from a seeded
// latent-factor model; `noise_pos` of the observed positives are swapped for
// true negatives and `noise_neg` of the true positives are withheld from the
// observed set. Ratings are quantile buckets of the true preference score.
ImplicitDataset gen_planted_implicit(int num_users, int num_items, int latent_dim,
                                     double noise_pos, double noise_neg,
                                     std::uint64_t seed);

// Gaussian class blobs with exactly round(noise_ratio * N) labels replaced by
// a uniformly random *different* class.
MultiClassDataset gen_multiclass_blobs(int num_classes, int per_class, int dim,
                                       double spread, double noise_ratio,
                                       std::uint64_t seed);

// Whitespace-separated rows: user item rating timestamp. Ids are re-indexed
// densely in order of first appearance.
ImplicitDataset load_movielens_100k(const std::string& path);

SplitResult split(const ImplicitDataset& data, const SplitSpec& spec, std::uint64_t seed);

struct MultiClassSplit {
  MultiClassDataset train;
  MultiClassDataset valid;
  MultiClassDataset test;
};

MultiClassSplit split_multiclass(const MultiClassDataset& data, double train_ratio,
                                 double valid_ratio, std::uint64_t seed);

enum class NegStrategy { kUniform, kWbpr };

// One negative per positive, drawn from the user's missing items. WBPR draws
// proportionally to global item popularity restricted to missing items.
std::vector<std::pair<int, int>> sample_negatives(const ImplicitDataset& data,
                                                  std::span<const std::pair<int, int>> positives,
                                                  NegStrategy strategy, Rng& rng);

std::vector<std::pair<int, int>> sample_negatives(const ImplicitDataset& data,
                                                  std::span<const std::pair<int, int>> positives,
                                                  NegStrategy strategy, std::uint64_t seed);

}  // namespace deca
