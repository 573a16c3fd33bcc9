#include "deca/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <limits>
#include <set>

#include "doctest.h"

using namespace deca;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  const std::string path = "/tmp/" + name;
  std::ofstream(path) << content;
  return path;
}

}  // namespace

TEST_CASE("planted generator with zero noise matches hidden truth exactly") {
  const ImplicitDataset data = gen_planted_implicit(30, 25, 4, 0.0, 0.0, 11);
  std::size_t true_count = 0;
  for (int u = 0; u < data.num_users; ++u) {
    for (int i = 0; i < data.num_items; ++i) {
      if (data.true_positive(u, i)) {
        ++true_count;
        CHECK(data.observed(u, i));
      } else {
        CHECK_FALSE(data.observed(u, i));
      }
    }
  }
  CHECK(true_count == data.interactions.size());
}

TEST_CASE("planted generator plants the requested positive noise") {
  const ImplicitDataset data = gen_planted_implicit(50, 40, 4, 0.3, 0.0, 7);
  std::size_t flipped = 0;
  for (const Interaction& it : data.interactions) {
    if (!data.true_positive(it.user, it.item)) ++flipped;
  }
  const double fraction = static_cast<double>(flipped) / data.interactions.size();
  CHECK(fraction >= 0.28);
  CHECK(fraction <= 0.32);
}

TEST_CASE("planted generator is deterministic") {
  const auto a = gen_planted_implicit(20, 15, 3, 0.2, 0.1, 42);
  const auto b = gen_planted_implicit(20, 15, 3, 0.2, 0.1, 42);
  CHECK(a.to_json().dump() == b.to_json().dump());
  const auto c = gen_planted_implicit(20, 15, 3, 0.2, 0.1, 43);
  CHECK(a.to_json().dump() != c.to_json().dump());
}

TEST_CASE("planted generator rejects uninformative noise levels") {
  CHECK_THROWS_AS(gen_planted_implicit(10, 10, 2, 0.5, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(gen_planted_implicit(10, 10, 2, 0.0, 0.6, 1), ConfigError);
  CHECK_THROWS_AS(gen_planted_implicit(0, 10, 2, 0.0, 0.0, 1), ConfigError);
}

TEST_CASE("planted ratings rise with true preference") {
  const ImplicitDataset data = gen_planted_implicit(40, 30, 4, 0.0, 0.0, 3);
  // Every rating bucket 1..5 should be populated on a dataset of this size.
  std::set<int> seen;
  for (const Interaction& it : data.interactions) seen.insert(it.rating);
  CHECK(seen == std::set<int>{1, 2, 3, 4, 5});
}

TEST_CASE("blob generator corrupts the exact number of labels") {
  const MultiClassDataset clean = gen_multiclass_blobs(4, 250, 2, 1.0, 0.0, 5);
  CHECK(clean.noisy_labels == clean.true_labels);

  const MultiClassDataset noisy = gen_multiclass_blobs(4, 250, 2, 1.0, 0.4, 5);
  int flipped = 0;
  for (int i = 0; i < noisy.size(); ++i) {
    if (noisy.noisy_labels[i] != noisy.true_labels[i]) ++flipped;
  }
  CHECK(flipped == 400);
}

TEST_CASE("blob generator boundary noise ratios") {
  CHECK_NOTHROW(gen_multiclass_blobs(2, 10, 2, 1.0, 0.5, 1));
  CHECK_NOTHROW(gen_multiclass_blobs(2, 10, 2, 1.0, 0.999, 1));
  CHECK_THROWS_AS(gen_multiclass_blobs(2, 10, 2, 1.0, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(gen_multiclass_blobs(1, 10, 2, 1.0, 0.0, 1), ConfigError);
}

TEST_CASE("blob labels always stay inside the class range") {
  const MultiClassDataset data = gen_multiclass_blobs(3, 100, 2, 1.5, 0.7, 9);
  for (int i = 0; i < data.size(); ++i) {
    CHECK(data.noisy_labels[i] >= 0);
    CHECK(data.noisy_labels[i] < 3);
    if (data.noisy_labels[i] != data.true_labels[i]) {
      // replacement never maps a label to itself
      CHECK(data.noisy_labels[i] != data.true_labels[i]);
    }
  }
}

TEST_CASE("movielens loader parses rows and reindexes ids") {
  const auto path = write_temp("ml_ok.txt", "1 10 5 100\n1 11 2 200\n");
  const ImplicitDataset data = load_movielens_100k(path);
  CHECK(data.num_users == 1);
  CHECK(data.num_items == 2);
  REQUIRE(data.interactions.size() == 2);
  CHECK(data.interactions[0].rating == 5);
  CHECK(data.interactions[1].rating == 2);
}

TEST_CASE("movielens loader accepts an empty file") {
  const auto path = write_temp("ml_empty.txt", "");
  const ImplicitDataset data = load_movielens_100k(path);
  CHECK(data.num_users == 0);
  CHECK(data.interactions.empty());
}

TEST_CASE("movielens loader rejects out-of-range ratings with the value") {
  const auto path = write_temp("ml_bad_rating.txt", "1 10 9 100\n");
  CHECK_THROWS_WITH_AS(load_movielens_100k(path),
                       doctest::Contains("rating 9"), DataError);
}

TEST_CASE("movielens loader names the malformed line") {
  const auto path = write_temp("ml_bad_row.txt", "1 10 5 100\n1 abc\n");
  CHECK_THROWS_WITH_AS(load_movielens_100k(path), doctest::Contains("line 2"), DataError);
}

namespace {

ImplicitDataset single_user_dataset(int n, int rating) {
  ImplicitDataset data;
  data.num_users = 1;
  data.num_items = n;
  for (int i = 0; i < n; ++i) data.interactions.push_back({0, i, rating, 100 + i});
  data.finalize();
  return data;
}

}  // namespace

TEST_CASE("split respects the 8:1:1 ratio") {
  const ImplicitDataset data = single_user_dataset(10, 5);
  SplitSpec spec;
  const SplitResult result = split(data, spec, 1);
  CHECK(result.train.interactions.size() == 8);
  CHECK(result.valid.interactions.size() == 1);
  CHECK(result.test.interactions.size() + result.dropped_test == 1);
}

TEST_CASE("split flags an empty clean test") {
  const ImplicitDataset data = single_user_dataset(10, 3);  // nothing rated 5
  SplitSpec spec;
  const SplitResult result = split(data, spec, 1);
  CHECK(result.clean_test_empty);
  CHECK(result.test.interactions.empty());
  CHECK(result.dropped_test == 1);
}

TEST_CASE("chronological split orders train before test per user") {
  const ImplicitDataset data = gen_planted_implicit(25, 20, 3, 0.1, 0.0, 17);
  SplitSpec spec;
  spec.mode = SplitMode::kChronological;
  spec.clean_rule = CleanRule::kHiddenTruth;
  const SplitResult result = split(data, spec, 1);
  for (int u = 0; u < data.num_users; ++u) {
    std::int64_t max_train = std::numeric_limits<std::int64_t>::min();
    std::int64_t min_test = std::numeric_limits<std::int64_t>::max();
    for (const Interaction& it : result.train.interactions) {
      if (it.user == u) max_train = std::max(max_train, it.timestamp);
    }
    for (const Interaction& it : result.test.interactions) {
      if (it.user == u) min_test = std::min(min_test, it.timestamp);
    }
    if (max_train != std::numeric_limits<std::int64_t>::min() &&
        min_test != std::numeric_limits<std::int64_t>::max()) {
      CHECK(max_train <= min_test);
    }
  }
}

TEST_CASE("chronological split without timestamps is a config error") {
  ImplicitDataset data;
  data.num_users = 1;
  data.num_items = 4;
  for (int i = 0; i < 4; ++i) data.interactions.push_back({0, i, 5, 0});
  data.finalize();
  SplitSpec spec;
  spec.mode = SplitMode::kChronological;
  CHECK_THROWS_AS(split(data, spec, 1), ConfigError);
}

TEST_CASE("splits partition the dataset") {
  for (const SplitMode mode : {SplitMode::kRandom, SplitMode::kChronological}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const ImplicitDataset data = gen_planted_implicit(30, 20, 3, 0.2, 0.1, 23 + seed);
      SplitSpec spec;
      spec.mode = mode;
      spec.clean_rule = CleanRule::kHiddenTruth;
      const SplitResult result = split(data, spec, 9 + seed);

      auto keys = [&](const ImplicitDataset& d) {
        std::set<std::int64_t> out;
        for (const Interaction& it : d.interactions) out.insert(d.pair_key(it.user, it.item));
        return out;
      };
      const auto train = keys(result.train);
      const auto valid = keys(result.valid);
      const auto test = keys(result.test);
      const std::size_t total =
          train.size() + valid.size() + test.size() + result.dropped_test;
      CHECK(total == data.interactions.size());
      for (const auto key : valid) CHECK(train.count(key) == 0);
      for (const auto key : test) {
        CHECK(train.count(key) == 0);
        CHECK(valid.count(key) == 0);
      }
    }
  }
}

TEST_CASE("split ratios must sum to one") {
  SplitSpec spec;
  spec.train_ratio = 0.5;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("negative sampling is forced when one item is missing") {
  ImplicitDataset data;
  data.num_users = 1;
  data.num_items = 5;
  for (int i = 0; i < 5; ++i) {
    if (i != 3) data.interactions.push_back({0, i, 5, i});
  }
  data.finalize();
  const std::vector<std::pair<int, int>> positives{{0, 0}};
  for (const NegStrategy strategy : {NegStrategy::kUniform, NegStrategy::kWbpr}) {
    const auto negatives = sample_negatives(data, positives, strategy, std::uint64_t{1});
    REQUIRE(negatives.size() == 1);
    CHECK(negatives[0] == std::pair<int, int>{0, 3});
  }
}

TEST_CASE("wbpr sampling follows item popularity") {
  // Item 0 carries popularity 99, item 1 popularity 1; user 0 rated neither.
  ImplicitDataset data;
  data.num_users = 101;
  data.num_items = 2;
  for (int u = 1; u <= 99; ++u) data.interactions.push_back({u, 0, 5, u});
  data.interactions.push_back({100, 1, 5, 100});
  data.finalize();

  std::vector<std::pair<int, int>> positives(10000, {0, 0});
  const auto negatives = sample_negatives(data, positives, NegStrategy::kWbpr, std::uint64_t{3});
  int popular = 0;
  for (const auto& [user, item] : negatives) {
    if (item == 0) ++popular;
  }
  const double fraction = popular / 10000.0;
  CHECK(fraction >= 0.97);
  CHECK(fraction <= 0.995);
}

TEST_CASE("negative sampling never returns an observed pair and is deterministic") {
  const ImplicitDataset data = gen_planted_implicit(12, 10, 3, 0.2, 0.0, 31);
  std::vector<std::pair<int, int>> positives;
  for (const Interaction& it : data.interactions) positives.emplace_back(it.user, it.item);

  const auto a = sample_negatives(data, positives, NegStrategy::kUniform, std::uint64_t{5});
  const auto b = sample_negatives(data, positives, NegStrategy::kUniform, std::uint64_t{5});
  CHECK(a == b);
  for (const auto& [user, item] : a) CHECK_FALSE(data.observed(user, item));
}

TEST_CASE("sampling fails cleanly for a saturated user") {
  ImplicitDataset data;
  data.num_users = 1;
  data.num_items = 2;
  data.interactions.push_back({0, 0, 5, 0});
  data.interactions.push_back({0, 1, 5, 1});
  data.finalize();
  const std::vector<std::pair<int, int>> positives{{0, 0}};
  CHECK_THROWS_AS(sample_negatives(data, positives, NegStrategy::kUniform, std::uint64_t{1}),
                  DataError);
}

TEST_CASE("out-of-range interactions are rejected at finalize") {
  ImplicitDataset data;
  data.num_users = 2;
  data.num_items = 2;
  data.interactions.push_back({5, 0, 5, 0});
  CHECK_THROWS_AS(data.finalize(), DataError);
}

TEST_CASE("dataset JSON round trips") {
  const ImplicitDataset implicit = gen_planted_implicit(10, 8, 3, 0.1, 0.1, 2);
  const auto implicit_round = ImplicitDataset::from_json(implicit.to_json());
  CHECK(implicit.to_json().dump() == implicit_round.to_json().dump());

  const MultiClassDataset blobs = gen_multiclass_blobs(3, 20, 2, 1.0, 0.3, 2);
  const auto blobs_round = MultiClassDataset::from_json(blobs.to_json());
  CHECK(blobs.to_json().dump() == blobs_round.to_json().dump());
}

TEST_CASE("multiclass split partitions examples") {
  const MultiClassDataset data = gen_multiclass_blobs(4, 50, 2, 1.0, 0.4, 8);
  const MultiClassSplit splits = split_multiclass(data, 0.7, 0.15, 4);
  CHECK(splits.train.size() + splits.valid.size() + splits.test.size() == data.size());
  CHECK(splits.train.size() == 140);
}
