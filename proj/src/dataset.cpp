#include "deca/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace deca {

void ImplicitDataset::finalize() {
  observed_.clear();
  observed_.reserve(interactions.size() * 2);
  item_popularity_.assign(num_items, 0);
  items_by_user_.assign(num_users, {});
  for (const Interaction& it : interactions) {
    if (it.user < 0 || it.user >= num_users || it.item < 0 || it.item >= num_items) {
      throw DataError("interaction (" + std::to_string(it.user) + ", " + std::to_string(it.item) +
                      ") outside dataset dimensions");
    }
    observed_.insert(pair_key(it.user, it.item));
    ++item_popularity_[it.item];
    items_by_user_[it.user].push_back(it.item);
  }
  popularity_prefix_.assign(num_items, 0.0);
  double running = 0.0;
  for (int item = 0; item < num_items; ++item) {
    running += item_popularity_[item];
    popularity_prefix_[item] = running;
  }
}

bool ImplicitDataset::observed(int user, int item) const {
  return observed_.count(pair_key(user, item)) > 0;
}

bool ImplicitDataset::true_positive(int user, int item) const {
  if (!dense_truth.empty()) return dense_truth[pair_key(user, item)] != 0;
  auto it = sparse_truth.find(pair_key(user, item));
  return it != sparse_truth.end() && it->second != 0;
}

nlohmann::json ImplicitDataset::to_json() const {
  nlohmann::json j;
  j["meta"] = {{"type", "implicit"}, {"num_users", num_users}, {"num_items", num_items}};
  nlohmann::json rows = nlohmann::json::array();
  for (const Interaction& it : interactions) {
    rows.push_back({it.user, it.item, it.rating, it.timestamp});
  }
  j["interactions"] = std::move(rows);
  if (!dense_truth.empty()) {
    j["true_labels"] = {{"dense", std::vector<int>(dense_truth.begin(), dense_truth.end())}};
  } else {
    nlohmann::json entries = nlohmann::json::array();
    std::vector<std::pair<std::int64_t, int>> sorted(sparse_truth.begin(), sparse_truth.end());
    std::sort(sorted.begin(), sorted.end());
    for (const auto& [key, value] : sorted) entries.push_back({key, value});
    j["true_labels"] = {{"sparse", std::move(entries)}};
  }
  return j;
}

ImplicitDataset ImplicitDataset::from_json(const nlohmann::json& j) {
  if (j.at("meta").at("type") != "implicit") throw DataError("not an implicit dataset document");
  ImplicitDataset d;
  d.num_users = j.at("meta").at("num_users").get<int>();
  d.num_items = j.at("meta").at("num_items").get<int>();
  for (const auto& row : j.at("interactions")) {
    d.interactions.push_back({row.at(0).get<int>(), row.at(1).get<int>(), row.at(2).get<int>(),
                              row.at(3).get<std::int64_t>()});
  }
  const auto& truth = j.at("true_labels");
  if (truth.contains("dense")) {
    for (int v : truth.at("dense")) d.dense_truth.push_back(static_cast<std::uint8_t>(v));
  } else {
    for (const auto& entry : truth.at("sparse")) {
      d.sparse_truth[entry.at(0).get<std::int64_t>()] =
          static_cast<std::uint8_t>(entry.at(1).get<int>());
    }
  }
  d.finalize();
  return d;
}

nlohmann::json MultiClassDataset::to_json() const {
  nlohmann::json j;
  j["meta"] = {{"type", "multiclass"},
               {"num_classes", num_classes},
               {"feature_dim", feature_dim},
               {"noise_ratio", noise_ratio}};
  j["features"] = features;
  j["noisy_labels"] = noisy_labels;
  j["true_labels"] = true_labels;
  return j;
}

MultiClassDataset MultiClassDataset::from_json(const nlohmann::json& j) {
  if (j.at("meta").at("type") != "multiclass") throw DataError("not a multiclass dataset document");
  MultiClassDataset d;
  d.num_classes = j.at("meta").at("num_classes").get<int>();
  d.feature_dim = j.at("meta").at("feature_dim").get<int>();
  d.noise_ratio = j.at("meta").at("noise_ratio").get<double>();
  d.features = j.at("features").get<std::vector<double>>();
  d.noisy_labels = j.at("noisy_labels").get<std::vector<int>>();
  d.true_labels = j.at("true_labels").get<std::vector<int>>();
  return d;
}

void SplitSpec::validate() const {
  if (std::abs(train_ratio + valid_ratio + test_ratio - 1.0) > 1e-9) {
    throw ConfigError("split ratios must sum to 1");
  }
  if (train_ratio < 0 || valid_ratio < 0 || test_ratio < 0) {
    throw ConfigError("split ratios must be non-negative");
  }
}

ImplicitDataset gen_planted_implicit(int num_users, int num_items, int latent_dim,
                                     double noise_pos, double noise_neg, std::uint64_t seed) {
  if (num_users < 1 || num_items < 1 || latent_dim < 1) {
    throw ConfigError("planted generator needs positive dimensions");
  }
  if (noise_pos < 0 || noise_pos >= 0.5 || noise_neg < 0 || noise_neg >= 0.5) {
    throw ConfigError("noise fractions must lie in [0, 0.5)");
  }

  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> user_fac(static_cast<std::size_t>(num_users) * latent_dim);
  std::vector<double> item_fac(static_cast<std::size_t>(num_items) * latent_dim);
  for (double& v : user_fac) v = gauss(rng);
  for (double& v : item_fac) v = gauss(rng);

  // Preference probability sigmoid(2 s / sqrt(d) - 1.2): wide spread, roughly
  // a quarter of all pairs positive.
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(latent_dim));
  ImplicitDataset data;
  data.num_users = num_users;
  data.num_items = num_items;
  data.dense_truth.assign(static_cast<std::size_t>(num_users) * num_items, 0);

  std::vector<double> pref(static_cast<std::size_t>(num_users) * num_items);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::pair<int, int>> true_pos;
  for (int u = 0; u < num_users; ++u) {
    for (int i = 0; i < num_items; ++i) {
      double dot = 0.0;
      for (int k = 0; k < latent_dim; ++k) {
        dot += user_fac[u * latent_dim + k] * item_fac[i * latent_dim + k];
      }
      const std::size_t key = static_cast<std::size_t>(u) * num_items + i;
      pref[key] = sigmoid(2.0 * dot * inv_sqrt_d - 1.2);
      if (unit(rng) < pref[key]) {
        data.dense_truth[key] = 1;
        true_pos.emplace_back(u, i);
      }
    }
  }

  // Exposure bias: withhold noise_neg of the true positives from observation.
  std::shuffle(true_pos.begin(), true_pos.end(), rng);
  const auto withheld = static_cast<std::size_t>(std::llround(noise_neg * true_pos.size()));
  std::vector<std::pair<int, int>> observed(true_pos.begin() + withheld, true_pos.end());

  // Positive corruption: swap noise_pos of the observed positives for true
  // negatives drawn uniformly without replacement.
  std::shuffle(observed.begin(), observed.end(), rng);
  const auto flips = static_cast<std::size_t>(std::llround(noise_pos * observed.size()));
  if (flips > 0) {
    std::vector<std::pair<int, int>> true_neg;
    true_neg.reserve(pref.size() - true_pos.size());
    for (int u = 0; u < num_users; ++u) {
      for (int i = 0; i < num_items; ++i) {
        if (data.dense_truth[static_cast<std::size_t>(u) * num_items + i] == 0) {
          true_neg.emplace_back(u, i);
        }
      }
    }
    if (true_neg.size() < flips) throw DataError("not enough true negatives to plant noise");
    std::shuffle(true_neg.begin(), true_neg.end(), rng);
    std::copy(true_neg.begin(), true_neg.begin() + flips, observed.begin());
  }

  std::sort(observed.begin(), observed.end());
  data.interactions.reserve(observed.size());
  std::uniform_int_distribution<std::int64_t> stamp(0, 1'000'000'000);
  for (const auto& [u, i] : observed) {
    data.interactions.push_back({u, i, 0, stamp(rng)});
  }

  // Ratings as quantile buckets of the true preference score: the top fifth
  // of observed pairs gets rating 5 and so on downwards.
  std::vector<std::size_t> order(data.interactions.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ia = data.interactions[a];
    const auto& ib = data.interactions[b];
    const double pa = pref[static_cast<std::size_t>(ia.user) * num_items + ia.item];
    const double pb = pref[static_cast<std::size_t>(ib.user) * num_items + ib.item];
    if (pa != pb) return pa < pb;
    return a < b;
  });
  const std::size_t n = order.size();
  for (std::size_t rank = 0; rank < n; ++rank) {
    const int bucket = 1 + static_cast<int>(rank * 5 / std::max<std::size_t>(n, 1));
    data.interactions[order[rank]].rating = std::min(bucket, 5);
  }

  data.finalize();
  return data;
}

MultiClassDataset gen_multiclass_blobs(int num_classes, int per_class, int dim, double spread,
                                       double noise_ratio, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("need at least two classes");
  if (per_class < 1 || dim < 1) throw ConfigError("blob generator needs positive dimensions");
  if (noise_ratio < 0 || noise_ratio >= 1.0) throw ConfigError("noise_ratio must lie in [0, 1)");

  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> centers(static_cast<std::size_t>(num_classes) * dim);
  for (double& v : centers) v = 3.0 * gauss(rng);

  MultiClassDataset data;
  data.num_classes = num_classes;
  data.feature_dim = dim;
  data.noise_ratio = noise_ratio;
  const int n = num_classes * per_class;
  data.features.resize(static_cast<std::size_t>(n) * dim);
  data.noisy_labels.resize(n);
  data.true_labels.resize(n);
  for (int idx = 0; idx < n; ++idx) {
    const int c = idx % num_classes;
    data.true_labels[idx] = c;
    data.noisy_labels[idx] = c;
    for (int k = 0; k < dim; ++k) {
      data.features[static_cast<std::size_t>(idx) * dim + k] =
          centers[static_cast<std::size_t>(c) * dim + k] + spread * gauss(rng);
    }
  }

  const auto flips = static_cast<std::size_t>(std::llround(noise_ratio * n));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<int> other(0, num_classes - 2);
  for (std::size_t f = 0; f < flips; ++f) {
    const int idx = order[f];
    int replacement = other(rng);
    if (replacement >= data.true_labels[idx]) ++replacement;  // never map to itself
    data.noisy_labels[idx] = replacement;
  }
  return data;
}

ImplicitDataset load_movielens_100k(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);

  ImplicitDataset data;
  std::unordered_map<int, int> user_ids, item_ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    std::istringstream row(line);
    long long raw_user, raw_item, rating, timestamp;
    if (!(row >> raw_user >> raw_item >> rating >> timestamp)) {
      throw DataError("line " + std::to_string(line_no) + ": expected 'user item rating timestamp'");
    }
    if (rating < 1 || rating > 5) {
      throw DataError("line " + std::to_string(line_no) + ": rating " + std::to_string(rating) +
                      " outside 1..5");
    }
    const auto [uit, unew] = user_ids.try_emplace(static_cast<int>(raw_user),
                                                  static_cast<int>(user_ids.size()));
    const auto [iit, inew] = item_ids.try_emplace(static_cast<int>(raw_item),
                                                  static_cast<int>(item_ids.size()));
    data.interactions.push_back(
        {uit->second, iit->second, static_cast<int>(rating), timestamp});
  }
  data.num_users = static_cast<int>(user_ids.size());
  data.num_items = static_cast<int>(item_ids.size());
  data.finalize();
  return data;
}

namespace {

ImplicitDataset make_slice(const ImplicitDataset& base, std::vector<Interaction> rows) {
  ImplicitDataset out;
  out.num_users = base.num_users;
  out.num_items = base.num_items;
  out.dense_truth = base.dense_truth;
  out.sparse_truth = base.sparse_truth;
  out.interactions = std::move(rows);
  std::sort(out.interactions.begin(), out.interactions.end(),
            [](const Interaction& a, const Interaction& b) {
              return std::tie(a.user, a.item, a.timestamp) < std::tie(b.user, b.item, b.timestamp);
            });
  out.finalize();
  return out;
}

}  // namespace

SplitResult split(const ImplicitDataset& data, const SplitSpec& spec, std::uint64_t seed) {
  spec.validate();

  std::vector<std::vector<std::size_t>> by_user(data.num_users);
  bool any_timestamp_spread = false;
  for (std::size_t idx = 0; idx < data.interactions.size(); ++idx) {
    by_user[data.interactions[idx].user].push_back(idx);
    if (data.interactions[idx].timestamp != data.interactions.front().timestamp) {
      any_timestamp_spread = true;
    }
  }
  if (spec.mode == SplitMode::kChronological && !any_timestamp_spread &&
      data.interactions.size() > 1) {
    throw ConfigError("chronological split requested but timestamps are absent");
  }

  // Derive sparse truth from the rating rule so clean/noisy labelling is
  // available downstream even for file-based data.
  ImplicitDataset annotated = data;
  if (spec.clean_rule == CleanRule::kRatingEquals && annotated.dense_truth.empty()) {
    for (const Interaction& it : annotated.interactions) {
      annotated.sparse_truth[annotated.pair_key(it.user, it.item)] =
          it.rating == spec.clean_rating ? 1 : 0;
    }
  }

  Rng rng(seed);
  std::vector<Interaction> train_rows, valid_rows, test_rows, dropped_rows;
  for (int u = 0; u < data.num_users; ++u) {
    auto& idxs = by_user[u];
    if (idxs.empty()) continue;
    if (spec.mode == SplitMode::kChronological) {
      std::stable_sort(idxs.begin(), idxs.end(), [&](std::size_t a, std::size_t b) {
        return data.interactions[a].timestamp < data.interactions[b].timestamp;
      });
    } else {
      std::shuffle(idxs.begin(), idxs.end(), rng);
    }
    const auto n = idxs.size();
    auto n_test = static_cast<std::size_t>(std::llround(spec.test_ratio * n));
    auto n_valid = static_cast<std::size_t>(std::llround(spec.valid_ratio * n));
    n_test = std::min(n_test, n);
    n_valid = std::min(n_valid, n - n_test);
    const std::size_t n_train = n - n_test - n_valid;
    for (std::size_t pos = 0; pos < n; ++pos) {
      const Interaction& it = data.interactions[idxs[pos]];
      if (pos < n_train) {
        train_rows.push_back(it);
      } else if (pos < n_train + n_valid) {
        valid_rows.push_back(it);
      } else {
        const bool clean = spec.clean_rule == CleanRule::kRatingEquals
                               ? it.rating == spec.clean_rating
                               : annotated.true_positive(it.user, it.item);
        (clean ? test_rows : dropped_rows).push_back(it);
      }
    }
  }

  SplitResult result;
  result.dropped_test = static_cast<int>(dropped_rows.size());
  result.clean_test_empty = test_rows.empty();
  result.train = make_slice(annotated, std::move(train_rows));
  result.valid = make_slice(annotated, std::move(valid_rows));
  result.test = make_slice(annotated, std::move(test_rows));
  return result;
}

MultiClassSplit split_multiclass(const MultiClassDataset& data, double train_ratio,
                                 double valid_ratio, std::uint64_t seed) {
  if (train_ratio <= 0 || valid_ratio < 0 || train_ratio + valid_ratio >= 1.0 + 1e-12) {
    throw ConfigError("multiclass split ratios invalid");
  }
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const auto n = static_cast<std::size_t>(data.size());
  const auto n_train = static_cast<std::size_t>(std::llround(train_ratio * n));
  const auto n_valid = static_cast<std::size_t>(std::llround(valid_ratio * n));

  auto take = [&](std::size_t begin, std::size_t end) {
    MultiClassDataset out;
    out.num_classes = data.num_classes;
    out.feature_dim = data.feature_dim;
    out.noise_ratio = data.noise_ratio;
    for (std::size_t pos = begin; pos < end && pos < n; ++pos) {
      const int idx = order[pos];
      const auto row = data.row(idx);
      out.features.insert(out.features.end(), row.begin(), row.end());
      out.noisy_labels.push_back(data.noisy_labels[idx]);
      out.true_labels.push_back(data.true_labels[idx]);
    }
    return out;
  };

  MultiClassSplit result;
  result.train = take(0, n_train);
  result.valid = take(n_train, n_train + n_valid);
  result.test = take(n_train + n_valid, n);
  return result;
}

namespace {

int draw_missing_uniform(const ImplicitDataset& data, int user, Rng& rng) {
  const auto& owned = data.items_by_user()[user];
  const int missing = data.num_items - static_cast<int>(owned.size());
  if (missing <= 0) {
    throw DataError("user " + std::to_string(user) + " has no missing items to sample");
  }
  if (owned.size() * 2 < static_cast<std::size_t>(data.num_items)) {
    std::uniform_int_distribution<int> pick(0, data.num_items - 1);
    while (true) {
      const int item = pick(rng);
      if (!data.observed(user, item)) return item;
    }
  }
  std::vector<int> pool;
  pool.reserve(missing);
  for (int item = 0; item < data.num_items; ++item) {
    if (!data.observed(user, item)) pool.push_back(item);
  }
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  return pool[pick(rng)];
}

// Exact popularity-weighted draw over the user's missing items; linear in
// num_items, used as the fallback when rejection sampling keeps colliding.
int draw_missing_wbpr_exact(const ImplicitDataset& data, int user, Rng& rng) {
  std::vector<int> pool;
  std::vector<double> cumulative;
  double total = 0.0;
  for (int item = 0; item < data.num_items; ++item) {
    if (data.observed(user, item)) continue;
    pool.push_back(item);
    total += data.item_popularity()[item];
    cumulative.push_back(total);
  }
  if (pool.empty()) {
    throw DataError("user " + std::to_string(user) + " has no missing items to sample");
  }
  if (total <= 0.0) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    return pool[pick(rng)];
  }
  std::uniform_real_distribution<double> pick(0.0, total);
  const double r = pick(rng);
  const auto it = std::lower_bound(cumulative.begin(), cumulative.end(), r);
  return pool[std::distance(cumulative.begin(), it)];
}

int draw_missing_wbpr(const ImplicitDataset& data, int user, Rng& rng) {
  const auto& prefix = data.popularity_prefix();
  const double total = prefix.empty() ? 0.0 : prefix.back();
  if (total > 0.0) {
    // Global popularity draw with rejection of the user's own items.
    std::uniform_real_distribution<double> pick(0.0, total);
    for (int attempt = 0; attempt < 64; ++attempt) {
      const auto it = std::lower_bound(prefix.begin(), prefix.end(), pick(rng));
      const int item = static_cast<int>(std::distance(prefix.begin(), it));
      if (!data.observed(user, item)) return item;
    }
  }
  return draw_missing_wbpr_exact(data, user, rng);
}

}  // namespace

std::vector<std::pair<int, int>> sample_negatives(const ImplicitDataset& data,
                                                  std::span<const std::pair<int, int>> positives,
                                                  NegStrategy strategy, Rng& rng) {
  std::vector<std::pair<int, int>> negatives;
  negatives.reserve(positives.size());
  for (const auto& [user, item] : positives) {
    (void)item;
    const int neg = strategy == NegStrategy::kUniform ? draw_missing_uniform(data, user, rng)
                                                      : draw_missing_wbpr(data, user, rng);
    negatives.emplace_back(user, neg);
  }
  return negatives;
}

std::vector<std::pair<int, int>> sample_negatives(const ImplicitDataset& data,
                                                  std::span<const std::pair<int, int>> positives,
                                                  NegStrategy strategy, std::uint64_t seed) {
  Rng rng(seed);
  return sample_negatives(data, positives, strategy, rng);
}

}  // namespace deca
