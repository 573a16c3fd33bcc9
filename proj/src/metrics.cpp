#include "deca/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace deca {

RankingEvalSet RankingEvalSet::build(const ImplicitDataset& train,
                                     const ImplicitDataset& eval_positives, int max_candidates,
                                     std::uint64_t seed) {
  RankingEvalSet set;
  Rng rng(seed);
  for (int u = 0; u < eval_positives.num_users; ++u) {
    const auto& relevant = eval_positives.items_by_user()[u];
    if (relevant.empty()) continue;
    UserEval ue;
    ue.user = u;
    ue.relevant = relevant;
    std::sort(ue.relevant.begin(), ue.relevant.end());
    for (int item = 0; item < train.num_items; ++item) {
      if (!train.observed(u, item)) ue.candidates.push_back(item);
    }
    if (max_candidates > 0 && static_cast<int>(ue.candidates.size()) > max_candidates) {
      std::vector<int> pool;
      for (const int item : ue.candidates) {
        if (!std::binary_search(ue.relevant.begin(), ue.relevant.end(), item)) {
          pool.push_back(item);
        }
      }
      std::shuffle(pool.begin(), pool.end(), rng);
      std::vector<int> sampled = ue.relevant;
      for (const int item : pool) {
        if (static_cast<int>(sampled.size()) >= max_candidates) break;
        sampled.push_back(item);
      }
      std::sort(sampled.begin(), sampled.end());
      ue.candidates = std::move(sampled);
    }
    if (ue.candidates.empty()) {
      ++set.skipped_users;
      continue;
    }
    set.users.push_back(std::move(ue));
  }
  return set;
}

RankingMetrics recall_ndcg(const DifferentiableModel& model, const RankingEvalSet& eval,
                           std::span<const int> ks) {
  RankingMetrics metrics;
  metrics.users_skipped = eval.skipped_users;
  for (const int k : ks) {
    metrics.recall_at[k] = 0.0;
    metrics.ndcg_at[k] = 0.0;
  }
  if (eval.users.empty()) return metrics;

  std::vector<std::pair<double, int>> scored;
  for (const auto& ue : eval.users) {
    scored.clear();
    scored.reserve(ue.candidates.size());
    for (const int item : ue.candidates) {
      Input in;
      in.user = ue.user;
      in.item = item;
      scored.emplace_back(model.forward_scalar(in), item);
    }
    // Descending score, ties broken by ascending item id.
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });

    for (const int k : ks) {
      const int depth = std::min<int>(k, static_cast<int>(scored.size()));
      int hits = 0;
      double dcg = 0.0;
      for (int rank = 0; rank < depth; ++rank) {
        if (std::binary_search(ue.relevant.begin(), ue.relevant.end(), scored[rank].second)) {
          ++hits;
          dcg += 1.0 / std::log2(rank + 2.0);
        }
      }
      const int ideal = std::min<int>(k, static_cast<int>(ue.relevant.size()));
      double idcg = 0.0;
      for (int rank = 0; rank < ideal; ++rank) idcg += 1.0 / std::log2(rank + 2.0);
      metrics.recall_at[k] += static_cast<double>(hits) / ue.relevant.size();
      metrics.ndcg_at[k] += idcg > 0.0 ? dcg / idcg : 0.0;
    }
  }
  metrics.users_evaluated = static_cast<int>(eval.users.size());
  for (const int k : ks) {
    metrics.recall_at[k] /= metrics.users_evaluated;
    metrics.ndcg_at[k] /= metrics.users_evaluated;
  }
  return metrics;
}

namespace {

int argmax_lowest(std::span<const double> probs) {
  int best = 0;
  for (int c = 1; c < static_cast<int>(probs.size()); ++c) {
    if (probs[c] > probs[best]) best = c;
  }
  return best;
}

}  // namespace

double accuracy(const DifferentiableModel& model, const MultiClassDataset& data,
                LabelSet labels) {
  if (data.size() == 0) throw DataError("accuracy of an empty dataset is undefined");
  const std::vector<int>& truth =
      labels == LabelSet::kTrue ? data.true_labels : data.noisy_labels;
  int correct = 0;
  for (int i = 0; i < data.size(); ++i) {
    Input in;
    in.features = data.row(i);
    if (argmax_lowest(model.forward_vec(in)) == truth[i]) ++correct;
  }
  return static_cast<double>(correct) / data.size();
}

DisagreementReport disagreement_binary(const DifferentiableModel& a,
                                       const DifferentiableModel& b,
                                       std::span<const std::pair<int, int>> clean_pairs,
                                       std::span<const std::pair<int, int>> noisy_pairs) {
  DisagreementReport report;
  auto scan = [&](std::span<const std::pair<int, int>> pairs, double& mean) {
    if (pairs.empty()) return;
    double total = 0.0;
    for (const auto& [user, item] : pairs) {
      Input in;
      in.user = user;
      in.item = item;
      const double pa = a.forward_scalar(in);
      const double pb = b.forward_scalar(in);
      const double diff = std::abs((pa >= 0.5 ? 1.0 : 0.0) - (pb >= 0.5 ? 1.0 : 0.0));
      report.records.push_back({user, item, -1, pa, pb, diff});
      total += diff;
    }
    mean = total / pairs.size();
  };
  scan(clean_pairs, report.mean_diff_clean);
  scan(noisy_pairs, report.mean_diff_noisy);
  report.mean_agree_clean = 1.0 - report.mean_diff_clean;
  report.mean_agree_noisy = 1.0 - report.mean_diff_noisy;
  return report;
}

DisagreementReport disagreement_multiclass(const DifferentiableModel& a,
                                           const DifferentiableModel& b,
                                           const MultiClassDataset& data) {
  DisagreementReport report;
  double clean_total = 0.0, noisy_total = 0.0;
  int clean_count = 0, noisy_count = 0;
  for (int i = 0; i < data.size(); ++i) {
    Input in;
    in.features = data.row(i);
    const int pa = argmax_lowest(a.forward_vec(in));
    const int pb = argmax_lowest(b.forward_vec(in));
    const double diff = pa == pb ? 0.0 : 1.0;
    report.records.push_back({-1, -1, i, static_cast<double>(pa), static_cast<double>(pb), diff});
    if (data.noisy_labels[i] == data.true_labels[i]) {
      clean_total += diff;
      ++clean_count;
    } else {
      noisy_total += diff;
      ++noisy_count;
    }
  }
  if (clean_count > 0) report.mean_diff_clean = clean_total / clean_count;
  if (noisy_count > 0) report.mean_diff_noisy = noisy_total / noisy_count;
  report.mean_agree_clean = 1.0 - report.mean_diff_clean;
  report.mean_agree_noisy = 1.0 - report.mean_diff_noisy;
  return report;
}

RatingBucketReport rating_bucket_probability(const DifferentiableModel& f,
                                             const DifferentiableModel* h,
                                             const DifferentiableModel* h_prime,
                                             const ImplicitDataset& data, DenoiseMode mode) {
  RatingBucketReport report;
  std::map<int, double> totals;
  for (const Interaction& it : data.interactions) {
    const double p = real_positive_probability(f, h, h_prime, data, it.user, it.item, mode);
    totals[it.rating] += p;
    ++report.counts[it.rating];
  }
  for (const auto& [rating, total] : totals) {
    report.mean_prob[rating] = total / report.counts[rating];
  }
  for (int rating = 1; rating <= 5; ++rating) {
    if (report.counts.find(rating) == report.counts.end()) {
      report.empty_buckets.push_back(rating);
    }
  }
  return report;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw DataError("spearman needs two equal-length series of size >= 2");
  }
  auto ranks = [](std::span<const double> v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return v[a] < v[b];
    });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * (i + j) + 1.0;  // average rank for ties
      for (std::size_t p = i; p <= j; ++p) r[order[p]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double cov = 0, vx = 0, vy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    cov += (rx[i] - mx) * (ry[i] - my);
    vx += (rx[i] - mx) * (rx[i] - mx);
    vy += (ry[i] - my) * (ry[i] - my);
  }
  if (vx == 0.0 || vy == 0.0) return 0.0;
  return cov / std::sqrt(vx * vy);
}

}  // namespace deca
