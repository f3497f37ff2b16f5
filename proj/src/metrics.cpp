#include "ftmamba/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace ftmamba {

namespace {

void validate(const std::vector<int>& ranked, int k) {
  if (k < 1) throw std::invalid_argument("metrics: k must be >= 1");
  std::unordered_set<int> seen;
  for (int item : ranked) {
    if (!seen.insert(item).second) {
      throw std::invalid_argument("metrics: duplicate item " + std::to_string(item) +
                                  " in ranked list");
    }
  }
}

int top_k(const std::vector<int>& ranked, int k) {
  return std::min<int>(k, static_cast<int>(ranked.size()));
}

}  // namespace

double precision_at(const std::vector<int>& ranked, const std::unordered_set<int>& relevant,
                    int k) {
  validate(ranked, k);
  const int n = top_k(ranked, k);
  int hits = 0;
  for (int i = 0; i < n; ++i) hits += relevant.count(ranked[i]) ? 1 : 0;
  return static_cast<double>(hits) / k;
}

double recall_at(const std::vector<int>& ranked, const std::unordered_set<int>& relevant, int k) {
  validate(ranked, k);
  if (relevant.empty()) {
    throw std::invalid_argument("recall_at: undefined for an empty relevant set");
  }
  const int n = top_k(ranked, k);
  int hits = 0;
  for (int i = 0; i < n; ++i) hits += relevant.count(ranked[i]) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double mrr_at(const std::vector<int>& ranked, const std::unordered_set<int>& relevant, int k) {
  validate(ranked, k);
  const int n = top_k(ranked, k);
  for (int i = 0; i < n; ++i) {
    if (relevant.count(ranked[i])) return 1.0 / (i + 1);
  }
  return 0.0;
}

double hit_at(const std::vector<int>& ranked, const std::unordered_set<int>& relevant, int k) {
  validate(ranked, k);
  const int n = top_k(ranked, k);
  for (int i = 0; i < n; ++i) {
    if (relevant.count(ranked[i])) return 1.0;
  }
  return 0.0;
}

double map_at(const std::vector<int>& ranked, const std::unordered_set<int>& relevant, int k) {
  validate(ranked, k);
  if (relevant.empty()) {
    throw std::invalid_argument("map_at: undefined for an empty relevant set");
  }
  const int n = top_k(ranked, k);
  int hits = 0;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    if (relevant.count(ranked[i])) {
      ++hits;
      sum += static_cast<double>(hits) / (i + 1);
    }
  }
  const int denom = std::min<int>(k, static_cast<int>(relevant.size()));
  return sum / denom;
}

AggregateResult aggregate_metrics(const std::vector<RankedUser>& users,
                                  const std::vector<int>& ks) {
  AggregateResult out;
  std::vector<const RankedUser*> included;
  for (const RankedUser& u : users) {
    if (u.relevant.empty()) {
      ++out.excluded_users;
    } else {
      included.push_back(&u);
    }
  }
  out.included_users = static_cast<int>(included.size());
  for (int k : ks) {
    double p = 0, r = 0, mrr = 0, hr = 0, map = 0;
    for (const RankedUser* u : included) {
      p += precision_at(u->ranked, u->relevant, k);
      r += recall_at(u->ranked, u->relevant, k);
      mrr += mrr_at(u->ranked, u->relevant, k);
      hr += hit_at(u->ranked, u->relevant, k);
      map += map_at(u->ranked, u->relevant, k);
    }
    const double n = included.empty() ? 1.0 : static_cast<double>(included.size());
    out.rows.push_back({"P", k, p / n});
    out.rows.push_back({"R", k, r / n});
    out.rows.push_back({"MRR", k, mrr / n});
    out.rows.push_back({"HR", k, hr / n});
    out.rows.push_back({"MAP", k, map / n});
  }
  return out;
}

std::vector<double> diff_profile(const std::vector<SeedRecommendations>& seeds) {
  if (seeds.empty()) throw std::invalid_argument("diff_profile: no seeds");
  const int items = seeds.front().item_count;
  std::vector<double> profile(items, 0.0);
  for (const SeedRecommendations& seed : seeds) {
    if (seed.item_count != items) {
      throw std::invalid_argument("diff_profile: seeds disagree on item count");
    }
    if (seed.recommended.size() != seed.liked.size()) {
      throw std::invalid_argument("diff_profile: user count mismatch");
    }
    std::vector<long> likes(items, 0), recs(items, 0);
    for (std::size_t u = 0; u < seed.liked.size(); ++u) {
      if (seed.recommended[u].size() != seed.liked[u].size()) {
        throw std::invalid_argument("diff_profile: user " + std::to_string(u) + " got " +
                                    std::to_string(seed.recommended[u].size()) +
                                    " recommendations for " + std::to_string(seed.liked[u].size()) +
                                    " likes");
      }
      for (int item : seed.liked[u]) ++likes.at(item);
      for (int item : seed.recommended[u]) ++recs.at(item);
    }
    std::vector<int> order(items);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (likes[a] != likes[b]) return likes[a] > likes[b];
      return a < b;
    });
    for (int r = 0; r < items; ++r) {
      profile[r] += static_cast<double>(recs[order[r]] - likes[order[r]]);
    }
  }
  for (double& v : profile) v /= static_cast<double>(seeds.size());
  return profile;
}

}  // namespace ftmamba
