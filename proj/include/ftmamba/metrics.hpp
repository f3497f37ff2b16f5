#pragma once

#include <string>
#include <unordered_set>
#include <vector>

// Ranking metrics over a single user's ranked candidate list, plus macro
// aggregation and the recommended-vs-liked rank profile.

namespace ftmamba {

double precision_at(const std::vector<int>& ranked, const std::unordered_set<int>& relevant,
                    int k);
double recall_at(const std::vector<int>& ranked, const std::unordered_set<int>& relevant, int k);
double mrr_at(const std::vector<int>& ranked, const std::unordered_set<int>& relevant, int k);
double hit_at(const std::vector<int>& ranked, const std::unordered_set<int>& relevant, int k);
double map_at(const std::vector<int>& ranked, const std::unordered_set<int>& relevant, int k);

struct RankedUser {
  std::vector<int> ranked;  // full candidate ranking, best first, no duplicates
  std::unordered_set<int> relevant;
};

struct MetricRow {
  std::string metric;  // "P", "R", "MRR", "HR", "MAP"
  int k = 0;
  double value = 0.0;
};

struct AggregateResult {
  std::vector<MetricRow> rows;  // macro means over included users
  int included_users = 0;
  int excluded_users = 0;  // zero-relevant users, reported but not averaged
};

AggregateResult aggregate_metrics(const std::vector<RankedUser>& users,
                                  const std::vector<int>& ks);

// One seed's worth of recommendations for the rank profile: per user, the
// recommended items (exactly as many as that user's likes) and the liked
// items.
struct SeedRecommendations {
  std::vector<std::vector<int>> recommended;
  std::vector<std::vector<int>> liked;
  int item_count = 0;
};

// Items are ordered per seed by total like count (descending, ties by item
// id); entry r is (#recommendations - #likes) of the rank-r item, averaged
// across seeds.
std::vector<double> diff_profile(const std::vector<SeedRecommendations>& seeds);

}  // namespace ftmamba
