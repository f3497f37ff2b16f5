#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "ftmamba/kmeans.hpp"

using namespace ftmamba;

namespace {

double sse(const std::vector<std::vector<double>>& pts, const std::vector<int>& label, int k) {
  const std::size_t dim = pts.front().size();
  std::vector<std::vector<double>> mean(k, std::vector<double>(dim, 0.0));
  std::vector<int> count(k, 0);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    ++count[label[i]];
    for (std::size_t j = 0; j < dim; ++j) mean[label[i]][j] += pts[i][j];
  }
  for (int c = 0; c < k; ++c) {
    if (count[c] == 0) return std::numeric_limits<double>::max();
    for (std::size_t j = 0; j < dim; ++j) mean[c][j] /= count[c];
  }
  double total = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      const double d = pts[i][j] - mean[label[i]][j];
      total += d * d;
    }
  }
  return total;
}

}  // namespace

TEST_CASE("k=1 returns the mean of all points") {
  std::vector<std::vector<double>> pts = {{1, 2}, {3, 4}, {5, 12}};
  KmeansResult res = kmeans(pts, 1, 0);
  REQUIRE(res.centroids.size() == 1);
  CHECK(res.centroids[0][0] == doctest::Approx(3.0));
  CHECK(res.centroids[0][1] == doctest::Approx(6.0));
  for (int a : res.assignment) CHECK(a == 0);
}

TEST_CASE("two well-separated clouds are split cleanly") {
  std::mt19937 rng(7);
  std::normal_distribution<double> noise(0.0, 0.1);
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 30; ++i) pts.push_back({noise(rng), noise(rng)});
  for (int i = 0; i < 30; ++i) pts.push_back({10 + noise(rng), 10 + noise(rng)});
  KmeansResult res = kmeans(pts, 2, 1);
  const int first = res.assignment[0];
  for (int i = 0; i < 30; ++i) CHECK(res.assignment[i] == first);
  for (int i = 30; i < 60; ++i) CHECK(res.assignment[i] == 1 - first);
  // each centroid sits near its cloud center
  const auto& c0 = res.centroids[first];
  const auto& c1 = res.centroids[1 - first];
  CHECK(std::abs(c0[0]) < 0.5);
  CHECK(std::abs(c1[0] - 10.0) < 0.5);
}

TEST_CASE("SSE is within 5% of the exhaustive optimum on 8 points") {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 8; ++i) pts.push_back({u(rng), u(rng)});

  double best = std::numeric_limits<double>::max();
  for (int mask = 1; mask < 255; ++mask) {  // skip the two single-cluster labelings
    std::vector<int> label(8);
    for (int i = 0; i < 8; ++i) label[i] = (mask >> i) & 1;
    best = std::min(best, sse(pts, label, 2));
  }

  KmeansResult res = kmeans(pts, 2, 3);
  CHECK(sse(pts, res.assignment, 2) <= 1.05 * best);
}

TEST_CASE("same seed reproduces bitwise, invalid k rejected") {
  std::mt19937 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 40; ++i) pts.push_back({u(rng), u(rng), u(rng)});
  KmeansResult a = kmeans(pts, 5, 42);
  KmeansResult b = kmeans(pts, 5, 42);
  CHECK(a.assignment == b.assignment);
  CHECK(a.centroids == b.centroids);
  CHECK(a.iterations == b.iterations);

  CHECK_THROWS_AS(kmeans(pts, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(kmeans(pts, 41, 0), std::invalid_argument);
  CHECK_THROWS_AS(kmeans({{1.0}, {1.0, 2.0}}, 1, 0), std::invalid_argument);
}

TEST_CASE("duplicate-heavy data forces repair yet every cluster stays populated") {
  // only 4 distinct locations but k=8: at least half the clusters start empty
  std::vector<std::vector<double>> pts;
  const double locs[4][2] = {{0, 0}, {1, 0}, {0, 1}, {5, 5}};
  for (int rep = 0; rep < 5; ++rep) {
    for (const auto& l : locs) pts.push_back({l[0], l[1]});
  }
  const int k = 8;
  KmeansResult res = kmeans(pts, k, 9);
  std::vector<int> count(k, 0);
  for (int a : res.assignment) {
    REQUIRE(a >= 0);
    REQUIRE(a < k);
    ++count[a];
  }
  std::vector<std::vector<double>> mean(k, std::vector<double>(2, 0.0));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    for (int j = 0; j < 2; ++j) mean[res.assignment[i]][j] += pts[i][j];
  }
  for (int c = 0; c < k; ++c) {
    CHECK(count[c] > 0);
    for (int j = 0; j < 2; ++j) {
      CHECK(res.centroids[c][j] == doctest::Approx(mean[c][j] / count[c]).epsilon(1e-9));
    }
  }
  CHECK(res.iterations >= 1);
  CHECK(res.iterations <= 100);
}
