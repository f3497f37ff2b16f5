#include "ftmamba/kmeans.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace ftmamba {

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

KmeansResult kmeans(const std::vector<std::vector<double>>& points, int k, unsigned seed) {
  const int n = static_cast<int>(points.size());
  if (k < 1 || k > n) {
    throw std::invalid_argument("kmeans: k=" + std::to_string(k) + " with " + std::to_string(n) +
                                " points");
  }
  const std::size_t dim = points.front().size();
  for (const auto& p : points) {
    if (p.size() != dim) throw std::invalid_argument("kmeans: inconsistent point dimensions");
  }
  std::mt19937 rng(seed);

  // k-means++: first centroid uniform, then proportional to squared distance
  std::vector<std::vector<double>> centroids;
  centroids.reserve(k);
  std::uniform_int_distribution<int> uniform(0, n - 1);
  centroids.push_back(points[uniform(rng)]);
  std::vector<double> best_d2(n, 0.0);
  for (int c = 1; c < k; ++c) {
    double total = 0;
    for (int i = 0; i < n; ++i) {
      double d2 = std::numeric_limits<double>::max();
      for (const auto& cen : centroids) d2 = std::min(d2, sq_dist(points[i], cen));
      best_d2[i] = d2;
      total += d2;
    }
    if (total == 0.0) {
      centroids.push_back(points[uniform(rng)]);  // all mass on existing centroids
      continue;
    }
    std::uniform_real_distribution<double> pick(0.0, total);
    double target = pick(rng), run = 0;
    int chosen = n - 1;
    for (int i = 0; i < n; ++i) {
      run += best_d2[i];
      if (run >= target) {
        chosen = i;
        break;
      }
    }
    centroids.push_back(points[chosen]);
  }

  KmeansResult res;
  res.assignment.assign(n, 0);
  for (int iter = 0; iter < 100; ++iter) {
    res.iterations = iter + 1;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      int arg = 0;
      for (int c = 0; c < k; ++c) {
        const double d2 = sq_dist(points[i], centroids[c]);
        if (d2 < best) {
          best = d2;
          arg = c;
        }
      }
      res.assignment[i] = arg;
    }

    std::vector<std::vector<double>> next(k, std::vector<double>(dim, 0.0));
    std::vector<int> count(k, 0);
    for (int i = 0; i < n; ++i) {
      ++count[res.assignment[i]];
      for (std::size_t j = 0; j < dim; ++j) next[res.assignment[i]][j] += points[i][j];
    }
    // repair empty clusters on the raw sums before averaging
    for (int c = 0; c < k; ++c) {
      if (count[c] > 0) continue;
      // steal the point farthest from its own centroid
      double worst = -1.0;
      int steal = 0;
      for (int i = 0; i < n; ++i) {
        if (count[res.assignment[i]] <= 1) continue;  // don't empty another cluster
        const double d2 = sq_dist(points[i], centroids[res.assignment[i]]);
        if (d2 > worst) {
          worst = d2;
          steal = i;
        }
      }
      --count[res.assignment[steal]];
      for (std::size_t j = 0; j < dim; ++j) {
        next[res.assignment[steal]][j] -= points[steal][j];
      }
      res.assignment[steal] = c;
      count[c] = 1;
      next[c] = points[steal];
    }
    for (int c = 0; c < k; ++c) {
      for (std::size_t j = 0; j < dim; ++j) next[c][j] /= count[c];
    }

    double moved = 0;
    for (int c = 0; c < k; ++c) moved = std::max(moved, sq_dist(next[c], centroids[c]));
    centroids = std::move(next);
    if (std::sqrt(moved) < 1e-6) break;
  }
  res.centroids = std::move(centroids);
  return res;
}

}  // namespace ftmamba
