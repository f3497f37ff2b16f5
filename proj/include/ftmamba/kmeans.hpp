#pragma once

#include <vector>

namespace ftmamba {

struct KmeansResult {
  std::vector<int> assignment;                 // per point, cluster id in [0, k)
  std::vector<std::vector<double>> centroids;  // k centroids
  int iterations = 0;
};

// Lloyd's algorithm with k-means++ seeding. Stops after 100 iterations or
// when no centroid moves more than 1e-6; an emptied cluster is repaired by
// stealing the point farthest from its current centroid.
KmeansResult kmeans(const std::vector<std::vector<double>>& points, int k, unsigned seed);

}  // namespace ftmamba
