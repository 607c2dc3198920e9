#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace pram {

struct BirchParams {
  int branching_factor = 50;
  // Initial absorption radius as a fraction of the bounding-box diagonal.
  double initial_threshold_fraction = 0.01;
  // Leaf subclusters allowed before the threshold is doubled and the tree
  // rebuilt; raised to 4 * num_clusters when that is larger.
  size_t max_leaf_entries = 4096;
};

// Clustering feature of a set of 2D points: count, linear sum, squared sum.
struct ClusteringFeature {
  double n = 0.0;
  Eigen::Vector2d linear_sum = Eigen::Vector2d::Zero();
  double square_sum = 0.0;

  static ClusteringFeature Of(const Eigen::Vector2d& p) {
    return {1.0, p, p.squaredNorm()};
  }
  void Add(const ClusteringFeature& o) {
    n += o.n;
    linear_sum += o.linear_sum;
    square_sum += o.square_sum;
  }
  Eigen::Vector2d Centroid() const { return linear_sum / n; }
  // Root-mean-square distance of members to the centroid.
  double Radius() const;
};

// Ward merge cost between two clusters given by their features.
double WardDistance(const ClusteringFeature& a, const ClusteringFeature& b);

// Hierarchical clustering of 2D points into exactly `num_clusters` labels in
// [1, num_clusters]: a CF tree absorbs points into leaf subclusters, which are
// then merged agglomeratively by Ward distance. Labels are numbered in order
// of each cluster's lowest point index. Deterministic for a given input order.
// Throws kTooFewPoints when points.size() < num_clusters.
std::vector<std::uint32_t> ClusterLandmarks(std::span<const Eigen::Vector2d> points,
                                            size_t num_clusters,
                                            const BirchParams& params = {});

}  // namespace pram
