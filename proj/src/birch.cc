#include "pram/birch.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "pram/error.h"

namespace pram {

double ClusteringFeature::Radius() const {
  if (n <= 0.0) return 0.0;
  const double r2 = square_sum / n - (linear_sum / n).squaredNorm();
  return std::sqrt(std::max(r2, 0.0));
}

double WardDistance(const ClusteringFeature& a, const ClusteringFeature& b) {
  return a.n * b.n / (a.n + b.n) * (a.Centroid() - b.Centroid()).squaredNorm();
}

namespace {

struct Node;

struct Entry {
  ClusteringFeature cf;
  std::unique_ptr<Node> child;            // interior entries
  std::vector<std::uint32_t> members;     // leaf entries
};

struct Node {
  bool leaf = true;
  std::vector<Entry> entries;
};

ClusteringFeature SumOf(const Node& node) {
  ClusteringFeature sum;
  for (const Entry& e : node.entries) sum.Add(e.cf);
  return sum;
}

size_t Closest(const Node& node, const Eigen::Vector2d& centroid) {
  size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < node.entries.size(); ++i) {
    const double d = (node.entries[i].cf.Centroid() - centroid).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

class CFTree {
 public:
  CFTree(double threshold, int branching_factor)
      : threshold_(threshold),
        branching_(static_cast<size_t>(std::max(branching_factor, 2))),
        root_(std::make_unique<Node>()) {}

  double threshold() const { return threshold_; }
  size_t num_leaf_entries() const { return num_leaf_entries_; }

  void Insert(Entry e) {
    std::unique_ptr<Node> split = InsertInto(*root_, std::move(e));
    if (!split) return;
    auto root = std::make_unique<Node>();
    root->leaf = false;
    Entry left{SumOf(*root_), std::move(root_), {}};
    Entry right{SumOf(*split), std::move(split), {}};
    root->entries.push_back(std::move(left));
    root->entries.push_back(std::move(right));
    root_ = std::move(root);
  }

  // Leaf subclusters in depth-first order; the tree is left empty.
  std::vector<Entry> TakeLeafEntries() {
    std::vector<Entry> out;
    out.reserve(num_leaf_entries_);
    Collect(*root_, out);
    root_ = std::make_unique<Node>();
    num_leaf_entries_ = 0;
    return out;
  }

 private:
  bool Absorbs(const ClusteringFeature& a, const ClusteringFeature& b) const {
    if (threshold_ < 0.0) return false;
    ClusteringFeature merged = a;
    merged.Add(b);
    return merged.Radius() <= threshold_;
  }

  std::unique_ptr<Node> InsertInto(Node& node, Entry e) {
    if (node.entries.empty()) {
      node.entries.push_back(std::move(e));
      ++num_leaf_entries_;
      return nullptr;
    }
    const size_t i = Closest(node, e.cf.Centroid());
    if (node.leaf) {
      Entry& target = node.entries[i];
      if (Absorbs(target.cf, e.cf)) {
        target.cf.Add(e.cf);
        target.members.insert(target.members.end(), e.members.begin(),
                              e.members.end());
        return nullptr;
      }
      node.entries.push_back(std::move(e));
      ++num_leaf_entries_;
    } else {
      const ClusteringFeature added = e.cf;
      std::unique_ptr<Node> split = InsertInto(*node.entries[i].child, std::move(e));
      if (split) {
        node.entries[i].cf = SumOf(*node.entries[i].child);
        Entry sibling{SumOf(*split), std::move(split), {}};
        node.entries.push_back(std::move(sibling));
      } else {
        node.entries[i].cf.Add(added);
      }
    }
    if (node.entries.size() > branching_) return Split(node);
    return nullptr;
  }

  // Farthest-pair seeding; remaining entries go to the nearer seed.
  static std::unique_ptr<Node> Split(Node& node) {
    const size_t m = node.entries.size();
    size_t seed_a = 0, seed_b = 1;
    double far = -1.0;
    for (size_t i = 0; i < m; ++i) {
      for (size_t j = i + 1; j < m; ++j) {
        const double d = (node.entries[i].cf.Centroid() -
                          node.entries[j].cf.Centroid()).squaredNorm();
        if (d > far) {
          far = d;
          seed_a = i;
          seed_b = j;
        }
      }
    }
    const Eigen::Vector2d ca = node.entries[seed_a].cf.Centroid();
    const Eigen::Vector2d cb = node.entries[seed_b].cf.Centroid();
    auto sibling = std::make_unique<Node>();
    sibling->leaf = node.leaf;
    std::vector<Entry> keep;
    for (size_t i = 0; i < m; ++i) {
      Entry& e = node.entries[i];
      const bool to_b =
          i == seed_b ||
          (i != seed_a && (e.cf.Centroid() - cb).squaredNorm() <
                              (e.cf.Centroid() - ca).squaredNorm());
      (to_b ? sibling->entries : keep).push_back(std::move(e));
    }
    node.entries = std::move(keep);
    return sibling;
  }

  static void Collect(Node& node, std::vector<Entry>& out) {
    for (Entry& e : node.entries) {
      if (node.leaf) {
        out.push_back({e.cf, nullptr, std::move(e.members)});
      } else {
        Collect(*e.child, out);
      }
    }
  }

  double threshold_;
  size_t branching_;
  std::unique_ptr<Node> root_;
  size_t num_leaf_entries_ = 0;
};

// Phase one: absorb points into leaf subclusters. When the leaf count passes
// `cap` the threshold doubles and the tree is rebuilt from its own leaves,
// unless that would leave fewer than `min_entries` subclusters.
std::vector<Entry> BuildSubclusters(std::span<const Eigen::Vector2d> points,
                                    double threshold, size_t cap,
                                    size_t min_entries, int branching) {
  auto tree = std::make_unique<CFTree>(threshold, branching);
  bool capped = threshold >= 0.0;
  for (size_t i = 0; i < points.size(); ++i) {
    tree->Insert({ClusteringFeature::Of(points[i]), nullptr,
                  {static_cast<std::uint32_t>(i)}});
    if (!capped || tree->num_leaf_entries() <= cap) continue;

    std::vector<Entry> leaves = tree->TakeLeafEntries();
    const double grown = tree->threshold() > 0.0 ? 2.0 * tree->threshold() : 1e-12;
    auto rebuilt = std::make_unique<CFTree>(grown, branching);
    for (const Entry& e : leaves) {
      Entry copy{e.cf, nullptr, e.members};
      rebuilt->Insert(std::move(copy));
    }
    if (rebuilt->num_leaf_entries() < min_entries) {
      // Too coarse: keep the finer tree and stop growing the threshold.
      auto restore = std::make_unique<CFTree>(tree->threshold(), branching);
      for (Entry& e : leaves) restore->Insert(std::move(e));
      tree = std::move(restore);
      capped = false;
    } else {
      tree = std::move(rebuilt);
    }
  }
  return tree->TakeLeafEntries();
}

// Phase two: Ward agglomeration. The nearest-neighbor chain yields the full
// dendrogram with merges out of order; Ward is reducible, so replaying the
// m - k cheapest merges gives the k-cluster cut.
std::vector<std::vector<size_t>> MergeWard(const std::vector<Entry>& leaves,
                                           size_t num_clusters) {
  const size_t m = leaves.size();
  std::vector<ClusteringFeature> cfs(m);
  std::vector<bool> alive(m, true);
  for (size_t i = 0; i < m; ++i) cfs[i] = leaves[i].cf;

  struct Merge {
    double cost;
    size_t a, b;
  };
  std::vector<Merge> merges;
  merges.reserve(m);
  std::vector<size_t> chain;
  size_t next_start = 0;
  while (merges.size() + 1 < m) {
    if (chain.empty()) {
      while (!alive[next_start]) ++next_start;
      chain.push_back(next_start);
    }
    const size_t a = chain.back();
    const bool has_prev = chain.size() >= 2;
    const size_t prev = has_prev ? chain[chain.size() - 2] : 0;
    size_t best = m;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < m; ++j) {
      if (!alive[j] || j == a) continue;
      const double d = WardDistance(cfs[a], cfs[j]);
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    if (has_prev && WardDistance(cfs[a], cfs[prev]) <= best_d) best = prev;

    if (has_prev && best == prev) {
      chain.pop_back();
      chain.pop_back();
      const size_t keep = std::min(a, prev);
      const size_t drop = std::max(a, prev);
      merges.push_back({WardDistance(cfs[keep], cfs[drop]), keep, drop});
      cfs[keep].Add(cfs[drop]);
      alive[drop] = false;
    } else {
      chain.push_back(best);
    }
  }

  std::stable_sort(merges.begin(), merges.end(),
                   [](const Merge& x, const Merge& y) { return x.cost < y.cost; });
  std::vector<size_t> parent(m);
  std::iota(parent.begin(), parent.end(), 0);
  const auto root = [&](size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (size_t i = 0; i + num_clusters < m; ++i) {
    const size_t ra = root(merges[i].a), rb = root(merges[i].b);
    parent[std::max(ra, rb)] = std::min(ra, rb);
  }
  std::vector<std::vector<size_t>> out;
  std::vector<size_t> slot(m, m);
  for (size_t i = 0; i < m; ++i) {
    const size_t r = root(i);
    if (slot[r] == m) {
      slot[r] = out.size();
      out.emplace_back();
    }
    out[slot[r]].push_back(i);
  }
  return out;
}

}  // namespace

std::vector<std::uint32_t> ClusterLandmarks(std::span<const Eigen::Vector2d> points,
                                            size_t num_clusters,
                                            const BirchParams& params) {
  if (num_clusters == 0) {
    throw Error(ErrorCode::kInvalidArgument, "need at least one cluster");
  }
  if (points.size() < num_clusters) {
    throw Error(ErrorCode::kTooFewPoints,
                std::to_string(points.size()) + " points for " +
                    std::to_string(num_clusters) + " landmarks");
  }

  Eigen::Vector2d lo = points[0], hi = points[0];
  for (const auto& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double diagonal = (hi - lo).norm();
  const size_t cap = std::max(params.max_leaf_entries, 4 * num_clusters);

  double threshold = params.initial_threshold_fraction * diagonal;
  std::vector<Entry> leaves;
  while (true) {
    leaves = BuildSubclusters(points, threshold, cap, num_clusters,
                              params.branching_factor);
    if (leaves.size() >= num_clusters) break;
    // Not enough subclusters: refine, down to never absorbing.
    threshold = threshold > 1e-12 * std::max(diagonal, 1.0) ? 0.5 * threshold : -1.0;
    if (threshold < 0.0 && leaves.size() < num_clusters) {
      leaves = BuildSubclusters(points, -1.0, cap, num_clusters,
                                params.branching_factor);
      break;
    }
  }

  const auto groups = MergeWard(leaves, num_clusters);
  struct Cluster {
    std::uint32_t first_point;
    const std::vector<size_t>* leaf_ids;
  };
  std::vector<Cluster> clusters;
  for (const auto& g : groups) {
    std::uint32_t first = std::numeric_limits<std::uint32_t>::max();
    for (size_t leaf : g) {
      for (std::uint32_t p : leaves[leaf].members) first = std::min(first, p);
    }
    clusters.push_back({first, &g});
  }
  std::sort(clusters.begin(), clusters.end(),
            [](const Cluster& a, const Cluster& b) { return a.first_point < b.first_point; });

  std::vector<std::uint32_t> labels(points.size(), 0);
  std::vector<std::uint32_t> leaf_label(leaves.size(), 0);
  for (size_t c = 0; c < clusters.size(); ++c) {
    for (size_t leaf : *clusters[c].leaf_ids) {
      leaf_label[leaf] = static_cast<std::uint32_t>(c + 1);
      for (std::uint32_t p : leaves[leaf].members) labels[p] = leaf_label[leaf];
    }
  }

  // Final pass: each point takes the label of its nearest leaf centroid, which
  // undoes absorption of far points into large subclusters.
  std::vector<Eigen::Vector2d> centroids(leaves.size());
  for (size_t j = 0; j < leaves.size(); ++j) centroids[j] = leaves[j].cf.Centroid();
  std::vector<std::uint32_t> nearest(points.size());
  std::vector<size_t> sizes(clusters.size() + 1, 0);
  for (size_t i = 0; i < points.size(); ++i) {
    size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j < centroids.size(); ++j) {
      const double d = (points[i] - centroids[j]).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    nearest[i] = leaf_label[best];
    ++sizes[nearest[i]];
  }
  // Keep the absorption labels if reassignment would empty a cluster.
  if (std::find(sizes.begin() + 1, sizes.end(), size_t{0}) != sizes.end()) return labels;
  return nearest;
}

}  // namespace pram
