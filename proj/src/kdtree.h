#pragma once

#include <algorithm>
#include <numeric>
#include <queue>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace pram::detail {

// Static 3D kd-tree for k-nearest-neighbor queries. Equidistant candidates
// are ordered by lower index.
class KdTree3 {
 public:
  explicit KdTree3(std::span<const Eigen::Vector3d> points)
      : points_(points.begin(), points.end()), order_(points.size()) {
    std::iota(order_.begin(), order_.end(), 0);
    if (!points_.empty()) Build(0, order_.size(), 1);
  }

  // Indices of the k points nearest to `query` (including any point at the
  // query location itself), nearest first.
  std::vector<size_t> Nearest(const Eigen::Vector3d& query, size_t k) const {
    k = std::min(k, points_.size());
    std::priority_queue<Candidate> heap;
    if (k > 0) Search(0, order_.size(), 1, query, k, heap);
    std::vector<size_t> out(heap.size());
    for (size_t i = out.size(); i-- > 0;) {
      out[i] = heap.top().index;
      heap.pop();
    }
    return out;
  }

 private:
  static constexpr size_t kLeafSize = 8;

  struct Candidate {
    double dist2;
    size_t index;
    bool operator<(const Candidate& o) const {
      return dist2 != o.dist2 ? dist2 < o.dist2 : index < o.index;
    }
  };

  struct Split {
    int axis = 0;
    double value = 0.0;
  };

  void Build(size_t begin, size_t end, size_t node) {
    if (end - begin <= kLeafSize) return;
    Eigen::Vector3d lo = points_[order_[begin]], hi = lo;
    for (size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis;
    (hi - lo).maxCoeff(&axis);
    const size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid,
                     order_.begin() + end, [&](size_t a, size_t b) {
                       const double pa = points_[a](axis), pb = points_[b](axis);
                       return pa != pb ? pa < pb : a < b;
                     });
    if (splits_.size() <= node) splits_.resize(2 * node + 1);
    splits_[node] = {axis, points_[order_[mid]](axis)};
    Build(begin, mid, 2 * node);
    Build(mid, end, 2 * node + 1);
  }

  void Search(size_t begin, size_t end, size_t node, const Eigen::Vector3d& q, size_t k,
              std::priority_queue<Candidate>& heap) const {
    if (end - begin <= kLeafSize) {
      for (size_t i = begin; i < end; ++i) {
        const size_t idx = order_[i];
        const Candidate c{(points_[idx] - q).squaredNorm(), idx};
        if (heap.size() < k) {
          heap.push(c);
        } else if (c < heap.top()) {
          heap.pop();
          heap.push(c);
        }
      }
      return;
    }
    const Split s = splits_[node];
    const size_t mid = begin + (end - begin) / 2;
    const double diff = q(s.axis) - s.value;
    const bool left_first = diff < 0.0;
    if (left_first) {
      Search(begin, mid, 2 * node, q, k, heap);
    } else {
      Search(mid, end, 2 * node + 1, q, k, heap);
    }
    if (heap.size() < k || diff * diff <= heap.top().dist2) {
      if (left_first) {
        Search(mid, end, 2 * node + 1, q, k, heap);
      } else {
        Search(begin, mid, 2 * node, q, k, heap);
      }
    }
  }

  std::vector<Eigen::Vector3d> points_;
  std::vector<size_t> order_;
  std::vector<Split> splits_;  // heap-indexed, root at 1
};

}  // namespace pram::detail
