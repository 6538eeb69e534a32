#pragma once

#include "redsdf/geometry.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <queue>
#include <vector>

namespace redsdf::geom {

/// Exact nearest-neighbor search over a fixed 3D point set. Median-split
/// construction; queries never approximate, since rejection decisions feed
/// training targets.
class KdTree3 {
 public:
  explicit KdTree3(std::vector<Vec3> points) : pts_(std::move(points)) {
    index_.resize(pts_.size());
    std::iota(index_.begin(), index_.end(), 0);
    nodes_.reserve(pts_.size());
    if (!pts_.empty()) root_ = build(0, static_cast<int>(pts_.size()));
  }

  size_t size() const { return pts_.size(); }
  const Vec3& point(int i) const { return pts_[i]; }

  // Index and squared distance of the nearest point. Ties resolve to the
  // lowest index.
  std::pair<int, double> nearest(const Vec3& q) const {
    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    search(root_, q, best, best_d2);
    return {best, best_d2};
  }

  // Indices of the k nearest points, closest first (ties by index).
  std::vector<int> knn(const Vec3& q, int k) const {
    using Entry = std::pair<double, int>;  // (squared distance, index)
    std::priority_queue<Entry> heap;       // max-heap keeps the worst on top
    knn_search(root_, q, k, heap);
    std::vector<Entry> entries;
    entries.reserve(heap.size());
    while (!heap.empty()) {
      entries.push_back(heap.top());
      heap.pop();
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      if (a.first != b.first) return a.first < b.first;
      return a.second < b.second;
    });
    std::vector<int> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.second);
    return out;
  }

 private:
  struct Node {
    int point = -1;
    int axis = 0;
    int left = -1;
    int right = -1;
  };

  int build(int lo, int hi) {
    if (lo >= hi) return -1;
    Vec3 mn = pts_[index_[lo]], mx = pts_[index_[lo]];
    for (int i = lo; i < hi; ++i) {
      mn = mn.cwiseMin(pts_[index_[i]]);
      mx = mx.cwiseMax(pts_[index_[i]]);
    }
    int axis = 0;
    (mx - mn).maxCoeff(&axis);
    const int mid = (lo + hi) / 2;
    std::nth_element(index_.begin() + lo, index_.begin() + mid, index_.begin() + hi,
                     [&](int a, int b) {
                       if (pts_[a][axis] != pts_[b][axis]) return pts_[a][axis] < pts_[b][axis];
                       return a < b;
                     });
    Node node;
    node.point = index_[mid];
    node.axis = axis;
    const int self = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    const int left = build(lo, mid);
    const int right = build(mid + 1, hi);
    nodes_[self].left = left;
    nodes_[self].right = right;
    return self;
  }

  void search(int ni, const Vec3& q, int& best, double& best_d2) const {
    if (ni < 0) return;
    const Node& n = nodes_[ni];
    const double d2 = (pts_[n.point] - q).squaredNorm();
    if (d2 < best_d2 || (d2 == best_d2 && n.point < best)) {
      best_d2 = d2;
      best = n.point;
    }
    const double delta = q[n.axis] - pts_[n.point][n.axis];
    const int near = delta < 0 ? n.left : n.right;
    const int far = delta < 0 ? n.right : n.left;
    search(near, q, best, best_d2);
    if (delta * delta <= best_d2) search(far, q, best, best_d2);
  }

  void knn_search(int ni, const Vec3& q, int k,
                  std::priority_queue<std::pair<double, int>>& heap) const {
    if (ni < 0) return;
    const Node& n = nodes_[ni];
    const double d2 = (pts_[n.point] - q).squaredNorm();
    if (static_cast<int>(heap.size()) < k) {
      heap.emplace(d2, n.point);
    } else if (d2 < heap.top().first) {
      heap.pop();
      heap.emplace(d2, n.point);
    }
    const double delta = q[n.axis] - pts_[n.point][n.axis];
    const int near = delta < 0 ? n.left : n.right;
    const int far = delta < 0 ? n.right : n.left;
    knn_search(near, q, k, heap);
    if (static_cast<int>(heap.size()) < k || delta * delta <= heap.top().first) {
      knn_search(far, q, k, heap);
    }
  }

  std::vector<Vec3> pts_;
  std::vector<int> index_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

}  // namespace redsdf::geom
