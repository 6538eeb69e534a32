#include "redsdf/normals.hpp"

#include "redsdf/kdtree.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace redsdf::geom {

NormalEstimate estimate_normals(const std::vector<Vec3>& points, int k, double consistency_deg) {
  const int n = static_cast<int>(points.size());
  if (k < 3) throw std::invalid_argument("estimate_normals: k must be at least 3");
  if (k >= n) throw std::invalid_argument("estimate_normals: k must be below the point count");

  KdTree3 tree(points);
  NormalEstimate est;
  est.normals.assign(n, Vec3::UnitZ());
  est.flagged.assign(n, 0);

  std::vector<std::vector<int>> neighbors(n);
  std::vector<int> oriented(n, 0);  // 0 unresolved, 1 oriented

  for (int i = 0; i < n; ++i) {
    auto idx = tree.knn(points[i], k + 1);  // self comes back at distance zero
    std::vector<int> nb;
    nb.reserve(k);
    for (int j : idx) {
      if (j != i && static_cast<int>(nb.size()) < k) nb.push_back(j);
    }
    neighbors[i] = nb;

    Vec3 mean = points[i];
    for (int j : nb) mean += points[j];
    mean /= static_cast<double>(nb.size() + 1);
    Mat3 cov = Mat3::Zero();
    {
      const Vec3 c = points[i] - mean;
      cov += c * c.transpose();
    }
    for (int j : nb) {
      const Vec3 c = points[j] - mean;
      cov += c * c.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const Vec3 evals = eig.eigenvalues();  // ascending
    if (evals[2] <= 0 || evals[1] < 1e-9 * evals[2]) {
      est.flagged[i] = 1;  // neighborhood is rank-deficient; no plane to fit
      continue;
    }
    Vec3 normal = eig.eigenvectors().col(0);

    const Vec3 ray = points[i];  // frame origin is the field center
    const double rn = ray.norm();
    if (rn > 1e-12 && std::abs(normal.dot(ray)) / rn > 0.1) {
      if (normal.dot(ray) < 0) normal = -normal;
      oriented[i] = 1;
    }
    est.normals[i] = normal;
  }

  // propagate orientation into ambiguous regions from oriented neighbors
  for (int sweep = 0; sweep < 50; ++sweep) {
    bool progress = false;
    for (int i = 0; i < n; ++i) {
      if (oriented[i] || est.flagged[i]) continue;
      Vec3 ref = Vec3::Zero();
      for (int j : neighbors[i]) {
        if (oriented[j]) ref += est.normals[j];
      }
      if (ref.norm() > 1e-12) {
        if (est.normals[i].dot(ref) < 0) est.normals[i] = -est.normals[i];
        oriented[i] = 1;
        progress = true;
      }
    }
    if (!progress) break;
  }
  for (int i = 0; i < n; ++i) {
    if (!oriented[i] && !est.flagged[i]) est.flagged[i] = 1;
  }

  // consistency filter: compare against the sign-aligned mean neighbor normal
  const double cos_thresh = std::cos(consistency_deg * std::numbers::pi / 180.0);
  for (int i = 0; i < n; ++i) {
    if (est.flagged[i]) continue;
    Vec3 mean_dir = Vec3::Zero();
    int used = 0;
    for (int j : neighbors[i]) {
      if (est.flagged[j]) continue;
      const double s = est.normals[i].dot(est.normals[j]) >= 0 ? 1.0 : -1.0;
      mean_dir += s * est.normals[j];
      ++used;
    }
    if (used == 0 || mean_dir.norm() < 1e-12) {
      est.flagged[i] = 1;
      continue;
    }
    mean_dir.normalize();
    if (est.normals[i].dot(mean_dir) < cos_thresh) est.flagged[i] = 1;
  }
  return est;
}

}  // namespace redsdf::geom
