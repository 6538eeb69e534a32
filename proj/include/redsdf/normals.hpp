#pragma once

#include "redsdf/geometry.hpp"

#include <vector>

namespace redsdf::geom {

struct NormalEstimate {
  std::vector<Vec3> normals;
  std::vector<uint8_t> flagged;  // degenerate neighborhood, unresolved or
                                 // inconsistent orientation -> drop from training
};

/// Per-point normals from local PCA over the k nearest neighbors
/// (smallest-eigenvalue direction). Orientation is taken outward from the
/// frame origin where that is unambiguous and propagated from oriented
/// neighbors otherwise. Points whose normal deviates from the sign-aligned
/// mean neighbor normal by more than `consistency_deg` are flagged.
NormalEstimate estimate_normals(const std::vector<Vec3>& points, int k,
                                double consistency_deg = 30.0);

}  // namespace redsdf::geom
