#pragma once

#include "redsdf/dataset.hpp"
#include "redsdf/kdtree.hpp"

#include <cstdint>
#include <vector>

namespace redsdf::data {

struct AugmentResult {
  std::vector<AugmentedSample> records;  // omega unset until compute_weights
  std::vector<int> source_of;           // index into the surface-sample list, per record
  int num_candidates = 0;
  int num_rejected = 0;
};

/// Offsets every surface sample along its normal to each distance level and
/// keeps a candidate only when its nearest raw-cloud point is still the
/// source it came from. With reject_tolerance > 0 the rule relaxes to: the
/// nearest point lies within that distance of the source.
AugmentResult augment(const std::vector<geom::SurfaceSample>& samples, const VecX& q,
                      const std::vector<double>& levels, const geom::KdTree3& cloud_index,
                      double reject_tolerance = 0.0);

// omega = M / M_s per source point, M = number of levels, M_s = kept count.
void compute_weights(AugmentResult& result, int num_levels);

Dataset downsample(const Dataset& ds, size_t target_count, uint64_t seed);

// Random disjoint 80/10/10 partition over record indices.
void assign_splits(Dataset& ds, uint64_t seed);

struct GenConfig {
  int num_configs = 1;
  int points_per_config = 1000;
  std::vector<double> levels;  // meters; empty -> default_levels(bounding_radius)
  uint64_t seed = 0;
  bool oracle_normals = true;  // false -> k-NN PCA estimation + consistency filter
  int knn = 16;
  double consistency_deg = 30.0;
  double reject_tolerance = 0.0;
  size_t downsample_to = 0;  // 0 -> keep everything
};

// Graded fine-near/sparse-far offsets, scaled by the model's bounding radius.
std::vector<double> default_levels(double bounding_radius);

// Full pipeline: sample configurations, sample surfaces, estimate or copy
// normals, filter, augment, weight, downsample, split. Deterministic per
// (model, config) including the per-configuration substreams.
Dataset generate_dataset(const geom::ArticulatedModel& model, const GenConfig& cfg);

}  // namespace redsdf::data
