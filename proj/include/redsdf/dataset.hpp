#pragma once

#include "redsdf/geometry.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace redsdf::data {

/// One training record: a point offset from a surface sample to a known
/// signed distance, with the source normal and a rebalancing weight.
struct AugmentedSample {
  Vec3 x;          // meters, root frame
  VecX q;          // configuration under which the cloud was taken
  double d_bar;    // target signed distance
  Vec3 n_bar;      // unit normal inherited from the source point
  double omega;    // >= 1
  int config_id;
};

struct SplitIndices {
  std::vector<int> train, val, test;
};

struct DatasetMeta {
  int q_dim = 0;
  double bounding_radius = 1.0;
  std::vector<double> levels;  // meters
  uint64_t seed = 0;
  int num_configs = 0;
  int points_per_config = 0;
  int num_candidates = 0;
  int num_rejected = 0;
  int num_flagged = 0;   // surface points dropped by the normal filter
  bool oracle_normals = true;
  std::string model_name;
};

struct Dataset {
  std::vector<AugmentedSample> records;
  SplitIndices splits;
  DatasetMeta meta;
};

// JSON-lines records plus a JSON metadata sidecar (seed, levels, counts,
// split indices). Serialization is deterministic: identical datasets produce
// identical bytes.
void save_dataset(const Dataset& ds, const std::string& records_path,
                  const std::string& meta_path);
Dataset load_dataset(const std::string& records_path, const std::string& meta_path);

}  // namespace redsdf::data
