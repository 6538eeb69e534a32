#include "redsdf/datagen.hpp"

#include "redsdf/normals.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>

namespace redsdf::data {

namespace {

// splitmix64; used to derive independent per-configuration substreams
uint64_t mix(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t substream(uint64_t seed, uint64_t stream) { return mix(seed ^ mix(stream)); }

}  // namespace

AugmentResult augment(const std::vector<geom::SurfaceSample>& samples, const VecX& q,
                      const std::vector<double>& levels, const geom::KdTree3& cloud_index,
                      double reject_tolerance) {
  if (levels.empty()) throw std::invalid_argument("augment: level list is empty");
  if (cloud_index.size() != samples.size()) {
    throw std::invalid_argument("augment: spatial index does not match the sample cloud");
  }
  AugmentResult res;
  res.records.reserve(samples.size() * levels.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    for (double level : levels) {
      ++res.num_candidates;
      const Vec3 cand = s.x + s.n * level;
      const auto [nn, nn_d2] = cloud_index.nearest(cand);
      bool keep;
      if (reject_tolerance > 0.0) {
        keep = (cloud_index.point(nn) - s.x).norm() <= reject_tolerance;
      } else {
        // the source must be among the nearest points (exact up to fp noise)
        const double d_src = (cand - s.x).squaredNorm();
        keep = (nn == static_cast<int>(i)) || d_src <= nn_d2 + 1e-12;
      }
      if (!keep) {
        ++res.num_rejected;
        continue;
      }
      AugmentedSample rec;
      rec.x = cand;
      rec.q = q;
      rec.d_bar = level;
      rec.n_bar = s.n;
      rec.omega = 1.0;
      rec.config_id = s.config_id;
      res.records.push_back(std::move(rec));
      res.source_of.push_back(static_cast<int>(i));
    }
  }
  return res;
}

void compute_weights(AugmentResult& result, int num_levels) {
  std::vector<int> kept_per_source;
  for (size_t r = 0; r < result.records.size(); ++r) {
    const int src = result.source_of[r];
    if (src >= static_cast<int>(kept_per_source.size())) kept_per_source.resize(src + 1, 0);
    ++kept_per_source[src];
  }
  for (size_t r = 0; r < result.records.size(); ++r) {
    result.records[r].omega =
        static_cast<double>(num_levels) / kept_per_source[result.source_of[r]];
  }
}

Dataset downsample(const Dataset& ds, size_t target_count, uint64_t seed) {
  if (target_count == 0) throw std::invalid_argument("downsample: target_count must be positive");
  if (target_count > ds.records.size()) {
    throw std::invalid_argument("downsample: target_count exceeds record count");
  }
  std::vector<int> idx(ds.records.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(substream(seed, 0xD05A));
  // partial Fisher-Yates: the first target_count entries are a uniform subset
  for (size_t i = 0; i < target_count; ++i) {
    std::uniform_int_distribution<size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(target_count);
  std::sort(idx.begin(), idx.end());

  Dataset out;
  out.meta = ds.meta;
  out.records.reserve(target_count);
  for (int i : idx) out.records.push_back(ds.records[i]);
  return out;
}

void assign_splits(Dataset& ds, uint64_t seed) {
  const size_t n = ds.records.size();
  if (n < 10) throw std::invalid_argument("assign_splits: need at least 10 records");
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(substream(seed, 0x5B117));
  std::shuffle(idx.begin(), idx.end(), rng);

  const size_t n_val = static_cast<size_t>(std::llround(0.1 * static_cast<double>(n)));
  const size_t n_test = n_val;
  const size_t n_train = n - n_val - n_test;
  ds.splits.train.assign(idx.begin(), idx.begin() + n_train);
  ds.splits.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  ds.splits.test.assign(idx.begin() + n_train + n_val, idx.end());
  std::sort(ds.splits.train.begin(), ds.splits.train.end());
  std::sort(ds.splits.val.begin(), ds.splits.val.end());
  std::sort(ds.splits.test.begin(), ds.splits.test.end());
}

std::vector<double> default_levels(double bounding_radius) {
  std::vector<double> base = {-0.05, -0.02, 0.0, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0};
  for (double& v : base) v *= bounding_radius;
  return base;
}

Dataset generate_dataset(const geom::ArticulatedModel& model, const GenConfig& cfg) {
  if (cfg.num_configs < 1) throw std::invalid_argument("generate_dataset: num_configs >= 1");
  const std::vector<double> levels =
      cfg.levels.empty() ? default_levels(model.bounding_radius) : cfg.levels;

  Dataset ds;
  ds.meta.q_dim = model.dof();
  ds.meta.bounding_radius = model.bounding_radius;
  ds.meta.levels = levels;
  ds.meta.seed = cfg.seed;
  ds.meta.num_configs = cfg.num_configs;
  ds.meta.points_per_config = cfg.points_per_config;
  ds.meta.oracle_normals = cfg.oracle_normals;
  ds.meta.model_name = model.name;

  for (int c = 0; c < cfg.num_configs; ++c) {
    const uint64_t cseed = substream(cfg.seed, static_cast<uint64_t>(c));
    std::mt19937_64 rng(cseed);

    VecX q(model.dof());
    for (const auto& l : model.links) {
      if (!l.revolute) continue;
      std::uniform_real_distribution<double> uni(l.limit_lo, l.limit_hi);
      q[l.q_index] = uni(rng);
    }

    auto samples = geom::sample_surface(model, q, cfg.points_per_config, substream(cseed, 1), c);

    if (!cfg.oracle_normals) {
      std::vector<Vec3> pts;
      pts.reserve(samples.size());
      for (const auto& s : samples) pts.push_back(s.x);
      const auto est = geom::estimate_normals(pts, cfg.knn, cfg.consistency_deg);
      std::vector<geom::SurfaceSample> kept;
      kept.reserve(samples.size());
      for (size_t i = 0; i < samples.size(); ++i) {
        if (est.flagged[i]) {
          ++ds.meta.num_flagged;
          continue;
        }
        kept.push_back({samples[i].x, est.normals[i], c});
      }
      samples = std::move(kept);
    }
    if (samples.empty()) continue;

    std::vector<Vec3> cloud;
    cloud.reserve(samples.size());
    for (const auto& s : samples) cloud.push_back(s.x);
    geom::KdTree3 index(std::move(cloud));

    AugmentResult aug = augment(samples, q, levels, index, cfg.reject_tolerance);
    compute_weights(aug, static_cast<int>(levels.size()));
    ds.meta.num_candidates += aug.num_candidates;
    ds.meta.num_rejected += aug.num_rejected;
    for (auto& r : aug.records) ds.records.push_back(std::move(r));
  }

  if (cfg.downsample_to > 0 && cfg.downsample_to < ds.records.size()) {
    ds = downsample(ds, cfg.downsample_to, substream(cfg.seed, 0xD5));
  }
  assign_splits(ds, substream(cfg.seed, 0x51));
  return ds;
}

}  // namespace redsdf::data
