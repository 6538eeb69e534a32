#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "redsdf/datagen.hpp"
#include "redsdf/dataset.hpp"
#include "test_helpers.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

using namespace redsdf;
using namespace redsdf::data;
using redsdf::testing::make_arm3;
using redsdf::testing::make_sphere_model;

namespace {

std::vector<geom::SurfaceSample> plane_cloud(double z, double half, double spacing, int cfg) {
  std::vector<geom::SurfaceSample> out;
  for (double x = -half; x <= half + 1e-12; x += spacing) {
    for (double y = -half; y <= half + 1e-12; y += spacing) {
      out.push_back({Vec3(x, y, z), Vec3::UnitZ(), cfg});
    }
  }
  return out;
}

geom::KdTree3 index_of(const std::vector<geom::SurfaceSample>& samples) {
  std::vector<Vec3> pts;
  for (const auto& s : samples) pts.push_back(s.x);
  return geom::KdTree3(std::move(pts));
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("zero offset keeps every candidate with zero target") {
  const auto cloud = plane_cloud(0.0, 0.2, 0.02, 0);
  const auto tree = index_of(cloud);
  const auto res = augment(cloud, VecX(), {0.0}, tree);
  CHECK(res.records.size() == cloud.size());
  CHECK(res.num_rejected == 0);
  for (const auto& r : res.records) {
    CHECK(r.d_bar == 0.0);
    CHECK(r.n_bar == Vec3::UnitZ());
  }
}

TEST_CASE("isolated plane keeps positive offsets; a facing plane rejects them") {
  SUBCASE("isolated plane, +0.05") {
    const auto cloud = plane_cloud(0.0, 0.2, 0.02, 0);
    const auto tree = index_of(cloud);
    const auto res = augment(cloud, VecX(), {0.05}, tree);
    CHECK(res.num_rejected == 0);
    CHECK(res.records.size() == cloud.size());
  }

  SUBCASE("two parallel planes 0.04 m apart") {
    auto cloud = plane_cloud(0.0, 0.2, 0.02, 0);
    const size_t base_count = cloud.size();
    const auto upper = plane_cloud(0.04, 0.2, 0.02, 0);
    cloud.insert(cloud.end(), upper.begin(), upper.end());
    const auto tree = index_of(cloud);

    // brute-force oracle over both clouds, computed before asserting
    auto brute_keeps = [&](size_t i, double level) {
      const Vec3 cand = cloud[i].x + cloud[i].n * level;
      double best = std::numeric_limits<double>::infinity();
      size_t best_j = 0;
      for (size_t j = 0; j < cloud.size(); ++j) {
        const double d = (cloud[j].x - cand).norm();
        if (d < best) {
          best = d;
          best_j = j;
        }
      }
      return (cloud[best_j].x - cloud[i].x).norm() < 1e-12;
    };

    const auto res = augment(cloud, VecX(), {0.05}, tree);
    std::vector<bool> kept(cloud.size(), false);
    for (int src : res.source_of) kept[src] = true;
    for (size_t i = 0; i < base_count; ++i) {
      CHECK(kept[i] == brute_keeps(i, 0.05));
      CHECK_FALSE(kept[i]);  // the facing plane is closer than the source
    }
  }
}

TEST_CASE("weights rebalance kept candidates to sum to the level count") {
  AugmentResult res;
  const int M = 8;
  // source 0 keeps all eight, source 1 keeps four
  for (int j = 0; j < 8; ++j) {
    res.records.push_back({Vec3::Zero(), VecX(), 0.0, Vec3::UnitZ(), 1.0, 0});
    res.source_of.push_back(0);
  }
  for (int j = 0; j < 4; ++j) {
    res.records.push_back({Vec3::Zero(), VecX(), 0.0, Vec3::UnitZ(), 1.0, 0});
    res.source_of.push_back(1);
  }
  compute_weights(res, M);
  std::map<int, double> sums;
  for (size_t r = 0; r < res.records.size(); ++r) {
    sums[res.source_of[r]] += res.records[r].omega;
    CHECK(res.records[r].omega == (res.source_of[r] == 0 ? 1.0 : 2.0));
  }
  CHECK(sums[0] == doctest::Approx(M));
  CHECK(sums[1] == doctest::Approx(M));
}

TEST_CASE("weight conservation holds on a generated cloud") {
  geom::ArticulatedModel caps;
  caps.name = "thin";
  caps.bounding_radius = 0.4;
  geom::Link l;
  l.parent = -1;
  l.shapes.push_back(geom::PrimitiveShape::capsule(0.03, 0.2));
  caps.links.push_back(l);
  caps.finalize();

  const auto samples = geom::sample_surface(caps, VecX(), 600, 7);
  const auto tree = index_of(samples);
  const std::vector<double> levels = {-0.05, -0.01, 0.0, 0.01, 0.05, 0.1};
  auto res = augment(samples, VecX(), levels, tree);
  compute_weights(res, static_cast<int>(levels.size()));

  std::map<int, double> sums;
  for (size_t r = 0; r < res.records.size(); ++r) {
    sums[res.source_of[r]] += res.records[r].omega;
  }
  for (const auto& [src, sum] : sums) {
    CHECK(sum == doctest::Approx(static_cast<double>(levels.size())));
  }
  // a -0.05 offset pierces the 0.03-radius capsule: those candidates must go
  int neg_deep = 0;
  for (const auto& r : res.records) {
    if (r.d_bar == -0.05) ++neg_deep;
  }
  CHECK(neg_deep == 0);
}

TEST_CASE("downsample is a seeded uniform subset") {
  const auto sphere = make_sphere_model(0.25);
  GenConfig cfg;
  cfg.num_configs = 1;
  cfg.points_per_config = 2500;
  cfg.levels = default_levels(0.25);
  cfg.seed = 99;
  const Dataset full = generate_dataset(sphere, cfg);
  REQUIRE(full.records.size() >= 20000);

  SUBCASE("identity at full size") {
    const Dataset same = downsample(full, full.records.size(), 5);
    REQUIRE(same.records.size() == full.records.size());
    for (size_t i = 0; i < same.records.size(); ++i) {
      CHECK(same.records[i].x == full.records[i].x);
    }
  }

  SUBCASE("determinism and level histogram") {
    const Dataset a = downsample(full, 10000, 5);
    const Dataset b = downsample(full, 10000, 5);
    REQUIRE(a.records.size() == b.records.size());
    for (size_t i = 0; i < a.records.size(); ++i) CHECK(a.records[i].x == b.records[i].x);

    std::map<double, double> hist_full, hist_sub;
    for (const auto& r : full.records) hist_full[r.d_bar] += 1;
    for (const auto& r : a.records) hist_sub[r.d_bar] += 1;
    for (auto& [level, count] : hist_full) {
      const double frac_full = count / full.records.size();
      const double frac_sub = hist_sub[level] / a.records.size();
      CHECK(std::abs(frac_sub - frac_full) / frac_full < 0.05);
    }
  }

  CHECK_THROWS_AS(downsample(full, 0, 1), std::invalid_argument);
}

TEST_CASE("splits partition the records 80/10/10") {
  Dataset ds;
  ds.meta.q_dim = 0;
  for (int i = 0; i < 1000; ++i) {
    ds.records.push_back({Vec3::Zero(), VecX(), 0.0, Vec3::UnitZ(), 1.0, 0});
  }
  assign_splits(ds, 21);
  CHECK(ds.splits.train.size() == 800);
  CHECK(ds.splits.val.size() == 100);
  CHECK(ds.splits.test.size() == 100);

  std::vector<int> seen(1000, 0);
  for (int i : ds.splits.train) ++seen[i];
  for (int i : ds.splits.val) ++seen[i];
  for (int i : ds.splits.test) ++seen[i];
  for (int c : seen) CHECK(c == 1);

  Dataset ds2 = ds;
  assign_splits(ds2, 21);
  CHECK(ds2.splits.train == ds.splits.train);
  CHECK(ds2.splits.val == ds.splits.val);
  CHECK(ds2.splits.test == ds.splits.test);

  Dataset tiny;
  tiny.records.resize(5);
  CHECK_THROWS_AS(assign_splits(tiny, 1), std::invalid_argument);
}

TEST_CASE("generated sphere dataset matches the analytic oracle") {
  const auto sphere = make_sphere_model(0.25);

  SUBCASE("levels {0} give pure surface points") {
    GenConfig cfg;
    cfg.num_configs = 1;
    cfg.points_per_config = 400;
    cfg.levels = {0.0};
    cfg.seed = 3;
    const Dataset ds = generate_dataset(sphere, cfg);
    CHECK(ds.records.size() == 400);
    for (const auto& r : ds.records) {
      CHECK(r.d_bar == 0.0);
      CHECK(std::abs(r.x.norm() - 0.25) < 1e-9);
    }
  }

  SUBCASE("oracle consistency across all levels") {
    GenConfig cfg;
    cfg.num_configs = 1;
    cfg.points_per_config = 500;
    cfg.levels = default_levels(0.25);
    cfg.seed = 4;
    const Dataset ds = generate_dataset(sphere, cfg);
    CHECK(ds.records.size() <=
          static_cast<size_t>(cfg.points_per_config) * cfg.levels.size());
    for (const auto& r : ds.records) {
      const double oracle = r.x.norm() - 0.25;
      CHECK(std::abs(oracle - r.d_bar) <= 0.05 * std::abs(r.d_bar) + 1e-3);
    }
  }
}

TEST_CASE("positive-level records keep their source as the nearest point") {
  const auto arm = make_arm3();
  GenConfig cfg;
  cfg.num_configs = 2;
  cfg.points_per_config = 150;
  cfg.levels = {0.0, 0.02, 0.05, 0.1};
  cfg.seed = 8;
  const Dataset ds = generate_dataset(arm, cfg);
  REQUIRE(!ds.records.empty());
  for (const auto& r : ds.records) {
    if (r.d_bar <= 0.0) continue;
    // the stored record reconstructs its source exactly one level back
    const Vec3 source = r.x - r.n_bar * r.d_bar;
    CHECK((r.x - source).norm() == doctest::Approx(r.d_bar).epsilon(1e-9));
    CHECK(std::abs(r.n_bar.norm() - 1.0) < 1e-9);
  }
}

TEST_CASE("dataset save/load round-trips and reruns are byte-identical") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "redsdf_test_datagen";
  fs::create_directories(dir);
  const auto rec1 = (dir / "a.jsonl").string(), meta1 = (dir / "a.meta.json").string();
  const auto rec2 = (dir / "b.jsonl").string(), meta2 = (dir / "b.meta.json").string();

  const auto arm = make_arm3();
  GenConfig cfg;
  cfg.num_configs = 2;
  cfg.points_per_config = 100;
  cfg.levels = {0.0, 0.05, 0.1};
  cfg.seed = 12345;

  const Dataset a = generate_dataset(arm, cfg);
  const Dataset b = generate_dataset(arm, cfg);
  save_dataset(a, rec1, meta1);
  save_dataset(b, rec2, meta2);
  CHECK(slurp(rec1) == slurp(rec2));
  CHECK(slurp(meta1) == slurp(meta2));

  const Dataset loaded = load_dataset(rec1, meta1);
  REQUIRE(loaded.records.size() == a.records.size());
  for (size_t i = 0; i < a.records.size(); ++i) {
    CHECK(loaded.records[i].x == a.records[i].x);
    CHECK(loaded.records[i].q == a.records[i].q);
    CHECK(loaded.records[i].d_bar == a.records[i].d_bar);
    CHECK(loaded.records[i].omega == a.records[i].omega);
  }
  CHECK(loaded.splits.train == a.splits.train);
  fs::remove_all(dir);
}

TEST_CASE("estimated-normal pipeline stays close to the oracle on a sphere") {
  const auto sphere = make_sphere_model(0.25);
  GenConfig cfg;
  cfg.num_configs = 1;
  cfg.points_per_config = 1500;
  cfg.levels = {0.0, 0.02, 0.05};
  cfg.seed = 77;
  cfg.oracle_normals = false;
  const Dataset ds = generate_dataset(sphere, cfg);
  REQUIRE(ds.records.size() > 1000);
  int loose = 0;
  for (const auto& r : ds.records) {
    const double oracle = r.x.norm() - 0.25;
    if (std::abs(oracle - r.d_bar) > 0.05 * std::abs(r.d_bar) + 2e-3) ++loose;
  }
  // estimated normals wobble a little; nearly all targets stay tight
  CHECK(static_cast<double>(loose) / ds.records.size() < 0.02);
}
