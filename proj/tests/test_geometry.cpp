#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "redsdf/geometry.hpp"
#include "redsdf/kdtree.hpp"
#include "redsdf/normals.hpp"
#include "test_helpers.hpp"

#include <cmath>
#include <random>

using namespace redsdf;
using namespace redsdf::geom;
using redsdf::testing::make_arm3;
using redsdf::testing::make_sphere_model;
using redsdf::testing::random_config;

TEST_CASE("primitive signed distances match closed forms") {
  const auto sphere = PrimitiveShape::sphere(1.0);
  CHECK(sdf_primitive(sphere, Vec3(2, 0, 0)) == doctest::Approx(1.0));
  CHECK(sdf_primitive(sphere, Vec3(0, 0, 0)) == doctest::Approx(-1.0));

  const auto box = PrimitiveShape::box(Vec3(1, 1, 1));
  CHECK(sdf_primitive(box, Vec3(2, 2, 0)) == doctest::Approx(std::sqrt(2.0)));
  CHECK(sdf_primitive(box, Vec3(0.5, 0, 0)) == doctest::Approx(-0.5));

  const auto capsule = PrimitiveShape::capsule(0.5, 1.0);
  CHECK(sdf_primitive(capsule, Vec3(0, 0, 2.0)) == doctest::Approx(0.5));
  CHECK(sdf_primitive(capsule, Vec3(1.0, 0, 0.3)) == doctest::Approx(0.5));
}

TEST_CASE("union takes the nearest member") {
  Transform left = Transform::Identity(), right = Transform::Identity();
  left.translation() = Vec3(-3, 0, 0);
  right.translation() = Vec3(3, 0, 0);
  const std::vector<PrimitiveShape> two = {PrimitiveShape::sphere(1.0, left),
                                           PrimitiveShape::sphere(1.0, right)};
  CHECK(sdf_union(two, Vec3(0, 0, 0)) == doctest::Approx(2.0));

  const std::vector<PrimitiveShape> one = {PrimitiveShape::sphere(0.7, left)};
  for (const Vec3& x : {Vec3(0, 0, 0), Vec3(-3, 0.5, 0), Vec3(1, 2, 3)}) {
    CHECK(sdf_union(one, x) == doctest::Approx(sdf_primitive(one[0], x)));
  }

  Transform near = Transform::Identity();
  near.translation() = Vec3(0.5, 0, 0);
  const std::vector<PrimitiveShape> overlap = {PrimitiveShape::sphere(1.0),
                                               PrimitiveShape::sphere(1.0, near)};
  const Vec3 center(0.25, 0, 0);
  CHECK(sdf_union(overlap, center) ==
        doctest::Approx(std::min(sdf_primitive(overlap[0], center),
                                 sdf_primitive(overlap[1], center))));

  CHECK_THROWS_AS(sdf_union({}, Vec3::Zero()), std::invalid_argument);
}

TEST_CASE("invalid shapes are rejected") {
  CHECK_THROWS_AS(PrimitiveShape::sphere(0.0), std::invalid_argument);
  CHECK_THROWS_AS(PrimitiveShape::capsule(0.1, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(PrimitiveShape::box(Vec3(1, 0, 1)), std::invalid_argument);
  Transform skew = Transform::Identity();
  skew.linear() << 1, 0.2, 0, 0, 1, 0, 0, 0, 1;
  PrimitiveShape s;
  s.kind = ShapeKind::Sphere;
  s.pose = skew;
  s.dims = Vec3(1, 0, 0);
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
}

namespace {

Vec3 fd_gradient(const std::vector<PrimitiveShape>& shapes, const Vec3& x, double h = 1e-6) {
  Vec3 g;
  for (int k = 0; k < 3; ++k) {
    Vec3 hi = x, lo = x;
    hi[k] += h;
    lo[k] -= h;
    g[k] = (sdf_union(shapes, hi) - sdf_union(shapes, lo)) / (2 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("analytic gradients agree with central differences and have unit norm") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> uni(-1.5, 1.5);
  Transform tilt = Transform::Identity();
  tilt.linear() = Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()).toRotationMatrix();
  tilt.translation() = Vec3(0.1, -0.2, 0.3);
  const std::vector<std::vector<PrimitiveShape>> cases = {
      {PrimitiveShape::sphere(0.6)},
      {PrimitiveShape::capsule(0.25, 0.5, tilt)},
      {PrimitiveShape::box(Vec3(0.4, 0.3, 0.5), tilt)},
  };
  int checked = 0;
  for (const auto& shapes : cases) {
    for (int i = 0; i < 200 && checked < 300; ++i) {
      const Vec3 x(uni(rng), uni(rng), uni(rng));
      const double d = sdf_union(shapes, x);
      if (std::abs(d) < 1e-3) continue;  // skip the surface itself
      const Vec3 fd = fd_gradient(shapes, x);
      if (std::abs(fd.norm() - 1.0) > 1e-4) continue;  // medial-axis kink
      const Vec3 an = sdf_union_gradient(shapes, x);
      CHECK((an - fd).norm() < 1e-5);
      CHECK(std::abs(an.norm() - 1.0) < 1e-9);
      ++checked;
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("signed distance magnitude matches brute-force surface distance") {
  const auto arm = make_arm3();
  std::mt19937_64 rng(11);
  const VecX q = random_config(arm, rng, 0.3);
  const auto frames = forward_kinematics(arm, q);
  const auto dense = sample_surface(arm, q, 20000, 99);

  std::uniform_real_distribution<double> uni(-0.7, 0.7);
  int checked = 0;
  for (int i = 0; i < 600 && checked < 60; ++i) {
    const Vec3 x(uni(rng), uni(rng), uni(rng));
    const double d = model_sdf(arm, frames, x);
    if (std::abs(d) < 0.02 || std::abs(d) > 0.5) continue;
    double brute = std::numeric_limits<double>::infinity();
    for (const auto& s : dense) brute = std::min(brute, (s.x - x).norm());
    CHECK(std::abs(std::abs(d) - brute) < 1e-3);
    ++checked;
  }
  CHECK(checked >= 30);
}

TEST_CASE("forward kinematics composes fixed transforms at zero") {
  const auto arm = make_arm3();
  const auto frames = forward_kinematics(arm, VecX::Zero(3));
  Transform expect = Transform::Identity();
  for (size_t i = 0; i < arm.links.size(); ++i) {
    expect = expect * arm.links[i].origin;
    CHECK((frames[i].matrix() - expect.matrix()).norm() < 1e-12);
  }
}

TEST_CASE("single revolute joint rotates the tip by pi/2") {
  geom::ArticulatedModel m;
  m.name = "one";
  m.bounding_radius = 1.2;
  geom::Link l;
  l.parent = -1;
  l.revolute = true;
  l.axis = Vec3::UnitZ();
  l.limit_lo = -3.0;
  l.limit_hi = 3.0;
  l.shapes.push_back(PrimitiveShape::sphere(0.1));
  m.links.push_back(l);
  m.finalize();

  const double L = 0.8;
  VecX q(1);
  q[0] = M_PI / 2.0;
  const auto frames = forward_kinematics(m, q);
  const Vec3 tip = frames[0] * Vec3(L, 0, 0);
  CHECK((tip - Vec3(0, L, 0)).norm() < 1e-12);
}

TEST_CASE("forward kinematics is deterministic and validates input") {
  const auto arm = make_arm3();
  std::mt19937_64 rng(3);
  const VecX q = random_config(arm, rng);
  const auto a = forward_kinematics(arm, q);
  const auto b = forward_kinematics(arm, q);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].matrix() == b[i].matrix());  // bitwise
  }
  CHECK_THROWS_AS(forward_kinematics(arm, VecX::Zero(2)), std::invalid_argument);
  VecX bad = VecX::Zero(3);
  bad[1] = 99.0;
  CHECK_THROWS_AS(forward_kinematics(arm, bad), std::out_of_range);
}

TEST_CASE("point jacobian matches finite differences on 100 random tuples") {
  const auto arm = make_arm3();
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> upt(-0.2, 0.2);
  std::uniform_int_distribution<int> ulink(0, 2);
  const double h = 1e-6;
  for (int trial = 0; trial < 100; ++trial) {
    const VecX q = random_config(arm, rng, 0.01);
    const int link = ulink(rng);
    const Vec3 local(upt(rng), upt(rng), upt(rng));
    const MatX jac = point_jacobian(arm, q, link, local);

    VecX dq(3);
    for (int j = 0; j < 3; ++j) dq[j] = upt(rng);
    dq *= h / dq.norm();

    const Vec3 hi = forward_kinematics(arm, q + dq)[link] * local;
    const Vec3 lo = forward_kinematics(arm, q - dq)[link] * local;
    const Vec3 shift = 0.5 * (hi - lo);
    CHECK((jac * dq - shift).norm() <= 1e-6);
  }
}

TEST_CASE("jacobian column is zero for joints past the link") {
  const auto arm = make_arm3();
  const VecX q = VecX::Zero(3);
  const MatX jac = point_jacobian(arm, q, 0, Vec3(0.1, 0, 0));
  CHECK(jac.col(1).norm() == 0.0);
  CHECK(jac.col(2).norm() == 0.0);
}

TEST_CASE("single revolute joint column norm equals the lever arm") {
  geom::ArticulatedModel m;
  m.name = "one";
  m.bounding_radius = 2.0;
  geom::Link l;
  l.parent = -1;
  l.revolute = true;
  l.axis = Vec3::UnitZ();
  l.limit_lo = -3.0;
  l.limit_hi = 3.0;
  l.shapes.push_back(PrimitiveShape::sphere(0.1));
  m.links.push_back(l);
  m.finalize();

  const double rho0 = 0.45;
  VecX q(1);
  q[0] = 0.6;
  const MatX jac = point_jacobian(m, q, 0, Vec3(rho0, 0, 0));
  CHECK(jac.col(0).norm() == doctest::Approx(rho0));
}

TEST_CASE("surface samples sit on the surface with outward unit normals") {
  const auto sphere = make_sphere_model(1.0);
  const auto samples = sample_surface(sphere, VecX(), 500, 42);
  for (const auto& s : samples) {
    CHECK(std::abs(s.x.norm() - 1.0) < 1e-9);
    CHECK((s.n - s.x.normalized()).norm() < 1e-9);
  }

  const auto arm = make_arm3();
  std::mt19937_64 rng(5);
  const VecX q = random_config(arm, rng, 0.2);
  const auto frames = forward_kinematics(arm, q);
  const auto arm_samples = sample_surface(arm, q, 800, 43);
  for (const auto& s : arm_samples) {
    CHECK(std::abs(model_sdf(arm, frames, s.x)) < 1e-6);
    CHECK(std::abs(s.n.norm() - 1.0) < 1e-9);
  }

  const auto again = sample_surface(arm, q, 800, 43);
  REQUIRE(again.size() == arm_samples.size());
  for (size_t i = 0; i < again.size(); ++i) {
    CHECK(again[i].x == arm_samples[i].x);  // bitwise determinism
    CHECK(again[i].n == arm_samples[i].n);
  }
}

TEST_CASE("kd-tree nearest matches brute force") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> uni(-1, 1);
  std::vector<Vec3> pts(500);
  for (auto& p : pts) p = Vec3(uni(rng), uni(rng), uni(rng));
  KdTree3 tree(pts);
  for (int i = 0; i < 200; ++i) {
    const Vec3 q(uni(rng), uni(rng), uni(rng));
    const auto [idx, d2] = tree.nearest(q);
    double best = std::numeric_limits<double>::infinity();
    int best_i = -1;
    for (size_t j = 0; j < pts.size(); ++j) {
      const double dd = (pts[j] - q).squaredNorm();
      if (dd < best) {
        best = dd;
        best_i = static_cast<int>(j);
      }
    }
    CHECK(idx == best_i);
    CHECK(d2 == doctest::Approx(best));
  }
  const auto knn = tree.knn(Vec3::Zero(), 12);
  CHECK(knn.size() == 12);
  for (size_t i = 1; i < knn.size(); ++i) {
    CHECK(pts[knn[i - 1]].squaredNorm() <= pts[knn[i]].squaredNorm() + 1e-15);
  }
}

TEST_CASE("normal estimation recovers plane and sphere normals") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> uni(-1, 1);

  SUBCASE("axis-aligned plane") {
    std::vector<Vec3> pts(800);
    for (auto& p : pts) p = Vec3(uni(rng), uni(rng), 0.0);
    const auto est = estimate_normals(pts, 16);
    for (size_t i = 0; i < pts.size(); ++i) {
      const double c = std::abs(est.normals[i].dot(Vec3::UnitZ()));
      CHECK(c > std::cos(1.0 * M_PI / 180.0));
    }
  }

  SUBCASE("dense unit sphere vs oracle direction") {
    const auto sphere = make_sphere_model(1.0);
    const auto samples = sample_surface(sphere, VecX(), 3000, 31);
    std::vector<Vec3> pts;
    for (const auto& s : samples) pts.push_back(s.x);
    const auto est = estimate_normals(pts, 16);
    int bad = 0;
    for (size_t i = 0; i < pts.size(); ++i) {
      if (est.flagged[i]) continue;
      const double c = est.normals[i].dot(pts[i].normalized());
      if (c < std::cos(5.0 * M_PI / 180.0)) ++bad;
    }
    CHECK(bad == 0);
  }

  SUBCASE("clean capsule cloud flags below 5%") {
    geom::ArticulatedModel caps;
    caps.name = "caps";
    caps.bounding_radius = 0.5;
    geom::Link l;
    l.parent = -1;
    l.shapes.push_back(PrimitiveShape::capsule(0.08, 0.25));
    caps.links.push_back(l);
    caps.finalize();
    const auto samples = sample_surface(caps, VecX(), 4000, 37);
    std::vector<Vec3> pts;
    for (const auto& s : samples) pts.push_back(s.x);
    const auto est = estimate_normals(pts, 16);
    int flagged = 0;
    for (auto f : est.flagged) flagged += f;
    CHECK(static_cast<double>(flagged) / pts.size() < 0.05);
  }

  CHECK_THROWS_AS(estimate_normals({Vec3::Zero(), Vec3::UnitX()}, 3), std::invalid_argument);
}

TEST_CASE("model config files load into working models") {
  const std::string text = R"({
    "name": "demo",
    "bounding_radius": 0.5,
    "links": [
      {"parent": -1,
       "joint": {"type": "revolute", "axis": [0,0,1], "limits": [-1.0, 1.0]},
       "shapes": [{"kind": "capsule", "pose": {"xyz": [0.1,0,0], "rpy": [0,1.5707963,0]},
                   "dims": [0.03, 0.1]}]},
      {"parent": 0, "origin": {"xyz": [0.2,0,0]},
       "shapes": [{"kind": "sphere", "dims": [0.05]}]}
    ]
  })";
  const auto m = geom::model_from_json_text(text, "inline");
  CHECK(m.dof() == 1);
  CHECK(m.links.size() == 2);
  VecX q(1);
  q[0] = 0.5;
  const auto frames = forward_kinematics(m, q);
  CHECK(frames.size() == 2);
  CHECK_THROWS(geom::model_from_json_text("{not json", "inline"));
}
