#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "redsdf/datagen.hpp"
#include "redsdf/training.hpp"
#include "test_helpers.hpp"

#include <filesystem>
#include <random>

using namespace redsdf;
using namespace redsdf::train;
using redsdf::testing::make_sphere_model;

namespace {

// small random batch around a sphere shell with exact targets
std::vector<data::AugmentedSample> sphere_batch(int n, int q_dim, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0, 1);
  std::uniform_real_distribution<double> ulevel(-0.05, 0.3);
  std::uniform_real_distribution<double> uq(-1, 1);
  std::vector<data::AugmentedSample> out;
  for (int i = 0; i < n; ++i) {
    Vec3 dir(gauss(rng), gauss(rng), gauss(rng));
    dir.normalize();
    const double level = ulevel(rng);
    data::AugmentedSample s;
    s.x = dir * (0.25 + level);
    s.q = VecX(q_dim);
    for (int j = 0; j < q_dim; ++j) s.q[j] = uq(rng);
    s.d_bar = level;
    s.n_bar = dir;
    s.omega = 1.0 + (i % 3);
    s.config_id = 0;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("nullspace projector annihilates its vector and is idempotent") {
  CHECK((nullspace_projector(Vec3(0, 0, 1)) - Vec3(1, 1, 0).asDiagonal().toDenseMatrix())
            .norm() < 1e-15);

  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss(0, 1);
  for (int i = 0; i < 100; ++i) {
    const Vec3 v(gauss(rng), gauss(rng), gauss(rng));
    const Mat3 P = nullspace_projector(v);
    CHECK((P * v).norm() <= 1e-12 * std::max(1.0, v.norm()));
    CHECK((P * P - P).norm() <= 1e-12);
  }
  CHECK(nullspace_projector(Vec3::Zero()) == Mat3::Identity());
}

TEST_CASE("loss terms vanish and peak where the algebra says they must") {
  auto p = net::NetworkParams::init(0, 24, 1.0, 7);
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> uw(-0.3, 0.3);
  for (Eigen::Index i = 0; i < p.wd.size(); ++i) p.wd[i] = uw(rng);

  SUBCASE("normals aligned with the field gradient kill both alignment terms") {
    std::vector<data::AugmentedSample> batch;
    for (int i = 0; i < 5; ++i) {
      const Vec3 x(0.4 + 0.1 * i, 0.2, -0.3);
      const auto r = net::forward(p, x, VecX());
      data::AugmentedSample s;
      s.x = x;
      s.q = VecX();
      s.d_bar = r.d;  // perfect prediction
      s.n_bar = r.grad.normalized();
      s.omega = 2.0;
      batch.push_back(s);
    }
    const LossBreakdown l = loss_terms(p, batch, 0.0);
    CHECK(l.mse <= 1e-20);
    CHECK(l.tangency <= 1e-12);
    CHECK(l.normal_align <= 1e-10);
    CHECK(l.rho_reg == 0.0);
    CHECK(l.total == doctest::Approx(l.mse + l.tangency + l.normal_align + l.rho_reg));
  }

  SUBCASE("perpendicular unit vectors contribute one per term") {
    // far away the gradient is the unit radial direction
    const Vec3 x(6.0, 0, 0);
    const auto r = net::forward(p, x, VecX());
    REQUIRE(std::abs(r.grad.norm() - 1.0) < 1e-6);
    data::AugmentedSample s;
    s.x = x;
    s.q = VecX();
    s.d_bar = r.d;
    s.n_bar = Vec3(0, 1, 0);  // perpendicular to the radial gradient
    s.omega = 1.0;
    const LossBreakdown l = loss_terms(p, {&s, 1}, 0.0);
    CHECK(l.tangency == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(l.normal_align == doctest::Approx(1.0).epsilon(1e-5));
  }

  SUBCASE("rho regularization scales with gamma") {
    const auto batch = sphere_batch(4, 0, 21);
    const LossBreakdown l0 = loss_terms(p, batch, 0.0);
    const LossBreakdown l1 = loss_terms(p, batch, 0.02);
    CHECK(l0.rho_reg == 0.0);
    CHECK(l1.rho_reg > 0.0);
    CHECK(l1.mse == l0.mse);
    CHECK(l1.total == doctest::Approx(l0.total + l1.rho_reg));
  }

  CHECK_THROWS_AS(loss_terms(p, {}, 0.0), std::invalid_argument);
}

TEST_CASE("parameter gradients match central finite differences on a tiny network") {
  auto p = net::NetworkParams::init(2, 8, 1.0, 101);
  std::mt19937_64 rng(102);
  std::uniform_real_distribution<double> uw(-0.4, 0.4);
  for (Eigen::Index i = 0; i < p.wd.size(); ++i) p.wd[i] = uw(rng);
  p.bd = 0.05;

  const auto batch = sphere_batch(10, 2, 103);
  const double gamma = 0.02;

  LossBreakdown base;
  const VecX grad = param_gradients(p, batch, gamma, &base);
  REQUIRE(std::isfinite(base.total));

  VecX theta = net::pack(p);
  const double h = 1e-5;
  net::NetworkParams probe = p;
  int checked = 0, failed = 0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    VecX t = theta;
    t[i] += h;
    net::unpack(t, probe);
    const double hi = loss_terms(probe, batch, gamma).total;
    t[i] = theta[i] - h;
    net::unpack(t, probe);
    const double lo = loss_terms(probe, batch, gamma).total;
    const double fd = (hi - lo) / (2 * h);
    const double scale = std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
    if (std::abs(fd - grad[i]) / scale > 1e-3) ++failed;
    ++checked;
  }
  CHECK(checked == theta.size());
  CHECK(failed == 0);
}

TEST_CASE("mse gradient is linear in the sample weights") {
  auto p = net::NetworkParams::init(1, 8, 1.0, 111);
  std::mt19937_64 rng(112);
  std::uniform_real_distribution<double> uw(-0.4, 0.4);
  for (Eigen::Index i = 0; i < p.wd.size(); ++i) p.wd[i] = uw(rng);

  auto batch = sphere_batch(6, 1, 113);
  auto batch2 = batch;
  auto batch0 = batch;
  for (auto& s : batch2) s.omega *= 2.0;
  for (auto& s : batch0) s.omega = 0.0;  // leaves only the alignment terms

  const VecX g1 = param_gradients(p, batch, 0.0);
  const VecX g2 = param_gradients(p, batch2, 0.0);
  const VecX g0 = param_gradients(p, batch0, 0.0);
  CHECK((g2 - g0 - 2.0 * (g1 - g0)).norm() <= 1e-10 * std::max(1.0, g1.norm()));
}

TEST_CASE("non-finite inputs raise an error naming the sample") {
  auto p = net::NetworkParams::init(0, 8, 1.0, 121);
  auto batch = sphere_batch(3, 0, 122);
  batch[1].x[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS(param_gradients(p, batch, 0.0));
}

TEST_CASE("short training runs are deterministic and reduce the loss") {
  const auto sphere = make_sphere_model(0.25);
  data::GenConfig gen;
  gen.num_configs = 1;
  gen.points_per_config = 600;
  gen.levels = {-0.0125, 0.0, 0.0125, 0.05, 0.125};
  gen.seed = 5;
  const data::Dataset ds = data::generate_dataset(sphere, gen);

  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 256;
  cfg.width = 32;
  cfg.seed = 7;
  cfg.gamma = 0.02;

  const TrainResult a = redsdf::train::train(cfg, ds);
  const TrainResult b = redsdf::train::train(cfg, ds);
  REQUIRE(a.trace.size() == 8);
  REQUIRE(b.trace.size() == 8);
  for (size_t e = 0; e < a.trace.size(); ++e) {
    CHECK(a.trace[e].mse == b.trace[e].mse);  // bitwise determinism
    CHECK(a.trace[e].val_total == b.trace[e].val_total);
  }
  const double first = a.trace.front().mse + a.trace.front().tangency +
                       a.trace.front().normal_align + a.trace.front().rho_reg;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& em : a.trace) {
    best = std::min(best, em.mse + em.tangency + em.normal_align + em.rho_reg);
  }
  CHECK(best < first);
  CHECK(net::pack(a.params) == net::pack(b.params));
}

TEST_CASE("training resumes from a checkpoint with a continued epoch counter") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "redsdf_test_resume";
  fs::create_directories(dir);

  const auto sphere = make_sphere_model(0.25);
  data::GenConfig gen;
  gen.num_configs = 1;
  gen.points_per_config = 300;
  gen.levels = {0.0, 0.05, 0.125};
  gen.seed = 6;
  const data::Dataset ds = data::generate_dataset(sphere, gen);

  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 256;
  cfg.width = 16;
  cfg.seed = 9;
  cfg.checkpoint_every = 2;
  cfg.checkpoint_prefix = (dir / "ck").string();

  TrainConfig first = cfg;
  first.epochs = 2;  // stop halfway; the snapshot holds epoch count 2
  redsdf::train::train(first, ds);

  TrainConfig resumed = cfg;
  resumed.resume_from = cfg.checkpoint_prefix;
  const TrainResult rest = redsdf::train::train(resumed, ds);
  REQUIRE(rest.trace.size() == 2);  // epochs 2 and 3 only
  CHECK(rest.trace.front().epoch == 2);
  CHECK(rest.trace.back().epoch == 3);

  // identical to an uninterrupted run of the same schedule
  const TrainResult straight = redsdf::train::train(cfg, ds);
  CHECK(rest.trace.back().val_total == straight.trace.back().val_total);
  fs::remove_all(dir);
}

TEST_CASE("field evaluation reports the architecture's far-field identity") {
  const auto sphere = make_sphere_model(0.25);
  const auto p = net::NetworkParams::init(0, 16, 0.25, 131);  // zero distance head
  const FieldMetrics fm = evaluate_field(p, sphere, 0.05, 300, 17);
  CHECK(fm.far10_rel_max < 1e-3);
  CHECK(fm.band_probes > 0);
  CHECK(fm.surface_probes == 300);
}
