#include "redsdf/control.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace redsdf::ctrl {

namespace {
constexpr double kPi = std::numbers::pi;
}

PoISet ring_poi(const geom::ArticulatedModel& m, int per_link) {
  if (per_link < 1) throw std::invalid_argument("ring_poi: per_link must be positive");
  PoISet set;
  for (size_t li = 0; li < m.links.size(); ++li) {
    const auto& shapes = m.links[li].shapes;
    if (shapes.empty()) continue;
    const int per_shape = std::max(1, per_link / static_cast<int>(shapes.size()));
    for (const auto& s : shapes) {
      std::vector<Vec3> local;
      switch (s.kind) {
        case geom::ShapeKind::Capsule: {
          const double r = s.dims[0], h = s.dims[1];
          local.push_back(Vec3(0, 0, h + r));  // far cap apex only; the near
                                               // apex sits against the parent
          const int ring_pts = per_shape - 1;
          const int n_rings = (ring_pts + 3) / 4;
          int emitted = 0;
          for (int zi = 0; zi < n_rings && emitted < ring_pts; ++zi) {
            const double z = -h + (2.0 * h) * (zi + 0.5) / n_rings;
            const double phi0 = zi * kPi / 4.0;  // stagger rings
            for (int pi_ = 0; pi_ < 4 && emitted < ring_pts; ++pi_) {
              const double phi = phi0 + pi_ * kPi / 2.0;
              local.push_back(Vec3(r * std::cos(phi), r * std::sin(phi), z));
              ++emitted;
            }
          }
          break;
        }
        case geom::ShapeKind::Sphere: {
          const double r = s.dims[0];
          const int n_rings = std::max(1, (per_shape + 3) / 4);
          int emitted = 0;
          for (int zi = 0; zi < n_rings && emitted < per_shape; ++zi) {
            const double theta = kPi * (zi + 0.5) / n_rings;
            const double phi0 = zi * kPi / 4.0;
            for (int pi_ = 0; pi_ < 4 && emitted < per_shape; ++pi_) {
              const double phi = phi0 + pi_ * kPi / 2.0;
              local.push_back(r * Vec3(std::sin(theta) * std::cos(phi),
                                       std::sin(theta) * std::sin(phi), std::cos(theta)));
              ++emitted;
            }
          }
          break;
        }
        case geom::ShapeKind::Box: {
          const Vec3& e = s.dims;
          // face centers, then corners until the budget is spent
          const Vec3 faces[6] = {Vec3(e.x(), 0, 0),  Vec3(-e.x(), 0, 0), Vec3(0, e.y(), 0),
                                 Vec3(0, -e.y(), 0), Vec3(0, 0, e.z()),  Vec3(0, 0, -e.z())};
          for (int i = 0; i < 6 && static_cast<int>(local.size()) < per_shape; ++i) {
            local.push_back(faces[i]);
          }
          for (int cx = -1; cx <= 1 && static_cast<int>(local.size()) < per_shape; cx += 2) {
            for (int cy = -1; cy <= 1 && static_cast<int>(local.size()) < per_shape; cy += 2) {
              for (int cz = -1; cz <= 1 && static_cast<int>(local.size()) < per_shape; cz += 2) {
                local.push_back(Vec3(cx * e.x(), cy * e.y(), cz * e.z()));
              }
            }
          }
          break;
        }
      }
      for (const Vec3& p : local) {
        set.entries.emplace_back(static_cast<int>(li), s.pose * p);
      }
    }
  }
  return set;
}

Vec3 task_velocity_pid(const Vec3& ee_pos, const Vec3& goal, const PidGains& gains,
                       PidState& state, double dt) {
  if (!ee_pos.allFinite() || !goal.allFinite()) {
    throw std::invalid_argument("task_velocity_pid: non-finite input");
  }
  const Vec3 err = goal - ee_pos;
  state.integral += err * dt;
  const double in = state.integral.norm();
  if (in > gains.i_max && in > 0) state.integral *= gains.i_max / in;
  Vec3 deriv = Vec3::Zero();
  if (state.has_prev && dt > 0) deriv = (err - state.prev_err) / dt;
  state.prev_err = err;
  state.has_prev = true;

  Vec3 v = gains.kp * err + gains.ki * state.integral + gains.kd * deriv;
  const double vn = v.norm();
  if (vn > gains.v_max && vn > 0) v *= gains.v_max / vn;
  return v;
}

EnergyResult repulsive_energy(double d, double kappa, double v_bar) {
  if (!(kappa > 0)) throw std::invalid_argument("repulsive_energy: kappa must be positive");
  if (d < 0) return {true, 0.0};
  if (d > kappa) return {false, 0.0};
  const double diff = d - kappa;
  return {false, v_bar / (2.0 * kappa) * diff * diff};
}

VelocityResult repulsive_velocity(double d, const Vec3& grad, double kappa, double v_bar) {
  if (!(kappa > 0)) throw std::invalid_argument("repulsive_velocity: kappa must be positive");
  if (d < 0) return {true, Vec3::Zero()};
  if (d > kappa) return {false, Vec3::Zero()};
  return {false, -(v_bar / kappa) * (d - kappa) * grad};
}

Vec3 combine_obstacles(const std::vector<Vec3>& velocities, const std::vector<bool>& active,
                       bool mean_over_all) {
  if (velocities.empty()) return Vec3::Zero();
  if (velocities.size() != active.size()) {
    throw std::invalid_argument("combine_obstacles: inconsistent lists");
  }
  Vec3 sum = Vec3::Zero();
  int n_active = 0;
  for (size_t i = 0; i < velocities.size(); ++i) {
    sum += velocities[i];
    if (active[i]) ++n_active;
  }
  if (mean_over_all) return sum / static_cast<double>(velocities.size());
  if (n_active == 0) return Vec3::Zero();
  return sum / static_cast<double>(n_active);
}

Vec3 combine_obstacles(const std::vector<Vec3>& velocities) {
  if (velocities.empty()) return Vec3::Zero();
  Vec3 sum = Vec3::Zero();
  for (const auto& v : velocities) sum += v;
  return sum / static_cast<double>(velocities.size());
}

VecX joint_command(const MatX& task_jacobian, const Vec3& task_velocity,
                   const std::vector<MatX>& poi_jacobians, const std::vector<Vec3>& poi_velocities,
                   const VecX& joint_vel_limits) {
  const Eigen::Index dof = task_jacobian.cols();
  if (joint_vel_limits.size() != dof) {
    throw std::invalid_argument("joint_command: limit vector size mismatch");
  }
  if (poi_jacobians.size() != poi_velocities.size()) {
    throw std::invalid_argument("joint_command: PoI lists differ in length");
  }
  VecX qdot = task_jacobian.transpose() * task_velocity;
  for (size_t i = 0; i < poi_jacobians.size(); ++i) {
    if (poi_jacobians[i].cols() != dof) {
      throw std::invalid_argument("joint_command: PoI Jacobian size mismatch");
    }
    qdot.noalias() += poi_jacobians[i].transpose() * poi_velocities[i];
  }
  double max_ratio = 0.0;
  for (Eigen::Index j = 0; j < dof; ++j) {
    if (!(joint_vel_limits[j] > 0)) {
      throw std::invalid_argument("joint_command: limits must be positive");
    }
    max_ratio = std::max(max_ratio, std::abs(qdot[j]) / joint_vel_limits[j]);
  }
  if (max_ratio > 1.0) qdot /= max_ratio;
  return qdot;
}

std::pair<double, Vec3> sphere_baseline_distance(const Vec3& p,
                                                 const std::vector<Sphere>& spheres) {
  if (spheres.empty()) throw std::invalid_argument("sphere_baseline_distance: empty sphere set");
  double best = std::numeric_limits<double>::infinity();
  int best_i = -1;
  for (size_t i = 0; i < spheres.size(); ++i) {
    const double d = (p - spheres[i].center).norm() - spheres[i].radius;
    if (d < best) {  // strict: ties keep the lowest index
      best = d;
      best_i = static_cast<int>(i);
    }
  }
  const Vec3 off = p - spheres[best_i].center;
  const double on = off.norm();
  const Vec3 normal = on > 1e-12 ? Vec3(off / on) : Vec3::UnitZ();
  return {best, normal};
}

std::vector<Sphere> approximate_with_spheres(const geom::ArticulatedModel& m,
                                             const std::vector<Transform>& frames, int per_link) {
  if (per_link < 1) throw std::invalid_argument("approximate_with_spheres: per_link >= 1");
  std::vector<Sphere> out;
  for (size_t li = 0; li < m.links.size(); ++li) {
    for (const auto& s : m.links[li].shapes) {
      const Transform world = frames[li] * s.pose;
      switch (s.kind) {
        case geom::ShapeKind::Sphere:
          out.push_back({world.translation(), s.dims[0]});
          break;
        case geom::ShapeKind::Capsule: {
          const double r = s.dims[0], h = s.dims[1];
          const int k = per_link;
          const double cover = r + h / k;  // covers shaft and caps
          for (int i = 0; i < k; ++i) {
            const double z = -h + (2.0 * h) * (i + 0.5) / k;
            out.push_back({world * Vec3(0, 0, z), cover});
          }
          break;
        }
        case geom::ShapeKind::Box:
          out.push_back({world.translation(), s.dims.norm()});
          break;
      }
    }
  }
  return out;
}

VecX controller_step(const ControllerConfig& cfg, const geom::ArticulatedModel& robot,
                     const VecX& q_r, const PoISet& pois, int ee_link, const Vec3& ee_local,
                     const Vec3& goal, const std::vector<ObstacleField>& obstacles,
                     const std::vector<VecX>& obstacle_q, double dt, PidState& pid,
                     StepDiagnostics& diag) {
  if (obstacles.size() != obstacle_q.size()) {
    throw std::invalid_argument("controller_step: obstacle state list mismatch");
  }
  const auto frames = geom::forward_kinematics(robot, q_r);
  const int n_poi = static_cast<int>(pois.entries.size());
  const int n_obs = static_cast<int>(obstacles.size());

  MatX P(3, n_poi);
  for (int i = 0; i < n_poi; ++i) {
    P.col(i) = frames[pois.entries[i].first] * pois.entries[i].second;
  }

  diag = StepDiagnostics{};
  diag.min_dist.assign(n_obs, std::numeric_limits<double>::infinity());

  // per PoI, per obstacle repulsive velocity (world frame)
  std::vector<std::vector<Vec3>> vel(n_poi, std::vector<Vec3>(n_obs, Vec3::Zero()));
  std::vector<std::vector<bool>> act(n_poi, std::vector<bool>(n_obs, false));

  const auto t0 = std::chrono::steady_clock::now();
  for (int o = 0; o < n_obs; ++o) {
    const ObstacleField& ob = obstacles[o];
    VecX dists(n_poi);
    MatX grads(3, n_poi);

    switch (ob.kind) {
      case FieldKind::Learned: {
        if (!ob.net) throw std::invalid_argument("controller_step: learned field not loaded");
        const Transform inv = ob.pose.inverse();
        MatX Pl(3, n_poi);
        for (int i = 0; i < n_poi; ++i) Pl.col(i) = inv * Vec3(P.col(i));
        if (cfg.force_full_gradients) {
          const auto res = net::query_points(*ob.net, Pl, obstacle_q[o], true);
          dists = res.d.transpose();
          grads = ob.pose.rotation() * res.grad;
        } else {
          const auto res = net::query_points(*ob.net, Pl, obstacle_q[o], false);
          dists = res.d.transpose();
          // gradients only where the band is active
          std::vector<int> need;
          for (int i = 0; i < n_poi; ++i) {
            if (res.d[i] <= cfg.kappa) need.push_back(i);
          }
          grads.setZero();
          if (!need.empty()) {
            MatX sub(3, need.size());
            for (size_t k = 0; k < need.size(); ++k) sub.col(k) = Pl.col(need[k]);
            const auto gres = net::query_points(*ob.net, sub, obstacle_q[o], true);
            for (size_t k = 0; k < need.size(); ++k) {
              grads.col(need[k]) = ob.pose.rotation() * gres.grad.col(k);
            }
          }
        }
        break;
      }
      case FieldKind::Analytic: {
        if (!ob.model) throw std::invalid_argument("controller_step: obstacle model missing");
        auto of = geom::forward_kinematics(*ob.model, obstacle_q[o]);
        for (auto& f : of) f = ob.pose * f;
        for (int i = 0; i < n_poi; ++i) {
          dists[i] = geom::model_sdf(*ob.model, of, P.col(i));
          grads.col(i) = dists[i] <= cfg.kappa
                             ? geom::model_sdf_gradient(*ob.model, of, P.col(i))
                             : Vec3::Zero();
        }
        break;
      }
      case FieldKind::Spheres: {
        if (!ob.model) throw std::invalid_argument("controller_step: obstacle model missing");
        auto of = geom::forward_kinematics(*ob.model, obstacle_q[o]);
        for (auto& f : of) f = ob.pose * f;
        const auto spheres = approximate_with_spheres(*ob.model, of, ob.spheres_per_link);
        for (int i = 0; i < n_poi; ++i) {
          const auto [d, normal] = sphere_baseline_distance(P.col(i), spheres);
          dists[i] = d;
          grads.col(i) = normal;
        }
        break;
      }
    }

    for (int i = 0; i < n_poi; ++i) {
      diag.min_dist[o] = std::min(diag.min_dist[o], dists[i]);
      const auto res = repulsive_velocity(dists[i], grads.col(i), cfg.kappa, cfg.v_bar);
      if (res.collision) diag.collision_signal = true;
      vel[i][o] = res.velocity;
      act[i][o] = dists[i] >= 0 && dists[i] <= cfg.kappa;
      if (act[i][o]) ++diag.active_pois;
    }
  }
  diag.query_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (diag.collision_signal) {
    return VecX::Zero(robot.dof());  // stop: the field reports penetration
  }

  const Vec3 ee = frames[ee_link] * ee_local;
  const Vec3 xdot_t = task_velocity_pid(ee, goal, cfg.pid, pid, dt);
  const MatX jac_t = geom::point_jacobian(robot, frames, ee_link, ee_local);

  std::vector<MatX> poi_jacs;
  std::vector<Vec3> poi_vels;
  for (int i = 0; i < n_poi; ++i) {
    const Vec3 v = combine_obstacles(vel[i], act[i], cfg.mean_over_all);
    if (v.squaredNorm() == 0.0) continue;
    poi_vels.push_back(v);
    poi_jacs.push_back(
        geom::point_jacobian(robot, frames, pois.entries[i].first, pois.entries[i].second));
  }
  return joint_command(jac_t, xdot_t, poi_jacs, poi_vels, cfg.joint_vel_limits);
}

}  // namespace redsdf::ctrl
