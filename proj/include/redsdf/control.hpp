#pragma once

#include "redsdf/geometry.hpp"
#include "redsdf/network.hpp"

#include <string>
#include <utility>
#include <vector>

namespace redsdf::ctrl {

/// Points of interest on the controlled body's shell: (link index, local
/// point). Queried against every obstacle field each control step.
struct PoISet {
  std::vector<std::pair<int, Vec3>> entries;
};

// Deterministic ring sampling on each link's capsule/sphere shells,
// `per_link` points per link; far cap tips included, joint-side tips skipped
// so every point stays on the body's outer shell.
PoISet ring_poi(const geom::ArticulatedModel& m, int per_link);

struct PidGains {
  double kp = 2.0, ki = 0.0, kd = 0.0;
  double v_max = 0.5;  // task-velocity magnitude cap
  double i_max = 0.5;  // integral clamp (anti-windup)
};

struct PidState {
  Vec3 integral = Vec3::Zero();
  Vec3 prev_err = Vec3::Zero();
  bool has_prev = false;
};

Vec3 task_velocity_pid(const Vec3& ee_pos, const Vec3& goal, const PidGains& gains,
                       PidState& state, double dt);

struct EnergyResult {
  bool collision = false;
  double energy = 0.0;
};

// Quadratic avoidance energy: 0 beyond kappa, (v_bar/2kappa)(d-kappa)^2 in
// the band, collision signal below zero.
EnergyResult repulsive_energy(double d, double kappa, double v_bar);

struct VelocityResult {
  bool collision = false;
  Vec3 velocity = Vec3::Zero();
};

// Negative energy gradient: -(v_bar/kappa)(d-kappa) along grad inside the
// band; zero beyond kappa; collision signal below zero.
VelocityResult repulsive_velocity(double d, const Vec3& grad, double kappa, double v_bar);

// Mean repulsive velocity over the obstacle set. With mean_over_all (the
// default), inactive obstacles still count in the denominator.
Vec3 combine_obstacles(const std::vector<Vec3>& velocities, const std::vector<bool>& active,
                       bool mean_over_all = true);
Vec3 combine_obstacles(const std::vector<Vec3>& velocities);

// qdot = J_t^T xdot_t + sum_i J_i^T xdot_i, then one uniform rescale if any
// joint exceeds its velocity limit (direction preserved).
VecX joint_command(const MatX& task_jacobian, const Vec3& task_velocity,
                   const std::vector<MatX>& poi_jacobians, const std::vector<Vec3>& poi_velocities,
                   const VecX& joint_vel_limits);

struct Sphere {
  Vec3 center;
  double radius;
};

// d = min(|p - c| - r); the normal comes from the winning sphere, ties break
// to the lowest index, and a query at a center returns +z.
std::pair<double, Vec3> sphere_baseline_distance(const Vec3& p,
                                                 const std::vector<Sphere>& spheres);

// Conservative covering spheres per link (capsules get per_link spheres
// along the axis, spheres map one-to-one, boxes get their circumsphere).
std::vector<Sphere> approximate_with_spheres(const geom::ArticulatedModel& m,
                                             const std::vector<Transform>& frames, int per_link);

enum class FieldKind { Learned, Analytic, Spheres };

/// One obstacle as the controller sees it: geometry for posing plus the
/// distance-field source used for repulsion.
struct ObstacleField {
  std::string name;
  FieldKind kind = FieldKind::Analytic;
  const geom::ArticulatedModel* model = nullptr;
  const net::NetworkParams* net = nullptr;  // required when kind == Learned
  Transform pose = Transform::Identity();   // obstacle root frame in world
  int spheres_per_link = 2;
};

struct ControllerConfig {
  double kappa = 0.15;   // max avoidance distance, meters
  double v_bar = 0.5;    // repulsive velocity coefficient, m/s
  PidGains pid;
  VecX joint_vel_limits;       // rad/s, one per joint
  bool mean_over_all = true;   // obstacle combination denominator includes inactive sources
  bool force_full_gradients = false;  // benchmark mode: gradients for every PoI
};

struct StepDiagnostics {
  std::vector<double> min_dist;  // per obstacle
  int active_pois = 0;
  double query_seconds = 0.0;
  bool collision_signal = false;  // some field reported d < 0
};

// One reactive control step: batched field queries at the PoI per obstacle,
// per-point repulsion, obstacle combination, task PID, Jacobian-transpose
// mapping and joint-velocity rescaling. Pure given immutable models; on a
// collision signal the command freezes to zero.
VecX controller_step(const ControllerConfig& cfg, const geom::ArticulatedModel& robot,
                     const VecX& q_r, const PoISet& pois, int ee_link, const Vec3& ee_local,
                     const Vec3& goal, const std::vector<ObstacleField>& obstacles,
                     const std::vector<VecX>& obstacle_q, double dt, PidState& pid,
                     StepDiagnostics& diag);

}  // namespace redsdf::ctrl
