#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <cstdint>
#include <string>
#include <vector>

namespace redsdf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;
using Transform = Eigen::Isometry3d;

namespace geom {

enum class ShapeKind { Sphere, Capsule, Box };

/// A rigid primitive with an analytic signed distance function.
/// Capsules are aligned with the local z axis; `pose` places the shape in
/// its parent (link) frame.
struct PrimitiveShape {
  ShapeKind kind = ShapeKind::Sphere;
  Transform pose = Transform::Identity();
  Vec3 dims = Vec3::Zero();  // sphere: (r,-,-)  capsule: (r, half_len, -)  box: half extents

  static PrimitiveShape sphere(double radius, const Transform& pose = Transform::Identity());
  static PrimitiveShape capsule(double radius, double half_length,
                                const Transform& pose = Transform::Identity());
  static PrimitiveShape box(const Vec3& half_extents, const Transform& pose = Transform::Identity());

  void validate() const;  // throws std::invalid_argument
  double surface_area() const;
};

// Exact signed distance, negative inside. `x` in the shape's parent frame.
double sdf_primitive(const PrimitiveShape& s, const Vec3& x);

// Analytic gradient of sdf_primitive; unit norm almost everywhere. On the
// medial axis an arbitrary unit vector is returned.
Vec3 sdf_primitive_gradient(const PrimitiveShape& s, const Vec3& x);

// Min over member SDFs. Exact outside the union; inside overlaps the
// magnitude is a lower bound but the sign is correct.
double sdf_union(const std::vector<PrimitiveShape>& shapes, const Vec3& x);
Vec3 sdf_union_gradient(const std::vector<PrimitiveShape>& shapes, const Vec3& x);

struct Link {
  int parent = -1;                       // must be < own index; -1 attaches to root
  Transform origin = Transform::Identity();  // fixed transform from parent frame
  bool revolute = false;
  Vec3 axis = Vec3::UnitZ();             // joint axis, unit, in the post-origin frame
  double limit_lo = 0.0;
  double limit_hi = 0.0;
  int q_index = -1;                      // set by ArticulatedModel::finalize
  std::vector<PrimitiveShape> shapes;
};

/// Revolute-joint chain of primitive-shape links. The root frame doubles as
/// the target-centric frame: the field center sits at its origin.
struct ArticulatedModel {
  std::string name;
  std::vector<Link> links;
  double bounding_radius = 1.0;

  int dof() const;
  void finalize();        // assigns q_index in link order, then validates
  void validate() const;  // throws std::invalid_argument
};

ArticulatedModel load_model(const std::string& path);
ArticulatedModel model_from_json_text(const std::string& text, const std::string& origin_hint);

// World (root-frame) pose of every link. Throws on dimension mismatch
// (std::invalid_argument) or joint limit violation (std::out_of_range).
std::vector<Transform> forward_kinematics(const ArticulatedModel& m, const VecX& q);

// Geometric position Jacobian (3 x dof) of a link-fixed point.
MatX point_jacobian(const ArticulatedModel& m, const VecX& q, int link_index,
                    const Vec3& local_point);
// Same, reusing frames already computed by forward_kinematics.
MatX point_jacobian(const ArticulatedModel& m, const std::vector<Transform>& frames,
                    int link_index, const Vec3& local_point);

// Signed distance from x (root frame) to the posed model, with `frames` from
// forward_kinematics (optionally pre-multiplied by a world pose).
double model_sdf(const ArticulatedModel& m, const std::vector<Transform>& frames, const Vec3& x);
Vec3 model_sdf_gradient(const ArticulatedModel& m, const std::vector<Transform>& frames,
                        const Vec3& x);

struct SurfaceSample {
  Vec3 x;         // root frame, meters
  Vec3 n;         // outward unit normal
  int config_id;  // which configuration this was sampled under
};

// Area-uniform surface samples with oracle normals; points that land inside
// another primitive of the model union are resampled. Deterministic per seed.
std::vector<SurfaceSample> sample_surface(const ArticulatedModel& m, const VecX& q, int count,
                                          uint64_t seed, int config_id = 0);

// Per-link local surface points (e.g. for a collision-check shell). No
// cross-link rejection: configurations change, so overlap is tolerated.
std::vector<std::pair<int, Vec3>> sample_link_shell(const ArticulatedModel& m, int per_link,
                                                    uint64_t seed);

}  // namespace geom
}  // namespace redsdf
