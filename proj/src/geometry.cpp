#include "redsdf/geometry.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace redsdf::geom {

using json = nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;

void check_rotation(const Mat3& r) {
  const double det_err = std::abs(r.determinant() - 1.0);
  const double ortho_err = (r.transpose() * r - Mat3::Identity()).norm();
  if (det_err > 1e-9 || ortho_err > 1e-8) {
    throw std::invalid_argument("shape pose rotation is not orthonormal");
  }
}

}  // namespace

PrimitiveShape PrimitiveShape::sphere(double radius, const Transform& pose) {
  PrimitiveShape s;
  s.kind = ShapeKind::Sphere;
  s.pose = pose;
  s.dims = Vec3(radius, 0, 0);
  s.validate();
  return s;
}

PrimitiveShape PrimitiveShape::capsule(double radius, double half_length, const Transform& pose) {
  PrimitiveShape s;
  s.kind = ShapeKind::Capsule;
  s.pose = pose;
  s.dims = Vec3(radius, half_length, 0);
  s.validate();
  return s;
}

PrimitiveShape PrimitiveShape::box(const Vec3& half_extents, const Transform& pose) {
  PrimitiveShape s;
  s.kind = ShapeKind::Box;
  s.pose = pose;
  s.dims = half_extents;
  s.validate();
  return s;
}

void PrimitiveShape::validate() const {
  check_rotation(pose.rotation());
  switch (kind) {
    case ShapeKind::Sphere:
      if (!(dims[0] > 0)) throw std::invalid_argument("sphere radius must be positive");
      break;
    case ShapeKind::Capsule:
      if (!(dims[0] > 0) || !(dims[1] > 0)) {
        throw std::invalid_argument("capsule radius and half-length must be positive");
      }
      break;
    case ShapeKind::Box:
      if (!(dims.minCoeff() > 0)) throw std::invalid_argument("box half-extents must be positive");
      break;
  }
}

double PrimitiveShape::surface_area() const {
  switch (kind) {
    case ShapeKind::Sphere:
      return 4.0 * kPi * dims[0] * dims[0];
    case ShapeKind::Capsule:
      // lateral cylinder + two hemispherical caps
      return 2.0 * kPi * dims[0] * (2.0 * dims[1]) + 4.0 * kPi * dims[0] * dims[0];
    case ShapeKind::Box:
      return 8.0 * (dims[0] * dims[1] + dims[1] * dims[2] + dims[2] * dims[0]);
  }
  return 0.0;
}

namespace {

// Local-frame distance functions. p is in the shape frame.

double sdf_sphere_local(const Vec3& p, double r) { return p.norm() - r; }

double sdf_capsule_local(const Vec3& p, double r, double h) {
  const double t = std::clamp(p.z(), -h, h);
  return (p - Vec3(0, 0, t)).norm() - r;
}

double sdf_box_local(const Vec3& p, const Vec3& e) {
  const Vec3 q = p.cwiseAbs() - e;
  const Vec3 q_pos = q.cwiseMax(0.0);
  return q_pos.norm() + std::min(q.maxCoeff(), 0.0);
}

Vec3 grad_sphere_local(const Vec3& p, double /*r*/) {
  const double n = p.norm();
  if (n < 1e-12) return Vec3::UnitZ();
  return p / n;
}

Vec3 grad_capsule_local(const Vec3& p, double /*r*/, double h) {
  const double t = std::clamp(p.z(), -h, h);
  const Vec3 v = p - Vec3(0, 0, t);
  const double n = v.norm();
  if (n < 1e-12) return Vec3::UnitX();  // on the core segment: any radial direction
  return v / n;
}

Vec3 grad_box_local(const Vec3& p, const Vec3& e) {
  const Vec3 q = p.cwiseAbs() - e;
  const Vec3 sgn(p.x() >= 0 ? 1.0 : -1.0, p.y() >= 0 ? 1.0 : -1.0, p.z() >= 0 ? 1.0 : -1.0);
  if ((q.array() > 0).any()) {
    const Vec3 q_pos = q.cwiseMax(0.0);
    return sgn.cwiseProduct(q_pos / q_pos.norm());
  }
  // inside: steepest exit along the least-deep axis
  int axis = 0;
  q.maxCoeff(&axis);
  Vec3 g = Vec3::Zero();
  g[axis] = sgn[axis];
  return g;
}

}  // namespace

double sdf_primitive(const PrimitiveShape& s, const Vec3& x) {
  const Vec3 p = s.pose.inverse() * x;
  switch (s.kind) {
    case ShapeKind::Sphere:
      return sdf_sphere_local(p, s.dims[0]);
    case ShapeKind::Capsule:
      return sdf_capsule_local(p, s.dims[0], s.dims[1]);
    case ShapeKind::Box:
      return sdf_box_local(p, s.dims);
  }
  return 0.0;
}

Vec3 sdf_primitive_gradient(const PrimitiveShape& s, const Vec3& x) {
  const Vec3 p = s.pose.inverse() * x;
  Vec3 g_local;
  switch (s.kind) {
    case ShapeKind::Sphere:
      g_local = grad_sphere_local(p, s.dims[0]);
      break;
    case ShapeKind::Capsule:
      g_local = grad_capsule_local(p, s.dims[0], s.dims[1]);
      break;
    case ShapeKind::Box:
      g_local = grad_box_local(p, s.dims);
      break;
  }
  return s.pose.rotation() * g_local;
}

double sdf_union(const std::vector<PrimitiveShape>& shapes, const Vec3& x) {
  if (shapes.empty()) throw std::invalid_argument("sdf_union: empty shape list");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : shapes) best = std::min(best, sdf_primitive(s, x));
  return best;
}

Vec3 sdf_union_gradient(const std::vector<PrimitiveShape>& shapes, const Vec3& x) {
  if (shapes.empty()) throw std::invalid_argument("sdf_union_gradient: empty shape list");
  double best = std::numeric_limits<double>::infinity();
  const PrimitiveShape* arg = nullptr;
  for (const auto& s : shapes) {
    const double d = sdf_primitive(s, x);
    if (d < best) {
      best = d;
      arg = &s;
    }
  }
  return sdf_primitive_gradient(*arg, x);
}

int ArticulatedModel::dof() const {
  int n = 0;
  for (const auto& l : links) n += l.revolute ? 1 : 0;
  return n;
}

void ArticulatedModel::finalize() {
  int qi = 0;
  for (auto& l : links) l.q_index = l.revolute ? qi++ : -1;
  validate();
}

void ArticulatedModel::validate() const {
  if (links.empty()) throw std::invalid_argument("model has no links");
  if (!(bounding_radius > 0)) throw std::invalid_argument("bounding_radius must be positive");
  for (size_t i = 0; i < links.size(); ++i) {
    const Link& l = links[i];
    if (l.parent >= static_cast<int>(i)) {
      throw std::invalid_argument("links must be in tree order (parent < own index)");
    }
    if (l.parent < -1) throw std::invalid_argument("invalid parent index");
    check_rotation(l.origin.rotation());
    if (l.revolute) {
      if (std::abs(l.axis.norm() - 1.0) > 1e-9) {
        throw std::invalid_argument("joint axis must be a unit vector");
      }
      if (!(l.limit_lo < l.limit_hi)) throw std::invalid_argument("joint limits need lo < hi");
    }
    for (const auto& s : l.shapes) s.validate();
  }
}

std::vector<Transform> forward_kinematics(const ArticulatedModel& m, const VecX& q) {
  if (q.size() != m.dof()) {
    throw std::invalid_argument("forward_kinematics: configuration has wrong dimension");
  }
  std::vector<Transform> frames(m.links.size());
  for (size_t i = 0; i < m.links.size(); ++i) {
    const Link& l = m.links[i];
    Transform base = (l.parent < 0) ? Transform::Identity() : frames[l.parent];
    base = base * l.origin;
    if (l.revolute) {
      const double qi = q[l.q_index];
      if (qi < l.limit_lo || qi > l.limit_hi) {
        std::ostringstream os;
        os << "joint " << l.q_index << " out of limits: " << qi << " not in [" << l.limit_lo
           << ", " << l.limit_hi << "]";
        throw std::out_of_range(os.str());
      }
      base = base * Eigen::AngleAxisd(qi, l.axis);
    }
    frames[i] = base;
  }
  return frames;
}

MatX point_jacobian(const ArticulatedModel& m, const VecX& q, int link_index,
                    const Vec3& local_point) {
  return point_jacobian(m, forward_kinematics(m, q), link_index, local_point);
}

MatX point_jacobian(const ArticulatedModel& m, const std::vector<Transform>& frames,
                    int link_index, const Vec3& local_point) {
  if (link_index < 0 || link_index >= static_cast<int>(m.links.size())) {
    throw std::invalid_argument("point_jacobian: invalid link index");
  }
  const Vec3 p = frames[link_index] * local_point;

  MatX jac = MatX::Zero(3, m.dof());
  for (int a = link_index; a >= 0; a = m.links[a].parent) {
    const Link& l = m.links[a];
    if (!l.revolute) continue;
    const Vec3 axis_w = frames[a].rotation() * l.axis;
    const Vec3 origin_w = frames[a].translation();
    jac.col(l.q_index) = axis_w.cross(p - origin_w);
  }
  return jac;
}

double model_sdf(const ArticulatedModel& m, const std::vector<Transform>& frames, const Vec3& x) {
  double best = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < m.links.size(); ++i) {
    for (const auto& s : m.links[i].shapes) {
      const Vec3 p = (frames[i] * s.pose).inverse() * x;
      double d = 0;
      switch (s.kind) {
        case ShapeKind::Sphere:
          d = sdf_sphere_local(p, s.dims[0]);
          break;
        case ShapeKind::Capsule:
          d = sdf_capsule_local(p, s.dims[0], s.dims[1]);
          break;
        case ShapeKind::Box:
          d = sdf_box_local(p, s.dims);
          break;
      }
      best = std::min(best, d);
    }
  }
  return best;
}

Vec3 model_sdf_gradient(const ArticulatedModel& m, const std::vector<Transform>& frames,
                        const Vec3& x) {
  double best = std::numeric_limits<double>::infinity();
  Vec3 grad = Vec3::UnitZ();
  for (size_t i = 0; i < m.links.size(); ++i) {
    for (const auto& s : m.links[i].shapes) {
      const Transform world = frames[i] * s.pose;
      const Vec3 p = world.inverse() * x;
      double d = 0;
      Vec3 g_local = Vec3::Zero();
      switch (s.kind) {
        case ShapeKind::Sphere:
          d = sdf_sphere_local(p, s.dims[0]);
          g_local = grad_sphere_local(p, s.dims[0]);
          break;
        case ShapeKind::Capsule:
          d = sdf_capsule_local(p, s.dims[0], s.dims[1]);
          g_local = grad_capsule_local(p, s.dims[0], s.dims[1]);
          break;
        case ShapeKind::Box:
          d = sdf_box_local(p, s.dims);
          g_local = grad_box_local(p, s.dims);
          break;
      }
      if (d < best) {
        best = d;
        grad = world.rotation() * g_local;
      }
    }
  }
  return grad;
}

namespace {

Vec3 uniform_unit_vector(std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec3 v;
  do {
    v = Vec3(gauss(rng), gauss(rng), gauss(rng));
  } while (v.norm() < 1e-12);
  return v.normalized();
}

struct LocalSample {
  Vec3 p;
  Vec3 n;
};

LocalSample sample_primitive_local(const PrimitiveShape& s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  switch (s.kind) {
    case ShapeKind::Sphere: {
      const Vec3 n = uniform_unit_vector(rng);
      return {n * s.dims[0], n};
    }
    case ShapeKind::Capsule: {
      const double r = s.dims[0], h = s.dims[1];
      const double lateral = 2.0 * kPi * r * (2.0 * h);
      const double caps = 4.0 * kPi * r * r;
      if (uni(rng) * (lateral + caps) < lateral) {
        const double z = (2.0 * uni(rng) - 1.0) * h;
        const double phi = 2.0 * kPi * uni(rng);
        const Vec3 n(std::cos(phi), std::sin(phi), 0.0);
        return {Vec3(r * n.x(), r * n.y(), z), n};
      }
      Vec3 n = uniform_unit_vector(rng);
      const double cap = n.z() >= 0 ? h : -h;
      return {Vec3(r * n.x(), r * n.y(), cap + r * n.z()), n};
    }
    case ShapeKind::Box: {
      const Vec3& e = s.dims;
      const double areas[6] = {e.y() * e.z(), e.y() * e.z(), e.x() * e.z(),
                               e.x() * e.z(), e.x() * e.y(), e.x() * e.y()};
      double total = 0;
      for (double a : areas) total += a;
      double pick = uni(rng) * total;
      int face = 0;
      for (; face < 5; ++face) {
        if (pick < areas[face]) break;
        pick -= areas[face];
      }
      const int axis = face / 2;
      const double sign = (face % 2 == 0) ? 1.0 : -1.0;
      Vec3 p;
      p[axis] = sign * e[axis];
      const int u = (axis + 1) % 3, v = (axis + 2) % 3;
      p[u] = (2.0 * uni(rng) - 1.0) * e[u];
      p[v] = (2.0 * uni(rng) - 1.0) * e[v];
      Vec3 n = Vec3::Zero();
      n[axis] = sign;
      return {p, n};
    }
  }
  return {Vec3::Zero(), Vec3::UnitZ()};
}

}  // namespace

std::vector<SurfaceSample> sample_surface(const ArticulatedModel& m, const VecX& q, int count,
                                          uint64_t seed, int config_id) {
  if (count <= 0) throw std::invalid_argument("sample_surface: count must be positive");
  const auto frames = forward_kinematics(m, q);

  struct Owner {
    const PrimitiveShape* shape;
    Transform world;
    double cum_area;
  };
  std::vector<Owner> owners;
  double total = 0;
  for (size_t i = 0; i < m.links.size(); ++i) {
    for (const auto& s : m.links[i].shapes) {
      total += s.surface_area();
      owners.push_back({&s, frames[i] * s.pose, total});
    }
  }
  if (owners.empty()) throw std::invalid_argument("sample_surface: model has no shapes");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, total);

  std::vector<SurfaceSample> out;
  out.reserve(count);
  int guard = 0;
  while (static_cast<int>(out.size()) < count) {
    if (++guard > 1000 * count) {
      throw std::runtime_error("sample_surface: rejection rate too high; model degenerate?");
    }
    const double pick = uni(rng);
    size_t oi = 0;
    while (oi + 1 < owners.size() && owners[oi].cum_area <= pick) ++oi;
    const Owner& o = owners[oi];
    const LocalSample ls = sample_primitive_local(*o.shape, rng);
    const Vec3 xw = o.world * ls.p;

    // reject points buried inside another primitive of the union
    bool inside_other = false;
    for (const Owner& other : owners) {
      if (&other == &o) continue;
      const Vec3 p = other.world.inverse() * xw;
      double d = 0;
      switch (other.shape->kind) {
        case ShapeKind::Sphere:
          d = sdf_sphere_local(p, other.shape->dims[0]);
          break;
        case ShapeKind::Capsule:
          d = sdf_capsule_local(p, other.shape->dims[0], other.shape->dims[1]);
          break;
        case ShapeKind::Box:
          d = sdf_box_local(p, other.shape->dims);
          break;
      }
      if (d < -1e-9) {
        inside_other = true;
        break;
      }
    }
    if (inside_other) continue;

    out.push_back({xw, o.world.rotation() * ls.n, config_id});
  }
  return out;
}

std::vector<std::pair<int, Vec3>> sample_link_shell(const ArticulatedModel& m, int per_link,
                                                    uint64_t seed) {
  std::vector<std::pair<int, Vec3>> out;
  std::mt19937_64 rng(seed);
  for (size_t i = 0; i < m.links.size(); ++i) {
    const auto& shapes = m.links[i].shapes;
    if (shapes.empty()) continue;
    double total = 0;
    std::vector<double> cum;
    for (const auto& s : shapes) {
      total += s.surface_area();
      cum.push_back(total);
    }
    std::uniform_real_distribution<double> uni(0.0, total);
    for (int k = 0; k < per_link; ++k) {
      const double pick = uni(rng);
      size_t si = 0;
      while (si + 1 < shapes.size() && cum[si] <= pick) ++si;
      const LocalSample ls = sample_primitive_local(shapes[si], rng);
      out.emplace_back(static_cast<int>(i), shapes[si].pose * ls.p);
    }
  }
  return out;
}

namespace {

Transform parse_pose(const json& j) {
  Transform t = Transform::Identity();
  if (j.contains("xyz")) {
    const auto& v = j.at("xyz");
    t.translation() = Vec3(v.at(0), v.at(1), v.at(2));
  }
  if (j.contains("rpy")) {
    const auto& v = j.at("rpy");
    t.linear() = (Eigen::AngleAxisd(v.at(2).get<double>(), Vec3::UnitZ()) *
                  Eigen::AngleAxisd(v.at(1).get<double>(), Vec3::UnitY()) *
                  Eigen::AngleAxisd(v.at(0).get<double>(), Vec3::UnitX()))
                     .toRotationMatrix();
  }
  return t;
}

PrimitiveShape parse_shape(const json& j) {
  const std::string kind = j.at("kind");
  const Transform pose = j.contains("pose") ? parse_pose(j.at("pose")) : Transform::Identity();
  const auto& dims = j.at("dims");
  if (kind == "sphere") return PrimitiveShape::sphere(dims.at(0), pose);
  if (kind == "capsule") return PrimitiveShape::capsule(dims.at(0), dims.at(1), pose);
  if (kind == "box") return PrimitiveShape::box(Vec3(dims.at(0), dims.at(1), dims.at(2)), pose);
  throw std::invalid_argument("unknown shape kind: " + kind);
}

}  // namespace

ArticulatedModel model_from_json_text(const std::string& text, const std::string& origin_hint) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(origin_hint + ": " + e.what());
  }
  ArticulatedModel m;
  m.name = j.value("name", "unnamed");
  m.bounding_radius = j.at("bounding_radius");
  for (const auto& lj : j.at("links")) {
    Link l;
    l.parent = lj.value("parent", -1);
    if (lj.contains("origin")) l.origin = parse_pose(lj.at("origin"));
    if (lj.contains("joint")) {
      const auto& jj = lj.at("joint");
      const std::string type = jj.value("type", "revolute");
      if (type == "revolute") {
        l.revolute = true;
        const auto& ax = jj.at("axis");
        l.axis = Vec3(ax.at(0), ax.at(1), ax.at(2)).normalized();
        l.limit_lo = jj.at("limits").at(0);
        l.limit_hi = jj.at("limits").at(1);
      } else if (type != "fixed") {
        throw std::invalid_argument("unknown joint type: " + type);
      }
    }
    if (lj.contains("shapes")) {
      for (const auto& sj : lj.at("shapes")) l.shapes.push_back(parse_shape(sj));
    }
    m.links.push_back(std::move(l));
  }
  m.finalize();
  return m;
}

ArticulatedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_json_text(ss.str(), path);
}

}  // namespace redsdf::geom
