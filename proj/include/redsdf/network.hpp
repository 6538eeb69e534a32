#pragma once

#include "redsdf/geometry.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace redsdf::net {

inline constexpr int kTrunkLayers = 5;
inline constexpr int kBranchWidth = 32;
inline constexpr uint32_t kModelFormatVersion = 1;

struct NetMeta {
  int q_dim = 0;
  int width = 512;
  int xc_convention = 0;  // 0: field center at the root-frame origin
  double bounding_radius = 1.0;
};

/// Learnable state of the blended distance field.
///
/// A 5-layer rectified-linear trunk maps the normalized query
/// [x / bounding_radius; q] to features. A linear head on the last layer
/// emits the near-field distance f. A 32-unit branch on the layer-2 features
/// emits two scalars shaping the mode switch: a sharpness alpha
/// (softplus, positive) and a threshold rho (sigmoid plus bias, in
/// (0.5, 1.5) bounding-radius units). The blend
///     d = (1 - sigma) * f + sigma * |x|,
///     sigma = logistic(alpha * (|x| / bounding_radius - rho)),
/// hands the field over to the plain norm away from the object.
struct NetworkParams {
  NetMeta meta;
  std::array<MatX, kTrunkLayers> w;
  std::array<VecX, kTrunkLayers> b;
  MatX wg;  // branch hidden, kBranchWidth x width
  VecX bg;
  VecX wa;  // sharpness head
  double ba = 0.0;
  VecX wr;  // threshold head
  double br = 0.0;
  VecX wd;  // distance head
  double bd = 0.0;

  // Fan-in-scaled uniform trunk/branch init; distance head starts at zero so
  // the initial field is sigma * |x|; threshold starts near 1.0 and
  // sharpness near 5.0 (in bounding-radius units).
  static NetworkParams init(int q_dim, int width, double bounding_radius, uint64_t seed);

  void validate() const;  // shape consistency + finiteness
  int input_dim() const { return 3 + meta.q_dim; }
  size_t param_count() const;
};

// Flat parameter vector in a fixed order (w1,b1,...,w5,b5,wg,bg,wa,ba,wr,br,wd,bd);
// the same layout carries gradients and optimizer state.
VecX pack(const NetworkParams& p);
void unpack(const VecX& flat, NetworkParams& p);

struct QueryResult {
  double d;      // meters
  Vec3 grad;     // d(d)/dx
  double sigma;  // mode switch in (0,1)
  double f;      // near-field head output, meters
  double alpha;  // > 0
  double rho;    // in (0.5, 1.5)
};

struct BatchResult {
  Eigen::RowVectorXd d, sigma, f, alpha, rho;
  MatX grad;  // 3 x B when requested, else empty
};

QueryResult forward(const NetworkParams& p, const Vec3& x, const VecX& q);
std::vector<QueryResult> forward_batch(const NetworkParams& p, const std::vector<Vec3>& xs,
                                       const VecX& q);
Vec3 input_gradient(const NetworkParams& p, const Vec3& x, const VecX& q);

// Core batched evaluation: columns of X are query points sharing q.
BatchResult query_points(const NetworkParams& p, const MatX& X, const VecX& q, bool with_grad);
// Mixed-configuration batch: column j of Q is the configuration for X.col(j).
BatchResult query_batch(const NetworkParams& p, const MatX& X, const MatX& Q, bool with_grad);

struct Reflection {
  Vec3 normal = Vec3::UnitX();  // unit plane normal
  Vec3 point = Vec3::Zero();    // any point on the plane
  Vec3 reflect(const Vec3& x) const;
  Mat3 matrix() const;  // I - 2 n n^T
};

struct ConfigMirrorMap {
  std::vector<int> index;    // q_out[i] = sign[i] * q_in[index[i]]
  std::vector<double> sign;
  VecX apply(const VecX& q) const;
};

// Evaluates the field on the other side of a symmetry plane:
// forward(reflect(x), map(q)) with the gradient reflected back.
QueryResult mirrored_query(const NetworkParams& p, const Reflection& plane, const Vec3& x,
                           const VecX& q, const ConfigMirrorMap& map);

// Binary model file: magic, version, meta, little-endian float64 tensors.
// save -> load -> save is byte-identical.
void save(const NetworkParams& p, const std::string& path);
NetworkParams load(const std::string& path, int expect_q_dim = -1);

}  // namespace redsdf::net
