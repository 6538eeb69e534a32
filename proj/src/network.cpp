#include "redsdf/network.hpp"

#include "net_internal.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

namespace redsdf::net {

namespace detail {

void run_forward(const NetworkParams& p, const MatX& X, const MatX& Q, Cache& c) {
  const int B = static_cast<int>(X.cols());
  const double rb = p.meta.bounding_radius;
  if (X.rows() != 3) throw std::invalid_argument("query points must be 3 x B");
  if (Q.rows() != p.meta.q_dim || Q.cols() != B) {
    throw std::invalid_argument("configuration batch has wrong dimensions");
  }
  if (!X.allFinite() || !Q.allFinite()) throw std::invalid_argument("non-finite query input");

  c.X = X;
  c.U.resize(p.input_dim(), B);
  c.U.topRows(3) = X / rb;
  if (p.meta.q_dim > 0) c.U.bottomRows(p.meta.q_dim) = Q;

  const MatX* prev = &c.U;
  for (int k = 0; k < kTrunkLayers; ++k) {
    c.Z[k].noalias() = p.w[k] * (*prev);
    c.Z[k].colwise() += p.b[k];
    c.M[k] = (c.Z[k].array() > 0.0).cast<double>();
    c.A[k] = c.Z[k].cwiseProduct(c.M[k]);
    prev = &c.A[k];
  }

  c.Zg.noalias() = p.wg * c.A[1];
  c.Zg.colwise() += p.bg;
  c.Mg = (c.Zg.array() > 0.0).cast<double>();
  c.Gb = c.Zg.cwiseProduct(c.Mg);

  c.araw = (p.wa.transpose() * c.Gb).array() + p.ba;
  c.rraw = (p.wr.transpose() * c.Gb).array() + p.br;
  c.sig_a.resize(B);
  c.sig_r.resize(B);
  c.alpha.resize(B);
  for (int j = 0; j < B; ++j) {
    c.sig_a[j] = stable_sigmoid(c.araw[j]);
    c.sig_r[j] = stable_sigmoid(c.rraw[j]);
    c.alpha[j] = stable_softplus(c.araw[j]);
  }
  c.rho = c.sig_r.array() + 0.5;

  c.s = c.X.colwise().norm();
  c.shat = c.s / rb;
  c.t = c.alpha.array() * (c.shat - c.rho).array();
  c.sigma.resize(B);
  for (int j = 0; j < B; ++j) c.sigma[j] = stable_sigmoid(c.t[j]);

  c.fhat = (p.wd.transpose() * c.A[kTrunkLayers - 1]).array() + p.bd;
  c.f = rb * c.fhat;
  c.d = (Row::Ones(B) - c.sigma).cwiseProduct(c.f) + c.sigma.cwiseProduct(c.s);
}

void input_grad_all(const NetworkParams& p, const Cache& c, MatX& G) {
  const int B = c.batch();
  const double rb = p.meta.bounding_radius;

  // near-field head back to the input
  MatX v = c.M[4].cwiseProduct(p.wd.replicate(1, B));
  v = c.M[3].cwiseProduct(p.w[4].transpose() * v);
  v = c.M[2].cwiseProduct(p.w[3].transpose() * v);
  MatX v2 = c.M[1].cwiseProduct(p.w[2].transpose() * v);
  MatX v1 = c.M[0].cwiseProduct(p.w[1].transpose() * v2);
  const MatX gf_x = (p.w[0].transpose() * v1).topRows(3);  // d(fhat)/d(x/rb)

  // shaping heads back to the input (they tap the layer-2 features)
  MatX ba_ = c.Mg.cwiseProduct(p.wa.replicate(1, B));
  MatX br_ = c.Mg.cwiseProduct(p.wr.replicate(1, B));
  MatX v2a = c.M[1].cwiseProduct(p.wg.transpose() * ba_);
  MatX v2r = c.M[1].cwiseProduct(p.wg.transpose() * br_);
  MatX v1a = c.M[0].cwiseProduct(p.w[1].transpose() * v2a);
  MatX v1r = c.M[0].cwiseProduct(p.w[1].transpose() * v2r);
  const MatX ga_x = (p.w[0].transpose() * v1a).topRows(3);  // d(araw)/d(x/rb)
  const MatX gr_x = (p.w[0].transpose() * v1r).topRows(3);  // d(rraw)/d(x/rb)

  G.resize(3, B);
  for (int j = 0; j < B; ++j) {
    const double s = c.s[j];
    const Vec3 xhat = s > 1e-300 ? Vec3(c.X.col(j) / s) : Vec3::Zero();
    const double sig1 = c.sigma[j] * (1.0 - c.sigma[j]);
    const double rho1 = c.sig_r[j] * (1.0 - c.sig_r[j]);
    // grad f in meters: rb * (1/rb) * gf_x = gf_x
    const Vec3 grad_f = gf_x.col(j);
    const Vec3 grad_alpha = c.sig_a[j] / rb * Vec3(ga_x.col(j));
    const Vec3 grad_rho = rho1 / rb * Vec3(gr_x.col(j));
    const Vec3 grad_t =
        grad_alpha * (c.shat[j] - c.rho[j]) + c.alpha[j] * (xhat / rb - grad_rho);
    const Vec3 grad_sigma = sig1 * grad_t;
    G.col(j) = (1.0 - c.sigma[j]) * grad_f + (s - c.f[j]) * grad_sigma + c.sigma[j] * xhat;
  }
}

}  // namespace detail

NetworkParams NetworkParams::init(int q_dim, int width, double bounding_radius, uint64_t seed) {
  if (q_dim < 0 || width < 1) throw std::invalid_argument("bad network dimensions");
  NetworkParams p;
  p.meta.q_dim = q_dim;
  p.meta.width = width;
  p.meta.bounding_radius = bounding_radius;

  std::mt19937_64 rng(seed);
  auto fill_uniform = [&rng](MatX& m, double limit) {
    std::uniform_real_distribution<double> u(-limit, limit);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  };

  int fan_in = 3 + q_dim;
  for (int k = 0; k < kTrunkLayers; ++k) {
    p.w[k].resize(width, fan_in);
    fill_uniform(p.w[k], std::sqrt(6.0 / fan_in));
    p.b[k] = VecX::Zero(width);
    fan_in = width;
  }
  p.wg.resize(kBranchWidth, width);
  fill_uniform(p.wg, std::sqrt(6.0 / width));
  p.bg = VecX::Zero(kBranchWidth);

  MatX head(kBranchWidth, 2);
  fill_uniform(head, 0.01);
  p.wa = head.col(0);
  p.wr = head.col(1);
  p.ba = std::log(std::exp(5.0) - 1.0);  // softplus(ba) = 5: decisive switch from the start
  p.br = 0.0;                            // rho starts at 1.0 bounding radii
  p.wd = VecX::Zero(width);
  p.bd = 0.0;
  return p;
}

void NetworkParams::validate() const {
  const int width = meta.width;
  if (w[0].rows() != width || w[0].cols() != input_dim()) {
    throw std::invalid_argument("first trunk layer has inconsistent shape");
  }
  for (int k = 1; k < kTrunkLayers; ++k) {
    if (w[k].rows() != width || w[k].cols() != width) {
      throw std::invalid_argument("trunk layer has inconsistent shape");
    }
  }
  for (int k = 0; k < kTrunkLayers; ++k) {
    if (b[k].size() != width) throw std::invalid_argument("trunk bias has inconsistent shape");
    if (!w[k].allFinite() || !b[k].allFinite()) {
      throw std::invalid_argument("non-finite trunk parameters");
    }
  }
  if (wg.rows() != kBranchWidth || wg.cols() != width || bg.size() != kBranchWidth ||
      wa.size() != kBranchWidth || wr.size() != kBranchWidth || wd.size() != width) {
    throw std::invalid_argument("head shapes are inconsistent");
  }
  if (!wg.allFinite() || !bg.allFinite() || !wa.allFinite() || !wr.allFinite() ||
      !wd.allFinite() || !std::isfinite(ba) || !std::isfinite(br) || !std::isfinite(bd)) {
    throw std::invalid_argument("non-finite head parameters");
  }
  if (!(meta.bounding_radius > 0)) throw std::invalid_argument("bounding radius must be positive");
}

size_t NetworkParams::param_count() const {
  size_t n = 0;
  for (int k = 0; k < kTrunkLayers; ++k) n += w[k].size() + b[k].size();
  n += wg.size() + bg.size() + wa.size() + wr.size() + wd.size() + 3;
  return n;
}

VecX pack(const NetworkParams& p) {
  VecX flat(p.param_count());
  Eigen::Index at = 0;
  auto put = [&](const double* data, Eigen::Index n) {
    std::memcpy(flat.data() + at, data, sizeof(double) * n);
    at += n;
  };
  for (int k = 0; k < kTrunkLayers; ++k) {
    put(p.w[k].data(), p.w[k].size());
    put(p.b[k].data(), p.b[k].size());
  }
  put(p.wg.data(), p.wg.size());
  put(p.bg.data(), p.bg.size());
  put(p.wa.data(), p.wa.size());
  put(&p.ba, 1);
  put(p.wr.data(), p.wr.size());
  put(&p.br, 1);
  put(p.wd.data(), p.wd.size());
  put(&p.bd, 1);
  return flat;
}

void unpack(const VecX& flat, NetworkParams& p) {
  if (flat.size() != static_cast<Eigen::Index>(p.param_count())) {
    throw std::invalid_argument("flat parameter vector has wrong length");
  }
  Eigen::Index at = 0;
  auto take = [&](double* data, Eigen::Index n) {
    std::memcpy(data, flat.data() + at, sizeof(double) * n);
    at += n;
  };
  for (int k = 0; k < kTrunkLayers; ++k) {
    take(p.w[k].data(), p.w[k].size());
    take(p.b[k].data(), p.b[k].size());
  }
  take(p.wg.data(), p.wg.size());
  take(p.bg.data(), p.bg.size());
  take(p.wa.data(), p.wa.size());
  take(&p.ba, 1);
  take(p.wr.data(), p.wr.size());
  take(&p.br, 1);
  take(p.wd.data(), p.wd.size());
  take(&p.bd, 1);
}

BatchResult query_batch(const NetworkParams& p, const MatX& X, const MatX& Q, bool with_grad) {
  detail::Cache c;
  detail::run_forward(p, X, Q, c);
  BatchResult r;
  r.d = c.d;
  r.sigma = c.sigma;
  r.f = c.f;
  r.alpha = c.alpha;
  r.rho = c.rho;
  if (with_grad) detail::input_grad_all(p, c, r.grad);
  return r;
}

BatchResult query_points(const NetworkParams& p, const MatX& X, const VecX& q, bool with_grad) {
  if (q.size() != p.meta.q_dim) {
    throw std::invalid_argument("configuration has wrong dimension");
  }
  MatX Q(p.meta.q_dim, X.cols());
  Q.colwise() = q;
  return query_batch(p, X, Q, with_grad);
}

QueryResult forward(const NetworkParams& p, const Vec3& x, const VecX& q) {
  const BatchResult r = query_points(p, x, q, true);
  return {r.d[0], r.grad.col(0), r.sigma[0], r.f[0], r.alpha[0], r.rho[0]};
}

std::vector<QueryResult> forward_batch(const NetworkParams& p, const std::vector<Vec3>& xs,
                                       const VecX& q) {
  MatX X(3, xs.size());
  for (size_t i = 0; i < xs.size(); ++i) X.col(i) = xs[i];
  const BatchResult r = query_points(p, X, q, true);
  std::vector<QueryResult> out(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) {
    out[i] = {r.d[i], r.grad.col(i), r.sigma[i], r.f[i], r.alpha[i], r.rho[i]};
  }
  return out;
}

Vec3 input_gradient(const NetworkParams& p, const Vec3& x, const VecX& q) {
  return forward(p, x, q).grad;
}

Vec3 Reflection::reflect(const Vec3& x) const {
  const double n2 = normal.squaredNorm();
  if (n2 < 1e-24) throw std::invalid_argument("reflection plane normal is degenerate");
  const Vec3 n = normal / std::sqrt(n2);
  return x - 2.0 * ((x - point).dot(n)) * n;
}

Mat3 Reflection::matrix() const {
  const double n2 = normal.squaredNorm();
  if (n2 < 1e-24) throw std::invalid_argument("reflection plane normal is degenerate");
  const Vec3 n = normal / std::sqrt(n2);
  return Mat3::Identity() - 2.0 * n * n.transpose();
}

VecX ConfigMirrorMap::apply(const VecX& q) const {
  if (index.size() != sign.size()) throw std::invalid_argument("mirror map is inconsistent");
  VecX out(index.size());
  for (size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= q.size()) {
      throw std::invalid_argument("mirror map index out of range");
    }
    out[i] = sign[i] * q[index[i]];
  }
  return out;
}

QueryResult mirrored_query(const NetworkParams& p, const Reflection& plane, const Vec3& x,
                           const VecX& q, const ConfigMirrorMap& map) {
  if (static_cast<int>(map.index.size()) != p.meta.q_dim) {
    throw std::invalid_argument("mirror map length does not match the model");
  }
  QueryResult r = forward(p, plane.reflect(x), map.apply(q));
  r.grad = plane.matrix() * r.grad;
  return r;
}

namespace {

constexpr char kMagic[4] = {'R', 'D', 'S', 'F'};

void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<char*>(&v), 4); }
void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<char*>(&v), 8); }

uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) throw std::runtime_error("model file truncated");
  return v;
}

double read_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  if (!is) throw std::runtime_error("model file truncated");
  return v;
}

void write_tensor(std::ostream& os, const double* data, uint32_t rows, uint32_t cols) {
  write_u32(os, rows);
  write_u32(os, cols);
  os.write(reinterpret_cast<const char*>(data), sizeof(double) * rows * cols);
}

void read_tensor(std::istream& is, double* data, uint32_t rows, uint32_t cols) {
  const uint32_t r = read_u32(is), c = read_u32(is);
  if (r != rows || c != cols) {
    throw std::runtime_error("model file tensor shape mismatch");
  }
  is.read(reinterpret_cast<char*>(data), sizeof(double) * rows * cols);
  if (!is) throw std::runtime_error("model file truncated");
}

}  // namespace

void save(const NetworkParams& p, const std::string& path) {
  p.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write model file: " + path);
  os.write(kMagic, 4);
  write_u32(os, kModelFormatVersion);
  write_u32(os, static_cast<uint32_t>(p.meta.q_dim));
  write_u32(os, static_cast<uint32_t>(p.meta.width));
  write_u32(os, static_cast<uint32_t>(kBranchWidth));
  write_u32(os, static_cast<uint32_t>(p.meta.xc_convention));
  write_f64(os, p.meta.bounding_radius);
  for (int k = 0; k < kTrunkLayers; ++k) {
    write_tensor(os, p.w[k].data(), p.w[k].rows(), p.w[k].cols());
    write_tensor(os, p.b[k].data(), p.b[k].size(), 1);
  }
  write_tensor(os, p.wg.data(), p.wg.rows(), p.wg.cols());
  write_tensor(os, p.bg.data(), p.bg.size(), 1);
  write_tensor(os, p.wa.data(), p.wa.size(), 1);
  write_tensor(os, &p.ba, 1, 1);
  write_tensor(os, p.wr.data(), p.wr.size(), 1);
  write_tensor(os, &p.br, 1, 1);
  write_tensor(os, p.wd.data(), p.wd.size(), 1);
  write_tensor(os, &p.bd, 1, 1);
  if (!os) throw std::runtime_error("failed while writing model file: " + path);
}

NetworkParams load(const std::string& path, int expect_q_dim) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open model file: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("not a model file (bad magic): " + path);
  }
  const uint32_t version = read_u32(is);
  if (version != kModelFormatVersion) {
    throw std::runtime_error("unsupported model format version " + std::to_string(version));
  }
  NetworkParams p;
  p.meta.q_dim = static_cast<int>(read_u32(is));
  p.meta.width = static_cast<int>(read_u32(is));
  const uint32_t branch = read_u32(is);
  if (branch != kBranchWidth) {
    throw std::runtime_error("unsupported branch width in model file");
  }
  p.meta.xc_convention = static_cast<int>(read_u32(is));
  p.meta.bounding_radius = read_f64(is);
  if (expect_q_dim >= 0 && p.meta.q_dim != expect_q_dim) {
    throw std::runtime_error("model configuration dimension is " + std::to_string(p.meta.q_dim) +
                             ", expected " + std::to_string(expect_q_dim));
  }

  const int width = p.meta.width;
  int fan_in = p.input_dim();
  for (int k = 0; k < kTrunkLayers; ++k) {
    p.w[k].resize(width, fan_in);
    p.b[k].resize(width);
    read_tensor(is, p.w[k].data(), width, fan_in);
    read_tensor(is, p.b[k].data(), width, 1);
    fan_in = width;
  }
  p.wg.resize(kBranchWidth, width);
  p.bg.resize(kBranchWidth);
  p.wa.resize(kBranchWidth);
  p.wr.resize(kBranchWidth);
  p.wd.resize(width);
  read_tensor(is, p.wg.data(), kBranchWidth, width);
  read_tensor(is, p.bg.data(), kBranchWidth, 1);
  read_tensor(is, p.wa.data(), kBranchWidth, 1);
  read_tensor(is, &p.ba, 1, 1);
  read_tensor(is, p.wr.data(), kBranchWidth, 1);
  read_tensor(is, &p.br, 1, 1);
  read_tensor(is, p.wd.data(), width, 1);
  read_tensor(is, &p.bd, 1, 1);
  p.validate();
  return p;
}

}  // namespace redsdf::net
