#include "redsdf/training.hpp"

#include "net_internal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace redsdf::train {

using net::NetworkParams;
using detail_cache = net::detail::Cache;

Mat3 nullspace_projector(const Vec3& v) {
  const double n2 = v.squaredNorm();
  if (n2 <= 1e-24) return Mat3::Identity();  // degenerate convention: |v| <= 1e-12
  return Mat3::Identity() - (v * v.transpose()) / n2;
}

namespace {

uint64_t mix(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct Packed {
  MatX X, Q, N;
  Eigen::RowVectorXd dbar, w;
};

Packed pack_batch(std::span<const data::AugmentedSample> batch, int q_dim) {
  if (batch.empty()) throw std::invalid_argument("batch is empty");
  const int B = static_cast<int>(batch.size());
  Packed pk;
  pk.X.resize(3, B);
  pk.Q.resize(q_dim, B);
  pk.N.resize(3, B);
  pk.dbar.resize(B);
  pk.w.resize(B);
  for (int j = 0; j < B; ++j) {
    const auto& r = batch[j];
    if (r.q.size() != q_dim) {
      throw std::invalid_argument("sample " + std::to_string(j) +
                                  " has mismatched configuration dimension");
    }
    pk.X.col(j) = r.x;
    if (q_dim > 0) pk.Q.col(j) = r.q;
    pk.N.col(j) = r.n_bar;
    pk.dbar[j] = r.d_bar;
    pk.w[j] = r.omega;
  }
  return pk;
}

using Row = Eigen::RowVectorXd;

// Loss over a packed batch; when grad_out is set, also the exact parameter
// gradient including the chains through the input gradient (forward tangent
// along the loss sensitivity direction, then reverse over the doubled graph).
LossBreakdown eval_batch(const NetworkParams& p, const Packed& pk, double gamma,
                         double align_weight, VecX* grad_out) {
  const int B = static_cast<int>(pk.X.cols());
  const double rb = p.meta.bounding_radius;

  net::detail::Cache c;
  net::detail::run_forward(p, pk.X, pk.Q, c);
  MatX G;
  net::detail::input_grad_all(p, c, G);

  LossBreakdown loss;
  Row c_d = Row::Zero(B);
  Row c_rho = Row::Zero(B);
  MatX V = MatX::Zero(3, B);

  for (int j = 0; j < B; ++j) {
    const double d = c.d[j];
    const double e = pk.dbar[j] - d;
    const Vec3 g = G.col(j);
    if (!std::isfinite(d) || !g.allFinite()) {
      throw std::runtime_error("non-finite field output at batch sample " + std::to_string(j));
    }
    const Vec3 n = pk.N.col(j);
    const double gn2 = g.squaredNorm();
    const double nn2 = n.squaredNorm();
    const double gtn = g.dot(n);

    loss.mse += pk.w[j] * e * e;
    const double tang = (gn2 > 1e-24) ? nn2 - gtn * gtn / gn2 : nn2;
    const double nalign = (nn2 > 1e-24) ? gn2 - gtn * gtn / nn2 : gn2;
    loss.tangency += align_weight * tang;
    loss.normal_align += align_weight * nalign;
    loss.rho_reg += gamma * c.rho[j] * c.rho[j];
    if (!std::isfinite(loss.mse + loss.tangency + loss.normal_align + loss.rho_reg)) {
      throw std::runtime_error("non-finite loss at batch sample " + std::to_string(j));
    }

    if (grad_out) {
      c_d[j] = -2.0 * pk.w[j] * e;
      Vec3 v = Vec3::Zero();
      if (gn2 > 1e-24) {
        v += align_weight * (-2.0 * gtn / gn2 * n + 2.0 * gtn * gtn / (gn2 * gn2) * g);
      }
      if (nn2 > 1e-24) {
        v += align_weight * 2.0 * (g - gtn / nn2 * n);
      } else {
        v += align_weight * 2.0 * g;
      }
      V.col(j) = v;
      c_rho[j] = 2.0 * gamma * c.rho[j];
    }
  }
  loss.total = loss.mse + loss.tangency + loss.normal_align + loss.rho_reg;
  if (!grad_out) return loss;

  // ---- tangent pass: directional derivative of the graph along V in x ----
  MatX dU = MatX::Zero(p.input_dim(), B);
  dU.topRows(3) = V / rb;
  std::array<MatX, net::kTrunkLayers> dA;
  {
    const MatX* prev = &dU;
    for (int k = 0; k < net::kTrunkLayers; ++k) {
      dA[k] = c.M[k].cwiseProduct(p.w[k] * (*prev));
      prev = &dA[k];
    }
  }
  const MatX dGb = c.Mg.cwiseProduct(p.wg * dA[1]);
  const Row d_araw = p.wa.transpose() * dGb;
  const Row d_rraw = p.wr.transpose() * dGb;
  const Row d_alpha = c.sig_a.cwiseProduct(d_araw);
  const Row rho1 = c.sig_r.cwiseProduct(Row::Ones(B) - c.sig_r);
  const Row d_rho = rho1.cwiseProduct(d_rraw);
  Row d_s(B);
  for (int j = 0; j < B; ++j) {
    d_s[j] = c.s[j] > 1e-300 ? pk.X.col(j).dot(V.col(j)) / c.s[j] : 0.0;
  }
  const Row d_shat = d_s / rb;
  const Row d_t = d_alpha.cwiseProduct(c.shat - c.rho) + c.alpha.cwiseProduct(d_shat - d_rho);
  const Row sig1 = c.sigma.cwiseProduct(Row::Ones(B) - c.sigma);
  const Row d_sigma = sig1.cwiseProduct(d_t);
  const Row d_fhat = p.wd.transpose() * dA[net::kTrunkLayers - 1];
  const Row d_f = rb * d_fhat;

  // ---- reverse pass over both the primal and the tangent graph ----
  const Row ones = Row::Ones(B);
  const Row a_d = c_d;               // seed: dL/dd
  const Row a_dd = ones;             // seed: dL/d(tangent of d) = 1, V carries the weights
  Row a_rho = c_rho;                 // seed: dL/drho from the regularizer

  Row a_f = a_d.cwiseProduct(ones - c.sigma) - a_dd.cwiseProduct(d_sigma);
  Row a_sigma = a_d.cwiseProduct(c.s - c.f) + a_dd.cwiseProduct(d_s - d_f);
  const Row a_dsigma = a_dd.cwiseProduct(c.s - c.f);
  const Row a_df = a_dd.cwiseProduct(ones - c.sigma);

  a_sigma += a_dsigma.cwiseProduct(ones - 2.0 * c.sigma).cwiseProduct(d_t);
  const Row a_dt = a_dsigma.cwiseProduct(sig1);
  const Row a_t = a_sigma.cwiseProduct(sig1);

  const Row a_dalpha = a_dt.cwiseProduct(c.shat - c.rho);
  Row a_alpha = a_dt.cwiseProduct(d_shat - d_rho);
  a_rho -= a_dt.cwiseProduct(d_alpha);
  const Row a_drho = -a_dt.cwiseProduct(c.alpha);

  a_alpha += a_t.cwiseProduct(c.shat - c.rho);
  a_rho -= a_t.cwiseProduct(c.alpha);

  Row a_araw =
      a_dalpha.cwiseProduct(c.sig_a).cwiseProduct(ones - c.sig_a).cwiseProduct(d_araw);
  const Row a_daraw = a_dalpha.cwiseProduct(c.sig_a);
  a_araw += a_alpha.cwiseProduct(c.sig_a);

  Row a_rraw =
      a_drho.cwiseProduct(rho1).cwiseProduct(ones - 2.0 * c.sig_r).cwiseProduct(d_rraw);
  const Row a_drraw = a_drho.cwiseProduct(rho1);
  a_rraw += a_rho.cwiseProduct(rho1);

  const Row a_fhat = rb * a_f;
  const Row a_dfhat = rb * a_df;

  NetworkParams g;  // gradient holder, same shapes
  g.meta = p.meta;

  g.wd.noalias() = c.A[4] * a_fhat.transpose() + dA[4] * a_dfhat.transpose();
  g.bd = a_fhat.sum();
  MatX aA = p.wd * a_fhat;    // adjoint of A5
  MatX adA = p.wd * a_dfhat;  // adjoint of tangent A5

  g.wa.noalias() = c.Gb * a_araw.transpose() + dGb * a_daraw.transpose();
  g.ba = a_araw.sum();
  g.wr.noalias() = c.Gb * a_rraw.transpose() + dGb * a_drraw.transpose();
  g.br = a_rraw.sum();

  MatX aGb = p.wa * a_araw + p.wr * a_rraw;
  MatX adGb = p.wa * a_daraw + p.wr * a_drraw;
  const MatX aZg = c.Mg.cwiseProduct(aGb);
  const MatX adZg = c.Mg.cwiseProduct(adGb);
  g.wg.noalias() = aZg * c.A[1].transpose() + adZg * dA[1].transpose();
  g.bg = aZg.rowwise().sum();
  const MatX aA2_branch = p.wg.transpose() * aZg;
  const MatX adA2_branch = p.wg.transpose() * adZg;

  for (int k = net::kTrunkLayers - 1; k >= 0; --k) {
    const MatX aZ = c.M[k].cwiseProduct(aA);
    const MatX adZ = c.M[k].cwiseProduct(adA);
    const MatX& prevA = (k > 0) ? c.A[k - 1] : c.U;
    const MatX& prev_dA = (k > 0) ? dA[k - 1] : dU;
    g.w[k].noalias() = aZ * prevA.transpose() + adZ * prev_dA.transpose();
    g.b[k] = aZ.rowwise().sum();
    if (k > 0) {
      aA.noalias() = p.w[k].transpose() * aZ;
      adA.noalias() = p.w[k].transpose() * adZ;
      if (k - 1 == 1) {  // layer-2 features also feed the shaping branch
        aA += aA2_branch;
        adA += adA2_branch;
      }
    }
  }

  *grad_out = net::pack(g);
  return loss;
}

}  // namespace

LossBreakdown loss_terms(const NetworkParams& p, std::span<const data::AugmentedSample> batch,
                         double gamma) {
  const Packed pk = pack_batch(batch, p.meta.q_dim);
  return eval_batch(p, pk, gamma, 1.0, nullptr);
}

VecX param_gradients(const NetworkParams& p, std::span<const data::AugmentedSample> batch,
                     double gamma, LossBreakdown* breakdown) {
  const Packed pk = pack_batch(batch, p.meta.q_dim);
  VecX grad;
  const LossBreakdown loss = eval_batch(p, pk, gamma, 1.0, &grad);
  if (breakdown) *breakdown = loss;
  return grad;
}

namespace {

struct AdamState {
  VecX m, v;
  uint64_t step = 0;
};

void adam_step(VecX& theta, const VecX& grad, AdamState& st, double lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++st.step;
  st.m = b1 * st.m + (1.0 - b1) * grad;
  st.v = b2 * st.v.array() + (1.0 - b2) * grad.array().square();
  const double corr1 = 1.0 - std::pow(b1, static_cast<double>(st.step));
  const double corr2 = 1.0 - std::pow(b2, static_cast<double>(st.step));
  theta.array() -=
      lr * (st.m.array() / corr1) / ((st.v.array() / corr2).sqrt() + eps);
}

constexpr char kStateMagic[4] = {'R', 'D', 'S', 'T'};

void save_state(const AdamState& st, int next_epoch, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write optimizer state: " + path);
  os.write(kStateMagic, 4);
  const uint32_t epoch = static_cast<uint32_t>(next_epoch);
  os.write(reinterpret_cast<const char*>(&epoch), 4);
  os.write(reinterpret_cast<const char*>(&st.step), 8);
  const uint64_t n = static_cast<uint64_t>(st.m.size());
  os.write(reinterpret_cast<const char*>(&n), 8);
  os.write(reinterpret_cast<const char*>(st.m.data()), sizeof(double) * n);
  os.write(reinterpret_cast<const char*>(st.v.data()), sizeof(double) * n);
}

int load_state(AdamState& st, size_t expect_n, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open optimizer state: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kStateMagic, 4) != 0) {
    throw std::runtime_error("not an optimizer state file: " + path);
  }
  uint32_t epoch = 0;
  uint64_t n = 0;
  is.read(reinterpret_cast<char*>(&epoch), 4);
  is.read(reinterpret_cast<char*>(&st.step), 8);
  is.read(reinterpret_cast<char*>(&n), 8);
  if (!is || n != expect_n) throw std::runtime_error("optimizer state shape mismatch: " + path);
  st.m.resize(n);
  st.v.resize(n);
  is.read(reinterpret_cast<char*>(st.m.data()), sizeof(double) * n);
  is.read(reinterpret_cast<char*>(st.v.data()), sizeof(double) * n);
  if (!is) throw std::runtime_error("optimizer state truncated: " + path);
  return static_cast<int>(epoch);
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const data::Dataset& ds) {
  if (ds.splits.train.empty() || ds.splits.val.empty()) {
    throw std::runtime_error("dataset has no train/val splits; run the split step first");
  }
  if (cfg.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (cfg.gamma < 0) throw std::invalid_argument("gamma must be >= 0");

  NetworkParams p;
  AdamState st;
  int start_epoch = 0;
  if (!cfg.resume_from.empty()) {
    p = net::load(cfg.resume_from + ".rdsf", ds.meta.q_dim);
    st.m.resize(p.param_count());
    st.v.resize(p.param_count());
    start_epoch = load_state(st, p.param_count(), cfg.resume_from + ".state");
  } else {
    p = NetworkParams::init(ds.meta.q_dim, cfg.width, ds.meta.bounding_radius,
                            mix(cfg.seed ^ 0x17A1));
    st.m = VecX::Zero(p.param_count());
    st.v = VecX::Zero(p.param_count());
  }
  VecX theta = net::pack(p);

  TrainResult result;
  result.params = p;
  result.best_val = std::numeric_limits<double>::infinity();

  std::vector<int> order(ds.splits.train.begin(), ds.splits.train.end());
  std::vector<data::AugmentedSample> batch;
  batch.reserve(cfg.batch_size);

  auto split_loss = [&](const std::vector<int>& idx) {
    LossBreakdown sum;
    for (size_t at = 0; at < idx.size(); at += cfg.batch_size) {
      batch.clear();
      const size_t hi = std::min(idx.size(), at + cfg.batch_size);
      for (size_t i = at; i < hi; ++i) batch.push_back(ds.records[idx[i]]);
      const Packed pk = pack_batch(batch, p.meta.q_dim);
      const LossBreakdown l = eval_batch(p, pk, cfg.gamma, cfg.align_weight, nullptr);
      sum.mse += l.mse;
      sum.tangency += l.tangency;
      sum.normal_align += l.normal_align;
      sum.rho_reg += l.rho_reg;
      sum.total += l.total;
    }
    return sum;
  };

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const double progress = cfg.epochs > 1 ? static_cast<double>(epoch) / (cfg.epochs - 1) : 0.0;
    const double lr =
        cfg.lr_min + 0.5 * (cfg.lr - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));

    std::mt19937_64 rng(mix(cfg.seed ^ (0x5E9ULL + static_cast<uint64_t>(epoch))));
    std::shuffle(order.begin(), order.end(), rng);

    EpochMetrics em;
    em.epoch = epoch;
    for (size_t at = 0; at < order.size(); at += cfg.batch_size) {
      batch.clear();
      const size_t hi = std::min(order.size(), at + cfg.batch_size);
      for (size_t i = at; i < hi; ++i) batch.push_back(ds.records[order[i]]);
      const Packed pk = pack_batch(batch, p.meta.q_dim);
      VecX grad;
      const LossBreakdown l = eval_batch(p, pk, cfg.gamma, cfg.align_weight, &grad);
      em.mse += l.mse;
      em.tangency += l.tangency;
      em.normal_align += l.normal_align;
      em.rho_reg += l.rho_reg;
      adam_step(theta, grad, st, lr);
      net::unpack(theta, p);
    }

    em.val_total = split_loss(ds.splits.val).total;
    result.trace.push_back(em);

    if (em.val_total < result.best_val) {
      result.best_val = em.val_total;
      result.best_epoch = epoch;
      result.params = p;
    }
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_prefix.empty() &&
        ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs)) {
      net::save(p, cfg.checkpoint_prefix + ".rdsf");
      save_state(st, epoch + 1, cfg.checkpoint_prefix + ".state");
    }
  }
  return result;
}

void write_trace_csv(const std::vector<EpochMetrics>& trace, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write trace: " + path);
  os << "epoch,mse,tangency,normal_align,rho_reg,val_total\n";
  os.precision(12);
  for (const auto& em : trace) {
    os << em.epoch << ',' << em.mse << ',' << em.tangency << ',' << em.normal_align << ','
       << em.rho_reg << ',' << em.val_total << '\n';
  }
}

FieldMetrics evaluate_field(const NetworkParams& p, const geom::ArticulatedModel& model,
                            double band, int probes, uint64_t seed) {
  if (probes < 1) throw std::invalid_argument("evaluate_field: probes must be >= 1");
  FieldMetrics fm;
  const double rb = model.bounding_radius;

  std::mt19937_64 rng(mix(seed ^ 0xE7A1));
  std::uniform_real_distribution<double> uoff(-band, band);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const int group = 200;
  std::vector<double> band_err, surf_abs;
  int grad_unit = 0, grad_total = 0;

  int done = 0, config_id = 0;
  while (done < probes) {
    const int n = std::min(group, probes - done);
    VecX q(model.dof());
    for (const auto& l : model.links) {
      if (!l.revolute) continue;
      std::uniform_real_distribution<double> uq(l.limit_lo, l.limit_hi);
      q[l.q_index] = uq(rng);
    }
    const auto frames = geom::forward_kinematics(model, q);
    const auto samples = geom::sample_surface(model, q, n, mix(seed ^ (0xAB12 + config_id)),
                                              config_id);
    MatX Xb(3, n), Xs(3, n);
    for (int i = 0; i < n; ++i) {
      Xb.col(i) = samples[i].x + samples[i].n * uoff(rng);
      Xs.col(i) = samples[i].x;
    }
    const auto rb_band = net::query_points(p, Xb, q, true);
    const auto rb_surf = net::query_points(p, Xs, q, false);
    for (int i = 0; i < n; ++i) {
      const double oracle = geom::model_sdf(model, frames, Xb.col(i));
      if (std::abs(oracle) <= band) {
        band_err.push_back(std::abs(rb_band.d[i] - oracle));
        ++grad_total;
        const double gn = rb_band.grad.col(i).norm();
        if (gn >= 0.9 && gn <= 1.1) ++grad_unit;
      }
      surf_abs.push_back(std::abs(rb_surf.d[i]));
    }
    done += n;
    ++config_id;
  }

  fm.band_probes = static_cast<int>(band_err.size());
  fm.surface_probes = static_cast<int>(surf_abs.size());
  if (!band_err.empty()) {
    fm.band_mae = std::accumulate(band_err.begin(), band_err.end(), 0.0) / band_err.size();
  }
  if (!surf_abs.empty()) {
    std::sort(surf_abs.begin(), surf_abs.end());
    const size_t i90 = static_cast<size_t>(std::ceil(0.9 * surf_abs.size())) - 1;
    fm.surface_abs_p90 = surf_abs[std::min(i90, surf_abs.size() - 1)];
  }
  fm.grad_unit_frac = grad_total > 0 ? static_cast<double>(grad_unit) / grad_total : 0.0;

  // far-field probes: random directions (and configurations) at fixed radii
  auto far_stats = [&](double radius, double& mean, double& maxv) {
    const int n_dirs = 1000;
    mean = 0;
    maxv = 0;
    int at = 0;
    while (at < n_dirs) {
      const int n = std::min(group, n_dirs - at);
      VecX q(model.dof());
      for (const auto& l : model.links) {
        if (!l.revolute) continue;
        std::uniform_real_distribution<double> uq(l.limit_lo, l.limit_hi);
        q[l.q_index] = uq(rng);
      }
      MatX X(3, n);
      for (int i = 0; i < n; ++i) {
        Vec3 dir(gauss(rng), gauss(rng), gauss(rng));
        while (dir.norm() < 1e-9) dir = Vec3(gauss(rng), gauss(rng), gauss(rng));
        X.col(i) = dir.normalized() * radius;
      }
      const auto res = net::query_points(p, X, q, false);
      for (int i = 0; i < n; ++i) {
        const double rel = std::abs(res.d[i] - radius) / radius;
        mean += rel;
        maxv = std::max(maxv, rel);
      }
      at += n;
    }
    mean /= n_dirs;
  };
  far_stats(3.0 * rb, fm.far3_rel_mean, fm.far3_rel_max);
  far_stats(10.0 * rb, fm.far10_rel_mean, fm.far10_rel_max);
  return fm;
}

}  // namespace redsdf::train
