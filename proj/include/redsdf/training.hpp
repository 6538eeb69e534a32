#pragma once

#include "redsdf/dataset.hpp"
#include "redsdf/network.hpp"

#include <span>
#include <string>
#include <vector>

namespace redsdf::train {

// I - v v^T / |v|^2; identity when |v| <= 1e-12.
Mat3 nullspace_projector(const Vec3& v);

struct LossBreakdown {
  double mse = 0;           // sum of omega * (d_bar - d)^2
  double tangency = 0;      // sum of |null(grad d) * n_bar|^2
  double normal_align = 0;  // sum of |null(n_bar) * grad d|^2
  double rho_reg = 0;       // gamma * sum of rho^2
  double total = 0;
};

LossBreakdown loss_terms(const net::NetworkParams& p,
                         std::span<const data::AugmentedSample> batch, double gamma);

// Exact gradient of the summed loss with respect to every parameter, in
// pack() layout. The alignment terms differentiate through the input
// gradient, so this carries the mixed second-order chains; rectifier
// activation patterns are frozen per forward pass. Throws std::runtime_error
// naming the offending sample if a non-finite value appears.
VecX param_gradients(const net::NetworkParams& p,
                     std::span<const data::AugmentedSample> batch, double gamma,
                     LossBreakdown* breakdown = nullptr);

struct TrainConfig {
  int epochs = 50;
  int batch_size = 512;
  double lr = 1e-3;
  double lr_min = 1e-5;  // cosine decay floor
  double gamma = 0.02;
  double align_weight = 1.0;  // coefficient on both alignment terms
  uint64_t seed = 0;
  int width = 512;
  int checkpoint_every = 0;           // epochs; 0 disables periodic snapshots
  std::string checkpoint_prefix;      // required when checkpoint_every > 0
  std::string resume_from;            // snapshot prefix to continue from
};

struct EpochMetrics {
  int epoch = 0;
  double mse = 0, tangency = 0, normal_align = 0, rho_reg = 0;
  double val_total = 0;
};

struct TrainResult {
  net::NetworkParams params;  // best-validation checkpoint
  std::vector<EpochMetrics> trace;
  int best_epoch = -1;
  double best_val = 0;
};

TrainResult train(const TrainConfig& cfg, const data::Dataset& ds);

void write_trace_csv(const std::vector<EpochMetrics>& trace, const std::string& path);

struct FieldMetrics {
  double band_mae = 0;        // |d - oracle| averaged over the near-surface band
  double surface_abs_p90 = 0; // 90th percentile of |d| at on-surface probes
  double far3_rel_mean = 0, far3_rel_max = 0;   // |d - |x|| / |x| at 3 bounding radii
  double far10_rel_mean = 0, far10_rel_max = 0; // same at 10 bounding radii
  double grad_unit_frac = 0;  // fraction of near-surface probes with |grad| in [0.9, 1.1]
  int band_probes = 0;
  int surface_probes = 0;
};

// Compares the learned field against the analytic oracle: probe points are
// surface samples offset within +-band, plus on-surface and far-radius
// probes. Deterministic per seed.
FieldMetrics evaluate_field(const net::NetworkParams& p, const geom::ArticulatedModel& model,
                            double band, int probes, uint64_t seed);

}  // namespace redsdf::train
