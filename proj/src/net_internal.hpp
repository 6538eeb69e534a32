#pragma once

// Shared forward/backward machinery for the field network. Internal to the
// library: the training code differentiates through the input gradient and
// needs the cached activations.

#include "redsdf/network.hpp"

namespace redsdf::net::detail {

using Row = Eigen::RowVectorXd;

inline double stable_sigmoid(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double stable_softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

struct Cache {
  MatX X;  // 3 x B, meters
  MatX U;  // (3+nq) x B, normalized input
  std::array<MatX, kTrunkLayers> Z, A, M;
  MatX Zg, Gb, Mg;
  Row araw, rraw, sig_a, sig_r, alpha, rho;
  Row s, shat, t, sigma, fhat, f, d;
  int batch() const { return static_cast<int>(X.cols()); }
};

void run_forward(const NetworkParams& p, const MatX& X, const MatX& Q, Cache& c);

// Gradient of d with respect to x for every column of the cached batch.
void input_grad_all(const NetworkParams& p, const Cache& c, MatX& G);

}  // namespace redsdf::net::detail
