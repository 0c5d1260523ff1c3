#pragma once

#include <vector>

#include "covshift/bregman.hpp"
#include "covshift/ensemble.hpp"

namespace covshift {

struct UlsifFit {
  RatioModel model;   // linear link, radially rescaled into the S-ball
  Vector raw_theta;   // (H + lambda I)^{-1} h before rescaling
};

/// Closed-form regularized least-squares ratio fit:
/// theta = (mean_S0 x x' + lambda I)^{-1} mean_St x.
UlsifFit ulsif_fit(const Matrix& offline, const Matrix& batch, double lambda, double radius);

struct KliepConfig {
  int steps = 100;
  double step_size = 1.0;  // initial trial step, halved by backtracking
  double tol = 1e-10;      // stop once the projected move is this small
};

struct KliepFit {
  RatioModel model;             // exponential link
  std::vector<double> losses;   // loss at theta = 0 followed by one entry per accepted step
};

/// Projected gradient descent on mean_S0 exp(x'theta) - mean_St x'theta from
/// theta = 0 over the S-ball, with Armijo backtracking.
KliepFit kliep_fit(const Matrix& offline, const Matrix& batch, const KliepConfig& cfg,
                   double radius);

/// One ONS learner over the whole horizon, wrapped in the ensemble so it
/// reports the same diagnostics as the adaptive estimator.
OnlineEnsemble olre_estimator(const Hyperparams& h, const DivergenceSpec& spec);

}  // namespace covshift
