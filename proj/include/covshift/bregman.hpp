#pragma once

#include <functional>
#include <string_view>

#include "covshift/core.hpp"

namespace covshift {

/// Divergence generator psi for Bregman density-ratio matching.
///   LS: (t - 1)^2 / 2
///   LR: t log t - (t + 1) log(t + 1)
///   KL: t log t - t
enum class DivergenceKind { LS, LR, KL };

std::string_view to_string(DivergenceKind kind);
DivergenceKind parse_divergence_kind(std::string_view name);

struct DivergenceSpec {
  DivergenceKind kind = DivergenceKind::LR;
  /// Strong convexity of psi on the working domain [1/beta, beta].
  double strong_convexity = 1.0;
  /// Flattening exponent. Scales x'theta inside the LR loss; for LS it is
  /// the power g(z) = z^gamma applied to the linear output (restricted to
  /// [1/2, 1]); KL does not use it.
  double flatten_exponent = 1.0;

  static DivergenceSpec make(DivergenceKind kind, double beta,
                             double flatten_exponent = 1.0);
};

double psi_value(DivergenceKind kind, double t);
double psi_deriv(DivergenceKind kind, double t);
double psi_second(DivergenceKind kind, double t);

/// B_psi(a || b) = psi(a) - psi(b) - psi'(b) (a - b).
double bregman_div(DivergenceKind kind, double a, double b);

enum class Link { Exponential, Linear };

/// Link each divergence is paired with: LR and KL use exp(x'theta),
/// LS uses x'theta.
Link required_link(DivergenceKind kind);

/// Parametric density-ratio function x -> h(x, theta).
struct RatioModel {
  Link link = Link::Exponential;
  Vector theta;
  double radius = 0.0;

  static RatioModel zeros(Link link, int dim, double radius) {
    return RatioModel{link, Vector::Zero(dim), radius};
  }
};

/// exp(x'theta) or x'theta. The linear link may go negative; weight
/// consumers floor it at zero.
double ratio_eval(const RatioModel& m, const Vector& x);
Vector ratio_eval_all(const RatioModel& m, const Matrix& xs);

/// Observable per-round loss L_hat(theta) on offline features and the
/// round's online features.
double empirical_loss(const DivergenceSpec& spec, const RatioModel& m,
                      const Matrix& offline, const Matrix& online);
Vector empirical_grad(const DivergenceSpec& spec, const RatioModel& m,
                      const Matrix& offline, const Matrix& online);

struct LossAndGrad {
  double loss = 0.0;
  Vector grad;
};
LossAndGrad empirical_loss_and_grad(const DivergenceSpec& spec, const RatioModel& m,
                                    const Matrix& offline, const Matrix& online);

/// Draws n i.i.d. feature rows from some target distribution.
using FeatureSampler = std::function<Matrix(Eigen::Index n, Rng& rng)>;

/// empirical_loss with the online average replaced by an n_mc-sample Monte
/// Carlo average from `sampler`. Diagnostic only.
double expected_loss_mc(const DivergenceSpec& spec, const RatioModel& m,
                        const Matrix& offline, const FeatureSampler& sampler,
                        Eigen::Index n_mc, Rng& rng);

using RatioFunction = std::function<double(const Vector&)>;

/// Mean over the offline rows of |r_hat(x) - r_star(x)|.
double estimation_error(const RatioModel& m, const RatioFunction& r_star,
                        const Matrix& offline);

/// Unscaled Bregman matching loss of an arbitrary ratio function, given its
/// values on base-distribution samples and target-distribution samples:
///   mean_base[psi'(r) r - psi(r)] - mean_target[psi'(r)].
double functional_loss(DivergenceKind kind, const Vector& ratio_on_base,
                       const Vector& ratio_on_target);

/// Per-sample pieces of functional_loss: psi'(r) r - psi(r) and psi'(r).
/// LS uses the centered forms (r^2 - 1)/2 and r - 1.
double matching_base_term(DivergenceKind kind, double r);
double matching_target_term(DivergenceKind kind, double r);

}  // namespace covshift
