#include "covshift/bregman.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace covshift {

namespace {

void require_positive(DivergenceKind kind, double t) {
  if (kind != DivergenceKind::LS && !(t > 0.0)) {
    throw std::domain_error(std::string("psi_") + std::string(to_string(kind)) +
                            " requires t > 0, got " + std::to_string(t));
  }
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_inputs(const DivergenceSpec& spec, const RatioModel& m, const Matrix& offline,
                  const Matrix& online) {
  if (offline.rows() == 0 || online.rows() == 0) {
    throw std::invalid_argument("empirical loss needs nonempty offline and online sets");
  }
  if (m.link != required_link(spec.kind)) {
    throw std::invalid_argument(std::string("divergence ") +
                                std::string(to_string(spec.kind)) +
                                " is paired with a different link");
  }
  if (offline.cols() != m.theta.size() || online.cols() != m.theta.size()) {
    throw std::invalid_argument("feature dimension does not match theta");
  }
}

// Signed power keeps the flattened LS loss defined for negative outputs and
// reduces to the identity at gamma = 1.
double signed_pow(double u, double g) {
  return std::copysign(std::pow(std::abs(u), g), u);
}

// Per-sample loss values and derivative coefficients w.r.t. u = x'theta.
struct Pointwise {
  double loss;
  double dloss;
};

Pointwise offline_term(const DivergenceSpec& spec, double u) {
  const double g = spec.flatten_exponent;
  switch (spec.kind) {
    case DivergenceKind::LR:
      return {0.5 * softplus(g * u), 0.5 * g * sigmoid(g * u)};
    case DivergenceKind::KL: {
      const double e = std::exp(u);
      return {e, e};
    }
    case DivergenceKind::LS:
      if (g == 1.0) return {0.5 * u * u, u};
      if (u == 0.0) return {0.0, 0.0};
      return {0.5 * std::pow(std::abs(u), 2.0 * g),
              g * std::copysign(std::pow(std::abs(u), 2.0 * g - 1.0), u)};
  }
  return {0.0, 0.0};
}

Pointwise online_term(const DivergenceSpec& spec, double u) {
  const double g = spec.flatten_exponent;
  switch (spec.kind) {
    case DivergenceKind::LR:
      return {0.5 * softplus(-g * u), -0.5 * g * sigmoid(-g * u)};
    case DivergenceKind::KL:
      return {-u, -1.0};
    case DivergenceKind::LS:
      if (g == 1.0) return {-u, -1.0};
      if (u == 0.0) return {0.0, 0.0};
      return {-signed_pow(u, g), -g * std::pow(std::abs(u), g - 1.0)};
  }
  return {0.0, 0.0};
}

LossAndGrad evaluate(const DivergenceSpec& spec, const RatioModel& m, const Matrix& offline,
                     const Matrix& online, bool want_grad) {
  check_inputs(spec, m, offline, online);
  const Vector u0 = offline * m.theta;
  const Vector u1 = online * m.theta;
  Vector c0(u0.size());
  Vector c1(u1.size());
  double loss0 = 0.0;
  double loss1 = 0.0;
  for (Eigen::Index i = 0; i < u0.size(); ++i) {
    const Pointwise p = offline_term(spec, u0[i]);
    loss0 += p.loss;
    c0[i] = p.dloss;
  }
  for (Eigen::Index i = 0; i < u1.size(); ++i) {
    const Pointwise p = online_term(spec, u1[i]);
    loss1 += p.loss;
    c1[i] = p.dloss;
  }
  const double n0 = static_cast<double>(u0.size());
  const double n1 = static_cast<double>(u1.size());
  LossAndGrad out;
  out.loss = loss0 / n0 + loss1 / n1;
  if (spec.kind == DivergenceKind::LS) out.loss += 0.5;
  if (want_grad) {
    out.grad = offline.transpose() * c0 / n0 + online.transpose() * c1 / n1;
  }
  return out;
}

}  // namespace

std::string_view to_string(DivergenceKind kind) {
  switch (kind) {
    case DivergenceKind::LS: return "LS";
    case DivergenceKind::LR: return "LR";
    case DivergenceKind::KL: return "KL";
  }
  return "?";
}

DivergenceKind parse_divergence_kind(std::string_view name) {
  if (name == "LS" || name == "ls") return DivergenceKind::LS;
  if (name == "LR" || name == "lr") return DivergenceKind::LR;
  if (name == "KL" || name == "kl") return DivergenceKind::KL;
  throw std::invalid_argument("unknown divergence kind: " + std::string(name));
}

DivergenceSpec DivergenceSpec::make(DivergenceKind kind, double beta, double flatten_exponent) {
  if (!(beta >= 1.0)) throw std::invalid_argument("beta must be at least 1");
  if (!(flatten_exponent > 0.0 && flatten_exponent <= 1.0)) {
    throw std::invalid_argument("flatten exponent must lie in (0, 1]");
  }
  if (kind == DivergenceKind::LS && flatten_exponent < 0.5) {
    throw std::invalid_argument("LS flattening needs exponent in [1/2, 1] for convexity");
  }
  DivergenceSpec spec;
  spec.kind = kind;
  spec.flatten_exponent = flatten_exponent;
  switch (kind) {
    case DivergenceKind::LS: spec.strong_convexity = 1.0; break;
    case DivergenceKind::LR: spec.strong_convexity = 1.0 / (beta + beta * beta); break;
    case DivergenceKind::KL: spec.strong_convexity = 1.0 / beta; break;
  }
  return spec;
}

double psi_value(DivergenceKind kind, double t) {
  require_positive(kind, t);
  switch (kind) {
    case DivergenceKind::LS: return 0.5 * (t - 1.0) * (t - 1.0);
    case DivergenceKind::LR: return t * std::log(t) - (t + 1.0) * std::log1p(t);
    case DivergenceKind::KL: return t * std::log(t) - t;
  }
  return 0.0;
}

double psi_deriv(DivergenceKind kind, double t) {
  require_positive(kind, t);
  switch (kind) {
    case DivergenceKind::LS: return t - 1.0;
    case DivergenceKind::LR: return std::log(t) - std::log1p(t);
    case DivergenceKind::KL: return std::log(t);
  }
  return 0.0;
}

double psi_second(DivergenceKind kind, double t) {
  require_positive(kind, t);
  switch (kind) {
    case DivergenceKind::LS: return 1.0;
    case DivergenceKind::LR: return 1.0 / (t * (1.0 + t));
    case DivergenceKind::KL: return 1.0 / t;
  }
  return 0.0;
}

double bregman_div(DivergenceKind kind, double a, double b) {
  const double d = psi_value(kind, a) - psi_value(kind, b) - psi_deriv(kind, b) * (a - b);
  // Rounding can push a true zero slightly negative.
  return std::max(d, 0.0);
}

Link required_link(DivergenceKind kind) {
  return kind == DivergenceKind::LS ? Link::Linear : Link::Exponential;
}

double ratio_eval(const RatioModel& m, const Vector& x) {
  const double u = m.theta.dot(x);
  return m.link == Link::Exponential ? std::exp(u) : u;
}

Vector ratio_eval_all(const RatioModel& m, const Matrix& xs) {
  Vector u = xs * m.theta;
  if (m.link == Link::Exponential) u = u.array().exp().matrix();
  return u;
}

double empirical_loss(const DivergenceSpec& spec, const RatioModel& m, const Matrix& offline,
                      const Matrix& online) {
  return evaluate(spec, m, offline, online, false).loss;
}

Vector empirical_grad(const DivergenceSpec& spec, const RatioModel& m, const Matrix& offline,
                      const Matrix& online) {
  return evaluate(spec, m, offline, online, true).grad;
}

LossAndGrad empirical_loss_and_grad(const DivergenceSpec& spec, const RatioModel& m,
                                    const Matrix& offline, const Matrix& online) {
  return evaluate(spec, m, offline, online, true);
}

double expected_loss_mc(const DivergenceSpec& spec, const RatioModel& m, const Matrix& offline,
                        const FeatureSampler& sampler, Eigen::Index n_mc, Rng& rng) {
  if (n_mc < 1) throw std::invalid_argument("n_mc must be at least 1");
  const Matrix draws = sampler(n_mc, rng);
  return empirical_loss(spec, m, offline, draws);
}

double estimation_error(const RatioModel& m, const RatioFunction& r_star, const Matrix& offline) {
  if (offline.rows() == 0) return 0.0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < offline.rows(); ++i) {
    const Vector x = offline.row(i).transpose();
    total += std::abs(ratio_eval(m, x) - r_star(x));
  }
  return total / static_cast<double>(offline.rows());
}

double matching_base_term(DivergenceKind kind, double r) {
  require_positive(kind, r);
  switch (kind) {
    case DivergenceKind::LS: return 0.5 * (r * r - 1.0);
    case DivergenceKind::LR: return std::log1p(r);
    case DivergenceKind::KL: return r;
  }
  return 0.0;
}

double matching_target_term(DivergenceKind kind, double r) {
  require_positive(kind, r);
  switch (kind) {
    case DivergenceKind::LS: return r - 1.0;
    case DivergenceKind::LR: return -std::log1p(1.0 / r);
    case DivergenceKind::KL: return std::log(r);
  }
  return 0.0;
}

double functional_loss(DivergenceKind kind, const Vector& ratio_on_base,
                       const Vector& ratio_on_target) {
  if (ratio_on_base.size() == 0 || ratio_on_target.size() == 0) {
    throw std::invalid_argument("functional_loss needs nonempty samples");
  }
  double base = 0.0;
  double target = 0.0;
  for (Eigen::Index i = 0; i < ratio_on_base.size(); ++i) {
    base += matching_base_term(kind, ratio_on_base[i]);
  }
  for (Eigen::Index i = 0; i < ratio_on_target.size(); ++i) {
    target += matching_target_term(kind, ratio_on_target[i]);
  }
  return base / static_cast<double>(ratio_on_base.size()) -
         target / static_cast<double>(ratio_on_target.size());
}

}  // namespace covshift
