#include "covshift/baselines.hpp"

#include <cmath>
#include <stdexcept>

namespace covshift {

namespace {

constexpr double kArmijo = 1e-4;
constexpr int kMaxHalvings = 30;

void check_pair(const Matrix& offline, const Matrix& batch) {
  if (offline.rows() == 0 || batch.rows() == 0) {
    throw std::invalid_argument("baseline fit needs nonempty offline and online sets");
  }
  if (offline.cols() != batch.cols()) throw std::invalid_argument("feature dimension mismatch");
  if (!offline.allFinite() || !batch.allFinite()) {
    throw std::invalid_argument("non-finite feature value");
  }
}

Vector project_ball(Vector theta, double radius) {
  const double n = theta.norm();
  if (n > radius) theta *= radius / n;
  return theta;
}

}  // namespace

UlsifFit ulsif_fit(const Matrix& offline, const Matrix& batch, double lambda, double radius) {
  check_pair(offline, batch);
  if (!(lambda > 0.0)) throw std::invalid_argument("uLSIF regularization must be positive");
  if (!(radius > 0.0)) throw std::invalid_argument("radius must be positive");
  Matrix system = offline.transpose() * offline / static_cast<double>(offline.rows());
  system.diagonal().array() += lambda;
  const Vector rhs = batch.colwise().mean().transpose();

  UlsifFit out;
  out.raw_theta = system.ldlt().solve(rhs);
  if (!out.raw_theta.allFinite()) throw std::domain_error("uLSIF solve produced non-finite values");
  out.model = RatioModel{Link::Linear, project_ball(out.raw_theta, radius), radius};
  return out;
}

KliepFit kliep_fit(const Matrix& offline, const Matrix& batch, const KliepConfig& cfg,
                   double radius) {
  check_pair(offline, batch);
  if (cfg.steps < 1) throw std::invalid_argument("KLIEP needs at least one step");
  if (!(cfg.step_size > 0.0)) throw std::invalid_argument("KLIEP step size must be positive");
  if (!(radius > 0.0)) throw std::invalid_argument("radius must be positive");

  DivergenceSpec spec;
  spec.kind = DivergenceKind::KL;
  RatioModel m = RatioModel::zeros(Link::Exponential, static_cast<int>(offline.cols()), radius);

  KliepFit out;
  LossAndGrad cur = empirical_loss_and_grad(spec, m, offline, batch);
  out.losses.push_back(cur.loss);
  for (int step = 0; step < cfg.steps; ++step) {
    double eta = cfg.step_size;
    bool accepted = false;
    Vector cand;
    LossAndGrad next;
    for (int h = 0; h <= kMaxHalvings; ++h, eta *= 0.5) {
      cand = project_ball(m.theta - eta * cur.grad, radius);
      RatioModel trial{Link::Exponential, cand, radius};
      next = empirical_loss_and_grad(spec, trial, offline, batch);
      if (!std::isfinite(next.loss)) throw std::domain_error("KLIEP loss became non-finite");
      if (next.loss <= cur.loss + kArmijo * cur.grad.dot(cand - m.theta)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    const double moved = (cand - m.theta).norm();
    m.theta = std::move(cand);
    cur = std::move(next);
    out.losses.push_back(cur.loss);
    if (moved <= cfg.tol) break;
  }
  out.model = std::move(m);
  return out;
}

OnlineEnsemble olre_estimator(const Hyperparams& h, const DivergenceSpec& spec) {
  return OnlineEnsemble(h, spec, CoveringMode::SingleInterval);
}

}  // namespace covshift
