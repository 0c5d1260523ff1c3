#include "covshift/ons.hpp"

#include <cmath>
#include <stdexcept>

namespace covshift {

namespace {

constexpr double kNormTol = 1e-10;
constexpr int kMaxBisection = 200;

}  // namespace

OnsState ons_init(const Interval& interval, const Hyperparams& h) {
  if (interval.end < interval.start) throw std::invalid_argument("empty ONS interval");
  if (interval.start < 1) throw std::invalid_argument("ONS interval must start at round >= 1");
  OnsState s;
  s.theta = Vector::Zero(h.dim);
  s.curvature = h.lambda_ons * Matrix::Identity(h.dim, h.dim);
  s.curvature_inv = (1.0 / h.lambda_ons) * Matrix::Identity(h.dim, h.dim);
  s.interval = interval;
  s.gamma = h.gamma_ons;
  s.lambda = h.lambda_ons;
  s.radius = h.radius;
  return s;
}

void ons_step(OnsState& s, const Vector& grad) {
  if (grad.size() != s.theta.size()) throw std::invalid_argument("gradient dimension mismatch");
  if (!grad.allFinite()) throw std::domain_error("non-finite gradient in ONS step");

  s.curvature.noalias() += grad * grad.transpose();
  ++s.steps;
  if (s.steps % OnsState::kRefactorPeriod == 0) {
    s.curvature_inv = s.curvature.llt().solve(Matrix::Identity(s.theta.size(), s.theta.size()));
  } else {
    // Sherman-Morrison: (A + g g')^{-1} = A^{-1} - A^{-1} g g' A^{-1} / (1 + g' A^{-1} g)
    const Vector ag = s.curvature_inv * grad;
    const double denom = 1.0 + grad.dot(ag);
    s.curvature_inv.noalias() -= (ag * ag.transpose()) / denom;
  }

  const Vector moved = s.theta - s.gamma * (s.curvature_inv * grad);
  WeightedProjection p = proj_weighted_ball_kkt(s.curvature, moved, s.radius);
  if (p.active) ++s.active_projections;
  s.theta = std::move(p.theta);
}

WeightedProjection proj_weighted_ball_kkt(const Matrix& a, const Vector& point, double radius) {
  if (a.rows() != a.cols() || a.rows() != point.size()) {
    throw std::invalid_argument("projection dimension mismatch");
  }
  if (!a.allFinite() || !point.allFinite()) {
    throw std::domain_error("non-finite input to projection");
  }
  if (!(radius > 0.0)) throw std::invalid_argument("projection radius must be positive");

  // A = Q diag(ev) Q'. theta(nu) = (A + nu I)^{-1} A point has coordinates
  // ev_i c_i / (ev_i + nu) in the eigenbasis, c = Q' point.
  Eigen::SelfAdjointEigenSolver<Matrix> eig(a);
  if (eig.info() != Eigen::Success || !(eig.eigenvalues().minCoeff() > 0.0)) {
    throw std::domain_error("projection matrix is not positive definite");
  }
  if (point.norm() <= radius) return {point, 0.0, false};

  const Vector& ev = eig.eigenvalues();
  const Vector c = eig.eigenvectors().transpose() * point;
  const Vector scaled = ev.cwiseProduct(c);
  auto norm_at = [&](double nu) {
    return (scaled.array() / (ev.array() + nu)).matrix().norm();
  };

  // The norm decreases in nu; at nu = ||A point|| / radius it is inside.
  double lo = 0.0;
  double hi = scaled.norm() / radius;
  for (int it = 0; it < kMaxBisection; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double n = norm_at(mid);
    if (n > radius) {
      lo = mid;
    } else {
      hi = mid;
      if (radius - n <= kNormTol) break;
    }
  }
  // hi is always feasible; clean up the last ulp of overshoot.
  Vector theta = eig.eigenvectors() * (scaled.array() / (ev.array() + hi)).matrix();
  const double n = theta.norm();
  if (n > radius) theta *= radius / n;
  return {theta, hi, true};
}

Vector proj_weighted_ball(const Matrix& a, const Vector& point, double radius) {
  return proj_weighted_ball_kkt(a, point, radius).theta;
}

}  // namespace covshift
