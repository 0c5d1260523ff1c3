#pragma once

#include "covshift/core.hpp"

namespace covshift {

/// Closed round range [start, end], 1-based.
struct Interval {
  int start = 1;
  int end = 1;

  int length() const noexcept { return end - start + 1; }
  bool contains(int t) const noexcept { return start <= t && t <= end; }
  bool operator==(const Interval&) const = default;
};

/// Online Newton step learner restricted to the ball ||theta|| <= radius.
///
/// The curvature matrix is A = lambda I + sum g g' over gradients seen so far.
/// Its inverse is maintained by rank-one updates and rebuilt from A every
/// `kRefactorPeriod` steps.
struct OnsState {
  static constexpr int kRefactorPeriod = 512;

  Vector theta;
  Matrix curvature;
  Matrix curvature_inv;
  Interval interval;
  double gamma = 1.0;
  double lambda = 1.0;
  double radius = 1.0;
  long steps = 0;
  long active_projections = 0;
};

OnsState ons_init(const Interval& interval, const Hyperparams& h);

/// One update with the gradient observed at the learner's own theta.
/// A is updated with the gradient first, then theta steps with A^{-1}.
void ons_step(OnsState& state, const Vector& grad);

/// argmin over ||theta|| <= radius of (theta - point)' A (theta - point).
/// Returns `point` untouched when it already lies in the ball.
Vector proj_weighted_ball(const Matrix& a, const Vector& point, double radius);

/// Same as proj_weighted_ball, also reporting the multiplier nu >= 0 with
/// (A + nu I) theta = A point.
struct WeightedProjection {
  Vector theta;
  double multiplier = 0.0;
  bool active = false;
};
WeightedProjection proj_weighted_ball_kkt(const Matrix& a, const Vector& point, double radius);

}  // namespace covshift
