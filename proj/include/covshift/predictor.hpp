#pragma once

#include "covshift/bregman.hpp"
#include "covshift/core.hpp"

namespace covshift {

/// Weight transform g(r) applied to estimated ratios before training.
///   identity: r
///   power:    r^gamma, gamma in (0, 1]
///   mixture:  r / (alpha + (1 - alpha) r), alpha in (0, 1]
struct FlattenSpec {
  enum class Kind { Identity, Power, Mixture };

  Kind kind = Kind::Identity;
  double param = 1.0;

  static FlattenSpec identity() { return {}; }
  static FlattenSpec power(double gamma);
  static FlattenSpec mixture(double alpha);

  void validate() const;
};

/// Parses "identity", "power:<gamma>" or "mixture:<alpha>".
FlattenSpec parse_flatten(std::string_view text);
std::string to_string(const FlattenSpec& f);

double flatten_weight(const FlattenSpec& f, double r);

struct PreparedWeights {
  Vector weights;
  int n_capped = 0;
  int n_floored = 0;

  int clip_count() const noexcept { return n_capped + n_floored; }
};

/// w_i = min(cap, g(max(0, r_hat(x_i)))) for every offline row.
PreparedWeights prepare_weights(const RatioModel& model, const FlattenSpec& f,
                                const Matrix& offline, double cap);

/// Linear classifier sign(w'x + b). The intercept is part of the
/// constrained parameter: ||(w, b)|| <= radius.
struct LinearClassifier {
  Vector w;
  double bias = 0.0;
  bool trained = false;
};

struct SolverConfig {
  int max_iter = 200;
  double tol = 1e-6;      // projected-gradient norm
  double radius = 0.0;    // D_w; 0 means 10 * dim
  bool fit_intercept = true;
};

/// (1/N) sum_n w_n log(1 + exp(-y_n (w'x_n + b))).
double iwerm_objective(const LabeledSet& data, const Vector& weights, const LinearClassifier& c);

/// Weighted logistic regression by damped Newton steps, falling back to
/// spectral projected gradient with a nonmonotone line search when a Newton
/// step would leave the ball. Weights are rescaled to mean one internally, so
/// any positive multiple of `weights` gives the same iterates.
LinearClassifier iwerm_train(const LabeledSet& data, const Vector& weights,
                             const LinearClassifier* warm, const SolverConfig& cfg);

/// Unit-weight training on the offline set.
LinearClassifier fix_train(const LabeledSet& data, const SolverConfig& cfg);

/// +1 when w'x + b >= 0, else -1.
int predict(const LinearClassifier& c, const Vector& x);
Labels predict_all(const LinearClassifier& c, const Matrix& xs);

/// Fraction of rows whose prediction differs from the label.
double error_rate(const LinearClassifier& c, const Matrix& xs, const Labels& ys);

}  // namespace covshift
