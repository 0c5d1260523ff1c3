#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace covshift {

using Vector = Eigen::VectorXd;
/// Sample matrix: one row per sample, one column per feature.
using Matrix = Eigen::MatrixXd;
/// Binary labels in {-1, +1}.
using Labels = Eigen::VectorXi;
using Rng = std::mt19937_64;

/// Raised when a file or text stream cannot be parsed. Carries the 1-based
/// line number of the offending row (0 when not line-specific).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Unvalidated hyperparameters as they arrive from a config file or flags.
/// Optional fields take their defaults during validation.
struct HyperparamInput {
  int dim = 0;
  std::optional<double> radius;  // S, defaults to dim / 2
  double feature_bound = 0.0;    // R
  std::optional<double> gamma_ons;  // defaults to 6 (1 + beta)
  double lambda_ons = 1.0;
  double ratio_cap = 100.0;
  int horizon = 0;
  int n_offline = 1000;
  int n_online = 1;
};

/// Validated hyperparameters. beta is always derived, never stored.
struct Hyperparams {
  int dim = 0;
  double radius = 0.0;
  double feature_bound = 0.0;
  double gamma_ons = 0.0;
  double lambda_ons = 1.0;
  double ratio_cap = 100.0;
  int horizon = 0;
  int n_offline = 0;
  int n_online = 0;

  double beta() const noexcept { return std::exp(radius * feature_bound); }

  bool operator==(const Hyperparams&) const = default;
};

Hyperparams validate_hyperparams(const HyperparamInput& input);

/// Re-validation of already validated values; returns an identical copy.
Hyperparams validate_hyperparams(const Hyperparams& h);

/// Labeled offline data S_0.
struct LabeledSet {
  Matrix x;
  Labels y;

  Eigen::Index size() const noexcept { return x.rows(); }
  Eigen::Index dim() const noexcept { return x.cols(); }
};

/// One round's unlabeled data S_t. Labels, when present, are for evaluation
/// only and must never be passed to a training routine.
struct UnlabeledBatch {
  int round = 0;
  Matrix xs;
  std::optional<Labels> hidden_labels;

  Eigen::Index size() const noexcept { return xs.rows(); }
};

/// Throws std::invalid_argument if any row of x has norm above bound.
void check_feature_bound(const Matrix& x, double bound, double slack = 1e-9);

/// Throws std::invalid_argument unless every label is -1 or +1.
void check_labels(const Labels& y);

struct SeedSpec {
  std::uint64_t master_seed = 0;
};

/// Independent, reproducible random stream for (seed, label).
/// Same inputs always produce the same sequence.
Rng derive_stream(const SeedSpec& seed, std::string_view label);

}  // namespace covshift
