#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "covshift/harness.hpp"

namespace covshift {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Numerical invariants.
CheckResult check_gradients(std::uint64_t seed, int draws = 100);
CheckResult check_projection_kkt(std::uint64_t seed, int pairs = 500);
CheckResult check_sherman_morrison(std::uint64_t seed, int updates = 100);
CheckResult check_meta_simplex(std::uint64_t seed, int horizon = 2048);
CheckResult check_covering_cardinality(int horizon = 4096);
CheckResult check_olre_equivalence(std::uint64_t seed, int horizon = 1000);

/// Cumulative regret of a lone ONS learner against the full-batch minimizer
/// of the observed losses, on a stationary synthetic stream.
struct RegretCurve {
  std::vector<int> checkpoints;
  std::vector<double> regret;
};
RegretCurve ons_regret_curve(std::uint64_t seed, const std::vector<int>& checkpoints,
                             const ExperimentConfig& base);

/// regret(long)/long <= 0.5 regret(short)/short in a majority of seeds.
CheckResult check_ons_regret(const std::vector<std::uint64_t>& seeds, int short_t = 500,
                             int long_t = 4000);

/// Solves min over ||theta|| <= S of sum_t L_hat_t(theta) for the first
/// `rounds` batches, where every round shares the same offline set.
Vector batch_minimizer(const DivergenceSpec& spec, const Matrix& offline,
                       const std::vector<Matrix>& batches, int rounds, double radius);

std::vector<CheckResult> run_props_suite(std::uint64_t seed);
std::vector<CheckResult> run_prop2_suite(std::uint64_t seed, int horizon = 1000);
std::vector<CheckResult> run_regret_suite(const std::vector<std::uint64_t>& seeds);

}  // namespace covshift
