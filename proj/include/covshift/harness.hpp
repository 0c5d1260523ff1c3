#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "covshift/baselines.hpp"
#include "covshift/bregman.hpp"
#include "covshift/datagen.hpp"
#include "covshift/predictor.hpp"

namespace covshift {

enum class Method { Accous, Olre, Fix, Ulsif, Kliep };
inline constexpr std::array<Method, 5> kAllMethods = {Method::Accous, Method::Olre, Method::Fix,
                                                      Method::Ulsif, Method::Kliep};
inline constexpr std::size_t kMethodCount = kAllMethods.size();

std::string_view to_string(Method m);
Method parse_method(std::string_view name);

enum class DataSource { Synthetic, Csv };

/// Everything a run needs. Optional fields are filled in by resolve_config.
struct ExperimentConfig {
  DataSource source = DataSource::Synthetic;

  // Synthetic data
  ShiftPattern pattern = ShiftPattern::Lin;
  std::optional<int> period;
  std::optional<double> keep_prob;
  double alpha0 = 0.9;
  std::optional<double> constant_alpha;
  double cov_scale = 4.0;
  std::optional<double> clip_radius;

  // CSV data
  std::string offline_csv;
  std::string stream_csv;
  std::optional<double> rescale_to;

  // Learners. hyper.feature_bound <= 0 means "derive from the data".
  HyperparamInput hyper;
  DivergenceKind divergence = DivergenceKind::LR;
  double divergence_flatten = 1.0;
  int min_len = 4;
  FlattenSpec flatten;
  SolverConfig solver;
  double ulsif_lambda = 0.1;
  KliepConfig kliep;

  std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

  // Diagnostics (synthetic only). prop2_mc = 0 disables the oracle pass.
  int prop2_mc = 10000;
  std::optional<int> heatmap_window;

  std::string out_dir;

  bool has(Method m) const;
};

/// Learner gamma used when the config does not set one. The theoretical
/// 6 (1 + exp(S R)) is available by setting gamma_ons explicitly.
inline constexpr double kDefaultGammaOns = 1.0;

/// Defaults for the standard synthetic study: d = 5, T = 10000, N0 = 1000.
ExperimentConfig synthetic_defaults();

/// Fills defaults that depend on other fields (feature bound, clip radius,
/// period, keep probability, gamma, heatmap window) and validates.
/// CSV runs read the files to learn d, T and R.
ExperimentConfig resolve_config(const ExperimentConfig& cfg);

/// Interval lengths 2^k that can carry meta weight under the covering.
std::vector<int> weight_buckets(int horizon, int min_len);

struct RoundRecord {
  int t = 0;
  double alpha = 0.0;  // NaN for CSV runs
  std::array<std::optional<double>, kMethodCount> err;
  double loss_hat = 0.0;                 // accous L_hat_t at theta_hat_t (NaN without accous)
  std::optional<double> est_err;         // mean_S0 |r_hat - r*| for accous
  int clip_count = 0;                    // accous weights hitting cap or floor
  std::vector<double> bucket_mass;       // aligned with RunResult::buckets
  Vector theta_hat;                      // accous estimate used this round
  std::array<Vector, kMethodCount> classifier;  // (w, b) per method, training path only

  // Oracle terms for the cumulative-error inequality (synthetic, prop2_mc > 0).
  std::optional<double> oracle_abs_err;  // E_D0 |r_hat - r*|
  std::optional<double> oracle_gap;      // L_t(r_hat) - L_t(r*)
};

struct Prop2Check {
  double lhs = 0.0;
  double rhs = 0.0;
  double mu = 0.0;
  bool holds = false;
};

/// lhs = sum_t E_D0 |r_hat_t - r*_t|, rhs = sqrt((2T/mu) max(0, sum_t gap_t)).
/// mu defaults to spec.strong_convexity; a larger value is rejected.
Prop2Check check_prop2(const std::vector<RoundRecord>& records, const DivergenceSpec& spec,
                       std::optional<double> mu = std::nullopt);

struct SeedSummary {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::array<std::optional<double>, kMethodCount> mean_err;
  std::optional<double> cumulative_est_err;
  std::optional<Prop2Check> prop2;
  std::optional<double> dynamic_regret;  // sum_t L_t(r_hat_t) - L_t(r*_t)
  std::optional<VariationEstimate> variation;
  std::optional<double> max_true_ratio;  // largest r* seen on the oracle sample
  long rejected = 0;
  long clip_total = 0;
  long degenerate_weights = 0;  // method-rounds where every weight was zero
  double wall_time = 0.0;
};

struct SeedRun {
  std::vector<RoundRecord> records;
  SeedSummary summary;
};

struct MethodAggregate {
  double mean = 0.0;
  double std = 0.0;  // sample std over seeds (0 for a single seed)
  int seeds = 0;
};

struct RunResult {
  ExperimentConfig config;  // resolved
  Hyperparams hyper;
  std::vector<int> buckets;
  std::vector<SeedRun> seeds;
  std::array<std::optional<MethodAggregate>, kMethodCount> aggregate;
  double wall_time = 0.0;

  bool all_ok() const;
};

struct RunOptions {
  bool blind = false;  // drop stream labels before anything else sees them
};

RunResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// One row per window of `window` rounds: mean bucket mass over the rounds
/// in the window that had at least one active learner.
struct HeatmapRow {
  int start = 0;
  int end = 0;
  std::vector<double> mass;
};
std::vector<HeatmapRow> weight_heatmap(const std::vector<RoundRecord>& records, int window);

/// Time-averaged mass per bucket over every round with an active learner.
std::vector<double> average_bucket_mass(const std::vector<RoundRecord>& records);

/// Writes rounds_<seed>.csv per seed, heatmap.csv and summary.json.
void emit_outputs(const RunResult& result, const std::filesystem::path& dir);

/// Exact text of rounds_<seed>.csv for one seed.
std::string rounds_csv(const RunResult& result, const SeedRun& run);

/// summary.json document; `include_timing` false drops wall-time fields.
std::string summary_json(const RunResult& result, bool include_timing = true);

std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const std::string& text);

/// Applies one key=value setting (the same keys as the config file).
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Flat key=value file, '#' starts a comment.
std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path);

const char* build_id();

}  // namespace covshift
