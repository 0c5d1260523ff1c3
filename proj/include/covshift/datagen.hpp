#pragma once

#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "covshift/core.hpp"

namespace covshift {

/// Two Gaussian components N(mean1, cI) and N(mean2, cI). Samples outside
/// the ball of radius clip_radius are rejected and redrawn.
struct GaussianMixtureSpec {
  Vector mean1;
  Vector mean2;
  double cov_scale = 4.0;
  double clip_radius = 0.0;

  int dim() const noexcept { return static_cast<int>(mean1.size()); }

  /// mean1 = +1, mean2 = -1 in R^d, clip radius from default_clip_radius.
  static GaussianMixtureSpec standard(int dim, double cov_scale = 4.0);
  void validate() const;
};

/// max(||mean1||, ||mean2||) + 6 sqrt(c) sqrt(d).
double default_clip_radius(const Vector& mean1, const Vector& mean2, double cov_scale);

enum class ShiftPattern { Lin, Squ, Sin, Ber, Constant };

std::string_view to_string(ShiftPattern p);
ShiftPattern parse_shift_pattern(std::string_view name);

/// Mixture coefficient alpha_t (weight of component 2) for t = 1..T.
struct ShiftSchedule {
  ShiftPattern pattern = ShiftPattern::Lin;
  int horizon = 1;
  int period = 1;           // M for Squ/Sin
  double keep_prob = 0.0;   // Ber: probability alpha_t = alpha_{t-1}
  double alpha0 = 0.9;      // offline mixture coefficient
  double constant = 0.9;    // Constant pattern value
  std::vector<double> path; // Ber only, materialized at construction
};

struct ScheduleOptions {
  std::optional<int> period;         // default ceil(sqrt(T))
  std::optional<double> keep_prob;   // default 1 - 1/sqrt(T)
  double alpha0 = 0.9;
  std::optional<double> constant;    // default alpha0
};

/// Builds and validates a schedule; the Ber path is drawn here from the
/// seed's "ber-schedule" stream.
ShiftSchedule make_schedule(ShiftPattern pattern, int horizon, const ScheduleOptions& opts,
                            const SeedSpec& seed);

double alpha_at(const ShiftSchedule& s, int t);

struct SampleStats {
  long rejected = 0;
};

/// n labeled points from (1 - alpha) N(mean1, cI) + alpha N(mean2, cI),
/// label +1 iff ||x|| <= d.
LabeledSet sample_batch(const GaussianMixtureSpec& g, double alpha, int n, Rng& rng,
                        SampleStats* stats = nullptr);

/// Draws from a single component (1 or 2), no labels.
Matrix sample_component(const GaussianMixtureSpec& g, int component, int n, Rng& rng);

/// log(phi2(x) / phi1(x)).
double log_component_quotient(const GaussianMixtureSpec& g, const Vector& x);

/// D_t(x) / D_0(x) for mixture coefficients alpha_t and alpha0.
double true_ratio(const GaussianMixtureSpec& g, double alpha_t, double alpha0, const Vector& x);

/// Same ratio from a precomputed log(phi2/phi1).
double true_ratio_from_quotient(double log_q, double alpha_t, double alpha0);

struct VariationEstimate {
  double alpha_path = 0.0;  // sum_{t>=2} |alpha_t - alpha_{t-1}|
  double l1_factor = 0.0;   // ||phi2 - phi1||_1, Monte Carlo
  double value = 0.0;       // product of the two
};

/// Total variation sum_t ||D_t - D_{t-1}||_1 of the schedule.
VariationEstimate variation_V(const ShiftSchedule& s, const GaussianMixtureSpec& g, int n_mc,
                              Rng& rng);

/// Closed form ||phi2 - phi1||_1 = 2 (2 Phi(delta / (2 sqrt c)) - 1).
double component_l1_distance(const GaussianMixtureSpec& g);

struct CsvStream {
  LabeledSet offline;
  std::vector<UnlabeledBatch> batches;
  double scale = 1.0;          // factor applied to every feature
  double feature_bound = 0.0;  // max row norm after scaling
};

/// Reads an offline file (header x1..xd,y) and a stream file (header
/// round,x1..xd,y). Rounds must start at 1 and be contiguous. When
/// rescale_to is set, all features are multiplied so the largest row norm
/// over both files equals it.
CsvStream load_csv_stream(const std::filesystem::path& offline_path,
                          const std::filesystem::path& stream_path,
                          std::optional<double> rescale_to = std::nullopt);

}  // namespace covshift
