#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "covshift/bregman.hpp"
#include "covshift/ons.hpp"

namespace covshift {

/// Member of the geometric covering: [i 2^k, (i+1) 2^k - 1] with i >= 1.
/// Intervals near the horizon keep their nominal length; the learner simply
/// stops receiving rounds after T.
struct CoveringInterval {
  int start = 1;
  int end = 1;
  int level = 0;
  std::int64_t id = 0;

  int length() const noexcept { return end - start + 1; }
  Interval span() const noexcept { return {start, end}; }
  bool operator==(const CoveringInterval&) const = default;
};

struct CoveringSnapshot {
  std::vector<CoveringInterval> starting;
  std::vector<CoveringInterval> active;
  std::vector<CoveringInterval> retiring;
};

/// Intervals of every level with length >= min_len that contain round t,
/// ordered by level.
CoveringSnapshot covering_at(int t, int horizon, int min_len);

/// Number of covering intervals with length >= min_len and start <= horizon.
std::int64_t covering_count(int horizon, int min_len);

/// Per-learner Adapt-ML-Prod bookkeeping. The potential v is kept as log v.
struct MetaEntry {
  CoveringInterval interval;
  double log_potential = 0.0;
  double eps = 0.5;
  double sum_m_sq = 0.0;
  OnsState learner;

  double potential() const { return std::exp(log_potential); }
};

inline constexpr double kEpsFloor = 1e-8;

/// Fresh entry with v = 1/K, eps = min{1/2, ln K} (floored), no history.
MetaEntry spawn_entry(const CoveringInterval& interval, std::int64_t total_intervals,
                      const Hyperparams& h);

struct Combination {
  std::vector<double> weights;
  Vector theta;
};

/// p_i proportional to eps_i v_i, theta_hat = sum p_i theta_i.
Combination combine(std::span<const MetaEntry> entries);

/// Updates every entry with m_i = <grad, theta_hat - theta_i> / (S R), clamped
/// to [-1, 1].
void meta_update(std::span<MetaEntry> entries, const Vector& combined, const Vector& grad,
                 std::int64_t total_intervals, const Hyperparams& h);

enum class CoveringMode {
  Geometric,       // dyadic covering, the adaptive estimator
  SingleInterval,  // one learner over [1, T]
};

struct EntryWeight {
  std::int64_t id = 0;
  int length = 0;
  double weight = 0.0;
};

struct RoundDiagnostics {
  int round = 0;
  double loss_hat = 0.0;  // L_hat_t at the combined estimate
  Vector combined;
  std::vector<EntryWeight> weights;  // id-sorted
};

/// Two-layer online density-ratio estimator: ONS base learners on covering
/// intervals combined by an Adapt-ML-Prod meta learner.
///
/// Each round is split in two so callers can use the estimate before the
/// round's data is observed:
///   begin_round(t)        spawn/retire learners and return theta_hat_t
///   finish_round(...)     observe S_t, update meta weights and learners
class OnlineEnsemble {
 public:
  OnlineEnsemble(const Hyperparams& h, const DivergenceSpec& spec,
                 CoveringMode mode = CoveringMode::Geometric, int min_len = 4);

  const Vector& begin_round(int t);
  RoundDiagnostics finish_round(const Matrix& offline, const UnlabeledBatch& batch);

  /// begin_round followed by finish_round for batch.round.
  RoundDiagnostics round(const Matrix& offline, const UnlabeledBatch& batch);

  RatioModel model() const;
  const Vector& combined() const noexcept { return combined_; }
  int current_round() const noexcept { return round_; }
  std::int64_t total_intervals() const noexcept { return total_intervals_; }
  std::span<const MetaEntry> entries() const noexcept { return entries_; }
  const std::vector<double>& weights() const noexcept { return weights_; }
  const Hyperparams& hyperparams() const noexcept { return h_; }

 private:
  std::vector<CoveringInterval> active_intervals(int t) const;

  Hyperparams h_;
  DivergenceSpec spec_;
  CoveringMode mode_;
  int min_len_;
  std::int64_t total_intervals_;
  int round_ = 0;
  bool awaiting_batch_ = false;
  std::vector<MetaEntry> entries_;
  std::vector<double> weights_;
  Vector combined_;
};

}  // namespace covshift
