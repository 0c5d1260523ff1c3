#include "covshift/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace covshift {

namespace {

std::int64_t interval_id(int level, std::int64_t index) {
  return (static_cast<std::int64_t>(level) << 40) + index;
}

int ceil_log2(int n) {
  int k = 0;
  while ((std::int64_t{1} << k) < n) ++k;
  return k;
}

}  // namespace

CoveringSnapshot covering_at(int t, int horizon, int min_len) {
  if (horizon < 1) throw std::invalid_argument("horizon must be positive");
  if (t < 1 || t > horizon) {
    throw std::out_of_range("round " + std::to_string(t) + " outside [1, " +
                            std::to_string(horizon) + "]");
  }
  if (min_len < 1) throw std::invalid_argument("min_len must be at least 1");
  CoveringSnapshot snap;
  for (int k = 0; (std::int64_t{1} << k) <= t; ++k) {
    const int len = 1 << k;
    if (len < min_len) continue;
    const std::int64_t i = t >> k;
    CoveringInterval c;
    c.level = k;
    c.start = static_cast<int>(i * len);
    c.end = c.start + len - 1;
    c.id = interval_id(k, i);
    snap.active.push_back(c);
    if (c.start == t) snap.starting.push_back(c);
    if (c.end == t) snap.retiring.push_back(c);
  }
  return snap;
}

std::int64_t covering_count(int horizon, int min_len) {
  std::int64_t total = 0;
  for (int k = 0; (std::int64_t{1} << k) <= horizon; ++k) {
    if ((1 << k) < min_len) continue;
    total += horizon >> k;
  }
  return total;
}

MetaEntry spawn_entry(const CoveringInterval& interval, std::int64_t total_intervals,
                      const Hyperparams& h) {
  if (total_intervals < 1) throw std::invalid_argument("covering must hold at least one interval");
  const double log_k = std::log(static_cast<double>(total_intervals));
  MetaEntry e;
  e.interval = interval;
  e.log_potential = -log_k;
  e.eps = std::max(kEpsFloor, std::min(0.5, log_k));
  e.sum_m_sq = 0.0;
  e.learner = ons_init(interval.span(), h);
  return e;
}

Combination combine(std::span<const MetaEntry> entries) {
  if (entries.empty()) throw std::invalid_argument("combine needs at least one active entry");
  std::vector<double> logw(entries.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    logw[i] = std::log(entries[i].eps) + entries[i].log_potential;
    top = std::max(top, logw[i]);
  }
  if (!std::isfinite(top)) throw std::domain_error("all meta weights vanished");
  Combination out;
  out.weights.resize(entries.size());
  double total = 0.0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    out.weights[i] = std::exp(logw[i] - top);
    total += out.weights[i];
  }
  out.theta = Vector::Zero(entries.front().learner.theta.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    out.weights[i] /= total;
    out.theta += out.weights[i] * entries[i].learner.theta;
  }
  return out;
}

void meta_update(std::span<MetaEntry> entries, const Vector& combined, const Vector& grad,
                 std::int64_t total_intervals, const Hyperparams& h) {
  if (!grad.allFinite()) throw std::domain_error("non-finite gradient in meta update");
  const double log_k = std::log(static_cast<double>(std::max<std::int64_t>(total_intervals, 1)));
  const double scale = h.radius * h.feature_bound;
  for (MetaEntry& e : entries) {
    if (!(e.eps > 0.0)) throw std::domain_error("meta learning rate must stay positive");
    const double raw = grad.dot(combined - e.learner.theta) / scale;
    const double m = std::clamp(raw, -1.0, 1.0);
    e.sum_m_sq += m * m;
    const double eps_new =
        std::max(kEpsFloor, std::min(0.5, std::sqrt(log_k / (1.0 + e.sum_m_sq))));
    e.log_potential = (eps_new / e.eps) * (e.log_potential + std::log1p(e.eps * m));
    e.eps = eps_new;
  }
}

OnlineEnsemble::OnlineEnsemble(const Hyperparams& h, const DivergenceSpec& spec,
                               CoveringMode mode, int min_len)
    : h_(validate_hyperparams(h)), spec_(spec), mode_(mode), min_len_(min_len) {
  if (min_len < 1) throw std::invalid_argument("min_len must be at least 1");
  total_intervals_ = mode_ == CoveringMode::SingleInterval ? 1 : covering_count(h_.horizon, min_len_);
  combined_ = Vector::Zero(h_.dim);
}

std::vector<CoveringInterval> OnlineEnsemble::active_intervals(int t) const {
  if (mode_ == CoveringMode::SingleInterval) {
    CoveringInterval whole;
    whole.start = 1;
    whole.end = h_.horizon;
    whole.level = ceil_log2(h_.horizon);
    whole.id = 0;
    return {whole};
  }
  return covering_at(t, h_.horizon, min_len_).active;
}

const Vector& OnlineEnsemble::begin_round(int t) {
  if (awaiting_batch_) throw std::logic_error("previous round was not finished");
  if (t != round_ + 1) {
    throw std::invalid_argument("rounds must be consecutive: expected " +
                                std::to_string(round_ + 1) + ", got " + std::to_string(t));
  }
  if (t > h_.horizon) throw std::out_of_range("round beyond configured horizon");
  round_ = t;

  std::erase_if(entries_, [t](const MetaEntry& e) { return e.interval.end < t; });
  for (const CoveringInterval& c : active_intervals(t)) {
    const bool present = std::any_of(entries_.begin(), entries_.end(),
                                     [&](const MetaEntry& e) { return e.interval.id == c.id; });
    if (present) continue;
    if (c.start != t) throw std::logic_error("covering interval activated after its start");
    entries_.push_back(spawn_entry(c, total_intervals_, h_));
  }
  std::sort(entries_.begin(), entries_.end(),
            [](const MetaEntry& a, const MetaEntry& b) { return a.interval.id < b.interval.id; });

  if (entries_.empty()) {
    // Only possible before the first interval of length >= min_len opens.
    weights_.clear();
    combined_ = Vector::Zero(h_.dim);
  } else {
    Combination c = combine(entries_);
    weights_ = std::move(c.weights);
    combined_ = std::move(c.theta);
  }
  awaiting_batch_ = true;
  return combined_;
}

RoundDiagnostics OnlineEnsemble::finish_round(const Matrix& offline, const UnlabeledBatch& batch) {
  if (!awaiting_batch_) throw std::logic_error("finish_round called before begin_round");
  if (batch.round != round_) {
    throw std::invalid_argument("batch for round " + std::to_string(batch.round) +
                                " delivered during round " + std::to_string(round_));
  }
  const Link link = required_link(spec_.kind);
  const LossAndGrad at_combined =
      empirical_loss_and_grad(spec_, RatioModel{link, combined_, h_.radius}, offline, batch.xs);

  RoundDiagnostics diag;
  diag.round = round_;
  diag.loss_hat = at_combined.loss;
  diag.combined = combined_;
  diag.weights.reserve(entries_.size());
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    diag.weights.push_back({entries_[i].interval.id, entries_[i].interval.length(), weights_[i]});
  }

  meta_update(entries_, combined_, at_combined.grad, total_intervals_, h_);
  for (MetaEntry& e : entries_) {
    const Vector g =
        empirical_grad(spec_, RatioModel{link, e.learner.theta, h_.radius}, offline, batch.xs);
    ons_step(e.learner, g);
  }
  awaiting_batch_ = false;
  return diag;
}

RoundDiagnostics OnlineEnsemble::round(const Matrix& offline, const UnlabeledBatch& batch) {
  begin_round(batch.round);
  return finish_round(offline, batch);
}

RatioModel OnlineEnsemble::model() const {
  return RatioModel{required_link(spec_.kind), combined_, h_.radius};
}

}  // namespace covshift
