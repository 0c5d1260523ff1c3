#include "covshift/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#ifndef COVSHIFT_BUILD_ID
#define COVSHIFT_BUILD_ID "unknown"
#endif

namespace covshift {

using Json = nlohmann::ordered_json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::size_t index_of(Method m) { return static_cast<std::size_t>(m); }

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) {
    throw std::invalid_argument("setting '" + key + "' expects a number, got '" + value + "'");
  }
  return v;
}

long long parse_integer(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) {
    throw std::invalid_argument("setting '" + key + "' expects an integer, got '" + value + "'");
  }
  return v;
}

int parse_int(const std::string& key, const std::string& value) {
  const long long v = parse_integer(key, value);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
    throw std::invalid_argument("setting '" + key + "' is out of range");
  }
  return static_cast<int>(v);
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "yes" || value == "on") return true;
  if (value == "0" || value == "false" || value == "no" || value == "off") return false;
  throw std::invalid_argument("setting '" + key + "' expects true/false, got '" + value + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  out.erase(std::remove(out.begin(), out.end(), std::string()), out.end());
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

Vector pack_classifier(const LinearClassifier& c) {
  Vector z(c.w.size() + 1);
  z.head(c.w.size()) = c.w;
  z[c.w.size()] = c.bias;
  return z;
}

int bucket_index(const std::vector<int>& buckets, int length) {
  const auto it = std::find(buckets.begin(), buckets.end(), length);
  if (it == buckets.end()) throw std::logic_error("interval length outside the bucket table");
  return static_cast<int>(it - buckets.begin());
}

// Monte Carlo oracle for the synthetic mixture: fixed samples from D0 and
// from each component, with log(phi2/phi1) precomputed so r*_t costs O(1)
// per point for any alpha_t.
class MixtureOracle {
 public:
  MixtureOracle(const GaussianMixtureSpec& g, double alpha0, int n, Rng& rng, DivergenceKind kind)
      : alpha0_(alpha0), kind_(kind) {
    d0_ = sample_batch(g, alpha0, n, rng).x;
    p1_ = sample_component(g, 1, n, rng);
    p2_ = sample_component(g, 2, n, rng);
    q_d0_ = log_quotients(g, d0_);
    q_p1_ = log_quotients(g, p1_);
    q_p2_ = log_quotients(g, p2_);
  }

  // E_D0 |r_hat - r*_t| on the fresh D0 sample.
  double abs_error(const RatioModel& m, double alpha_t) const {
    const Vector r = ratio_eval_all(m, d0_);
    double total = 0.0;
    for (Eigen::Index i = 0; i < r.size(); ++i) {
      total += std::abs(r[i] - true_ratio_from_quotient(q_d0_[i], alpha_t, alpha0_));
    }
    return total / static_cast<double>(r.size());
  }

  double loss_of_model(const RatioModel& m, double alpha_t) const {
    return mixture_loss(ratio_eval_all(m, p1_), ratio_eval_all(m, p2_), alpha_t);
  }

  double loss_of_truth(double alpha_t) {
    auto it = truth_cache_.find(alpha_t);
    if (it != truth_cache_.end()) return it->second;
    const double v = mixture_loss(true_ratios(q_p1_, alpha_t), true_ratios(q_p2_, alpha_t), alpha_t);
    const Vector on_d0 = true_ratios(q_d0_, alpha_t);
    max_ratio_ = std::max(max_ratio_, on_d0.maxCoeff());
    truth_cache_.emplace(alpha_t, v);
    return v;
  }

  double max_ratio() const { return max_ratio_; }

 private:
  static Vector log_quotients(const GaussianMixtureSpec& g, const Matrix& x) {
    Vector q(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) q[i] = log_component_quotient(g, x.row(i).transpose());
    return q;
  }

  Vector true_ratios(const Vector& q, double alpha_t) const {
    Vector r(q.size());
    for (Eigen::Index i = 0; i < q.size(); ++i) r[i] = true_ratio_from_quotient(q[i], alpha_t, alpha0_);
    return r;
  }

  // L_t(r) = E_D0[base(r)] - E_Dt[target(r)], both expectations split over
  // the two components.
  double mixture_loss(const Vector& r1, const Vector& r2, double alpha_t) const {
    double b1 = 0.0, b2 = 0.0, t1 = 0.0, t2 = 0.0;
    for (Eigen::Index i = 0; i < r1.size(); ++i) {
      b1 += matching_base_term(kind_, r1[i]);
      t1 += matching_target_term(kind_, r1[i]);
    }
    for (Eigen::Index i = 0; i < r2.size(); ++i) {
      b2 += matching_base_term(kind_, r2[i]);
      t2 += matching_target_term(kind_, r2[i]);
    }
    const double n1 = static_cast<double>(r1.size());
    const double n2 = static_cast<double>(r2.size());
    const double base = (1.0 - alpha0_) * b1 / n1 + alpha0_ * b2 / n2;
    const double target = (1.0 - alpha_t) * t1 / n1 + alpha_t * t2 / n2;
    return base - target;
  }

  double alpha0_;
  DivergenceKind kind_;
  Matrix d0_, p1_, p2_;
  Vector q_d0_, q_p1_, q_p2_;
  std::map<double, double> truth_cache_;
  double max_ratio_ = 0.0;
};

struct SharedData {
  std::optional<CsvStream> csv;
};

Vector training_weights(const PreparedWeights& pw, long& degenerate) {
  if (pw.weights.sum() > 0.0) return pw.weights;
  // Every ratio floored to zero: fall back to plain ERM for this round.
  ++degenerate;
  return Vector::Ones(pw.weights.size());
}

SeedRun run_seed(const ExperimentConfig& cfg, const Hyperparams& h, const DivergenceSpec& spec,
                 const std::vector<int>& buckets, const SharedData& shared, std::uint64_t seed,
                 const RunOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  SeedRun run;
  run.summary.seed = seed;
  const SeedSpec ss{seed};
  const bool synthetic = cfg.source == DataSource::Synthetic;

  // Data source.
  LabeledSet offline;
  std::optional<GaussianMixtureSpec> mixture;
  std::optional<ShiftSchedule> schedule;
  Rng stream_rng = derive_stream(ss, "stream");
  SampleStats stats;
  if (synthetic) {
    GaussianMixtureSpec g = GaussianMixtureSpec::standard(h.dim, cfg.cov_scale);
    g.clip_radius = *cfg.clip_radius;
    g.validate();
    mixture = g;
    ScheduleOptions so;
    so.period = cfg.period;
    so.keep_prob = cfg.keep_prob;
    so.alpha0 = cfg.alpha0;
    so.constant = cfg.constant_alpha;
    schedule = make_schedule(cfg.pattern, h.horizon, so, ss);
    Rng off_rng = derive_stream(ss, "offline");
    offline = sample_batch(g, cfg.alpha0, h.n_offline, off_rng, &stats);
  } else {
    offline = shared.csv->offline;
  }
  check_feature_bound(offline.x, h.feature_bound);
  check_labels(offline.y);

  std::unique_ptr<MixtureOracle> oracle;
  Vector offline_log_q;
  if (synthetic) {
    if (cfg.prop2_mc > 0) {
      Rng orng = derive_stream(ss, "oracle");
      oracle = std::make_unique<MixtureOracle>(*mixture, cfg.alpha0, cfg.prop2_mc, orng, spec.kind);
      Rng vrng = derive_stream(ss, "variation");
      run.summary.variation = variation_V(*schedule, *mixture, cfg.prop2_mc, vrng);
    }
    offline_log_q.resize(offline.size());
    for (Eigen::Index i = 0; i < offline.size(); ++i) {
      offline_log_q[i] = log_component_quotient(*mixture, offline.x.row(i).transpose());
    }
  }

  // Methods.
  const LinearClassifier fix = fix_train(offline, cfg.solver);
  std::array<LinearClassifier, kMethodCount> clf;
  clf.fill(fix);
  std::unique_ptr<OnlineEnsemble> accous;
  std::unique_ptr<OnlineEnsemble> olre;
  if (cfg.has(Method::Accous)) {
    accous = std::make_unique<OnlineEnsemble>(h, spec, CoveringMode::Geometric, cfg.min_len);
  }
  if (cfg.has(Method::Olre)) olre = std::make_unique<OnlineEnsemble>(olre_estimator(h, spec));

  long degenerate = 0;
  double cum_est = 0.0;
  double dyn_regret = 0.0;
  std::array<double, kMethodCount> err_sum{};
  std::array<int, kMethodCount> err_n{};
  run.records.reserve(static_cast<std::size_t>(h.horizon));

  for (int t = 1; t <= h.horizon; ++t) {
    RoundRecord rec;
    rec.t = t;
    rec.alpha = kNaN;
    rec.loss_hat = kNaN;

    // Draw S_t. Labels are split off immediately; training code only ever
    // sees `features`.
    UnlabeledBatch features;
    std::optional<Labels> labels;
    features.round = t;
    if (synthetic) {
      rec.alpha = alpha_at(*schedule, t);
      LabeledSet drawn = sample_batch(*mixture, rec.alpha, h.n_online, stream_rng, &stats);
      features.xs = std::move(drawn.x);
      labels = std::move(drawn.y);
    } else {
      const UnlabeledBatch& b = shared.csv->batches[static_cast<std::size_t>(t - 1)];
      features.xs = b.xs;
      labels = b.hidden_labels;
    }
    if (opts.blind) labels.reset();
    check_feature_bound(features.xs, h.feature_bound);

    auto fit_weighted = [&](Method m, const RatioModel& model, PreparedWeights* keep) {
      PreparedWeights pw = prepare_weights(model, cfg.flatten, offline.x, h.ratio_cap);
      const Vector w = training_weights(pw, degenerate);
      LinearClassifier& c = clf[index_of(m)];
      c = iwerm_train(offline, w, &c, cfg.solver);
      if (keep) *keep = std::move(pw);
    };

    rec.bucket_mass.assign(buckets.size(), 0.0);
    std::optional<RatioModel> accous_model;
    if (accous) {
      accous->begin_round(t);
      accous_model = accous->model();
      rec.theta_hat = accous_model->theta;
      PreparedWeights pw;
      fit_weighted(Method::Accous, *accous_model, &pw);
      rec.clip_count = pw.clip_count();
      const auto entries = accous->entries();
      const auto& p = accous->weights();
      for (std::size_t i = 0; i < entries.size(); ++i) {
        rec.bucket_mass[static_cast<std::size_t>(bucket_index(buckets, entries[i].interval.length()))] += p[i];
      }
    }
    if (olre) {
      olre->begin_round(t);
      fit_weighted(Method::Olre, olre->model(), nullptr);
    }
    if (cfg.has(Method::Ulsif)) {
      const UlsifFit fit = ulsif_fit(offline.x, features.xs, cfg.ulsif_lambda, h.radius);
      fit_weighted(Method::Ulsif, fit.model, nullptr);
    }
    if (cfg.has(Method::Kliep)) {
      const KliepFit fit = kliep_fit(offline.x, features.xs, cfg.kliep, h.radius);
      fit_weighted(Method::Kliep, fit.model, nullptr);
    }

    // Evaluation on S_t with its labels; nothing below feeds back into training.
    for (Method m : cfg.methods) {
      const std::size_t k = index_of(m);
      rec.classifier[k] = pack_classifier(clf[k]);
      if (labels) {
        rec.err[k] = error_rate(clf[k], features.xs, *labels);
        err_sum[k] += *rec.err[k];
        ++err_n[k];
      }
    }
    if (accous_model && synthetic) {
      const double a = rec.alpha;
      const double a0 = cfg.alpha0;
      const RatioModel& m = *accous_model;
      const Vector r = ratio_eval_all(m, offline.x);
      double total = 0.0;
      for (Eigen::Index i = 0; i < r.size(); ++i) {
        total += std::abs(r[i] - true_ratio_from_quotient(offline_log_q[i], a, a0));
      }
      rec.est_err = total / static_cast<double>(r.size());
      cum_est += *rec.est_err;
      if (oracle) {
        rec.oracle_abs_err = oracle->abs_error(m, a);
        rec.oracle_gap = oracle->loss_of_model(m, a) - oracle->loss_of_truth(a);
        dyn_regret += *rec.oracle_gap;
      }
    }

    // The online estimators consume S_t only now.
    if (accous) rec.loss_hat = accous->finish_round(offline.x, features).loss_hat;
    if (olre) olre->finish_round(offline.x, features);

    run.summary.clip_total += rec.clip_count;
    run.records.push_back(std::move(rec));
  }

  for (Method m : cfg.methods) {
    const std::size_t k = index_of(m);
    if (err_n[k] > 0) run.summary.mean_err[k] = err_sum[k] / err_n[k];
  }
  if (accous && synthetic) {
    run.summary.cumulative_est_err = cum_est;
    if (oracle) {
      run.summary.prop2 = check_prop2(run.records, spec);
      run.summary.dynamic_regret = dyn_regret;
      run.summary.max_true_ratio = oracle->max_ratio();
    }
  }
  run.summary.rejected = stats.rejected;
  run.summary.ok = true;
  run.summary.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  run.summary.degenerate_weights = degenerate;
  return run;
}

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::Accous: return "accous";
    case Method::Olre: return "olre";
    case Method::Fix: return "fix";
    case Method::Ulsif: return "ulsif";
    case Method::Kliep: return "kliep";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  for (Method m : kAllMethods) {
    if (to_string(m) == name) return m;
  }
  throw std::invalid_argument("unknown method: " + std::string(name));
}

bool ExperimentConfig::has(Method m) const {
  return std::find(methods.begin(), methods.end(), m) != methods.end();
}

ExperimentConfig synthetic_defaults() {
  ExperimentConfig cfg;
  cfg.hyper.dim = 5;
  cfg.hyper.horizon = 10000;
  cfg.hyper.n_offline = 1000;
  cfg.hyper.n_online = 1;
  return cfg;
}

std::vector<int> weight_buckets(int horizon, int min_len) {
  std::vector<int> out;
  for (int k = 0; (std::int64_t{1} << k) <= horizon; ++k) {
    if ((1 << k) >= min_len) out.push_back(1 << k);
  }
  return out;
}

ExperimentConfig resolve_config(const ExperimentConfig& in) {
  ExperimentConfig cfg = in;
  if (cfg.methods.empty()) throw std::invalid_argument("method list is empty");
  {
    std::set<Method> seen(cfg.methods.begin(), cfg.methods.end());
    if (seen.size() != cfg.methods.size()) throw std::invalid_argument("duplicate method in list");
  }
  if (cfg.seeds.empty()) throw std::invalid_argument("seed list is empty");
  {
    std::set<std::uint64_t> seen(cfg.seeds.begin(), cfg.seeds.end());
    if (seen.size() != cfg.seeds.size()) throw std::invalid_argument("seeds must be distinct");
  }
  if (cfg.min_len < 1) throw std::invalid_argument("min_len must be at least 1");
  if (!(cfg.ulsif_lambda > 0.0)) throw std::invalid_argument("ulsif_lambda must be positive");
  if (cfg.kliep.steps < 1) throw std::invalid_argument("kliep_steps must be at least 1");
  if (cfg.prop2_mc < 0) throw std::invalid_argument("prop2_mc must be nonnegative");
  cfg.flatten.validate();

  if (cfg.source == DataSource::Synthetic) {
    if (cfg.hyper.dim < 1) throw std::invalid_argument("dim must be positive");
    if (!(cfg.cov_scale > 0.0)) throw std::invalid_argument("cov_scale must be positive");
    if (!cfg.clip_radius) {
      const GaussianMixtureSpec g = GaussianMixtureSpec::standard(cfg.hyper.dim, cfg.cov_scale);
      cfg.clip_radius = g.clip_radius;
    }
    if (!(*cfg.clip_radius > 0.0)) throw std::invalid_argument("clip_radius must be positive");
    if (!(cfg.hyper.feature_bound > 0.0)) cfg.hyper.feature_bound = *cfg.clip_radius;
    if (cfg.hyper.feature_bound < *cfg.clip_radius) {
      throw std::invalid_argument("feature_bound is below the sampling clip radius");
    }
    if (cfg.hyper.horizon < 1) throw std::invalid_argument("horizon T must be positive");
    ScheduleOptions so;
    so.period = cfg.period;
    so.keep_prob = cfg.keep_prob;
    so.alpha0 = cfg.alpha0;
    so.constant = cfg.constant_alpha;
    const ShiftSchedule s = make_schedule(ShiftPattern::Lin, cfg.hyper.horizon, so, SeedSpec{0});
    cfg.period = s.period;
    cfg.keep_prob = s.keep_prob;
    cfg.constant_alpha = s.constant;
  } else {
    if (cfg.offline_csv.empty() || cfg.stream_csv.empty()) {
      throw std::invalid_argument("CSV runs need both offline and stream files");
    }
    const CsvStream data = load_csv_stream(cfg.offline_csv, cfg.stream_csv, cfg.rescale_to);
    cfg.hyper.dim = static_cast<int>(data.offline.dim());
    cfg.hyper.horizon = static_cast<int>(data.batches.size());
    cfg.hyper.n_offline = static_cast<int>(data.offline.size());
    cfg.hyper.n_online = static_cast<int>(data.batches.front().size());
    if (!(cfg.hyper.feature_bound > 0.0)) cfg.hyper.feature_bound = data.feature_bound;
    cfg.prop2_mc = 0;
  }
  if (!cfg.hyper.gamma_ons) cfg.hyper.gamma_ons = kDefaultGammaOns;
  const Hyperparams h = validate_hyperparams(cfg.hyper);
  cfg.hyper.radius = h.radius;
  DivergenceSpec::make(cfg.divergence, h.beta(), cfg.divergence_flatten);
  if (cfg.solver.radius <= 0.0) cfg.solver.radius = 10.0 * h.dim;
  if (!cfg.heatmap_window) {
    cfg.heatmap_window = cfg.source == DataSource::Synthetic
                             ? *cfg.period
                             : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(h.horizon))));
  }
  if (*cfg.heatmap_window < 1) throw std::invalid_argument("heatmap_window must be positive");
  return cfg;
}

Prop2Check check_prop2(const std::vector<RoundRecord>& records, const DivergenceSpec& spec,
                       std::optional<double> mu) {
  const double mu_spec = spec.strong_convexity;
  const double m = mu.value_or(mu_spec);
  if (mu && *mu > mu_spec) {
    throw std::invalid_argument("mu must not exceed the divergence's strong convexity constant");
  }
  if (!(m > 0.0)) throw std::invalid_argument("mu must be positive");
  Prop2Check out;
  out.mu = m;
  double gap = 0.0;
  for (const RoundRecord& r : records) {
    if (!r.oracle_abs_err || !r.oracle_gap) {
      throw std::invalid_argument("round " + std::to_string(r.t) +
                                  " has no oracle terms (synthetic run with prop2_mc > 0 needed)");
    }
    out.lhs += *r.oracle_abs_err;
    gap += *r.oracle_gap;
  }
  const double T = static_cast<double>(records.size());
  out.rhs = std::sqrt(2.0 * T / m * std::max(0.0, gap));
  out.holds = out.lhs <= 1.1 * out.rhs;
  return out;
}

RunResult run_experiment(const ExperimentConfig& cfg_in, const RunOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  RunResult result;
  result.config = resolve_config(cfg_in);
  const ExperimentConfig& cfg = result.config;
  result.hyper = validate_hyperparams(cfg.hyper);
  const DivergenceSpec spec =
      DivergenceSpec::make(cfg.divergence, result.hyper.beta(), cfg.divergence_flatten);
  result.buckets = cfg.has(Method::Accous) ? weight_buckets(result.hyper.horizon, cfg.min_len)
                                           : std::vector<int>{};

  SharedData shared;
  if (cfg.source == DataSource::Csv) {
    shared.csv = load_csv_stream(cfg.offline_csv, cfg.stream_csv, cfg.rescale_to);
  }

  for (std::uint64_t seed : cfg.seeds) {
    try {
      result.seeds.push_back(run_seed(cfg, result.hyper, spec, result.buckets, shared, seed, opts));
    } catch (const std::exception& e) {
      SeedRun failed;
      failed.summary.seed = seed;
      failed.summary.ok = false;
      failed.summary.error = e.what();
      result.seeds.push_back(std::move(failed));
    }
  }

  for (Method m : cfg.methods) {
    const std::size_t k = index_of(m);
    std::vector<double> means;
    for (const SeedRun& s : result.seeds) {
      if (s.summary.ok && s.summary.mean_err[k]) means.push_back(*s.summary.mean_err[k]);
    }
    if (means.empty()) continue;
    MethodAggregate agg;
    agg.seeds = static_cast<int>(means.size());
    for (double v : means) agg.mean += v;
    agg.mean /= static_cast<double>(means.size());
    double ss = 0.0;
    for (double v : means) ss += (v - agg.mean) * (v - agg.mean);
    agg.std = means.size() > 1 ? std::sqrt(ss / static_cast<double>(means.size() - 1)) : 0.0;
    result.aggregate[k] = agg;
  }
  result.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

bool RunResult::all_ok() const {
  return std::all_of(seeds.begin(), seeds.end(), [](const SeedRun& s) { return s.summary.ok; });
}

std::vector<HeatmapRow> weight_heatmap(const std::vector<RoundRecord>& records, int window) {
  if (window < 1) throw std::invalid_argument("heatmap window must be positive");
  std::vector<HeatmapRow> rows;
  if (records.empty()) return rows;
  const std::size_t nb = records.front().bucket_mass.size();
  for (std::size_t lo = 0; lo < records.size(); lo += static_cast<std::size_t>(window)) {
    const std::size_t hi = std::min(records.size(), lo + static_cast<std::size_t>(window));
    HeatmapRow row;
    row.start = records[lo].t;
    row.end = records[hi - 1].t;
    row.mass.assign(nb, 0.0);
    int counted = 0;
    for (std::size_t i = lo; i < hi; ++i) {
      const auto& mass = records[i].bucket_mass;
      double total = 0.0;
      for (double v : mass) total += v;
      if (!(total > 0.0)) continue;
      for (std::size_t b = 0; b < nb; ++b) row.mass[b] += mass[b];
      ++counted;
    }
    if (counted > 0) {
      for (double& v : row.mass) v /= counted;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<double> average_bucket_mass(const std::vector<RoundRecord>& records) {
  if (records.empty()) return {};
  const int all = static_cast<int>(records.size());
  const auto rows = weight_heatmap(records, all);
  return rows.front().mass;
}

std::string rounds_csv(const RunResult& result, const SeedRun& run) {
  std::ostringstream out;
  out << "t,alpha,err_accous,err_olre,err_fix,err_ulsif,err_kliep,loss_hat,est_err,clip_count";
  for (int len : result.buckets) out << ",w_" << len;
  out << '\n';
  for (const RoundRecord& r : run.records) {
    out << r.t << ',' << fmt(r.alpha);
    for (Method m : kAllMethods) out << ',' << fmt(r.err[index_of(m)]);
    out << ',' << fmt(r.loss_hat) << ',' << fmt(r.est_err) << ',' << r.clip_count;
    for (double v : r.bucket_mass) out << ',' << fmt(v);
    out << '\n';
  }
  return out.str();
}

namespace {

Json config_json_object(const ExperimentConfig& cfg) {
  Json j;
  j["source"] = cfg.source == DataSource::Synthetic ? "synthetic" : "csv";
  j["pattern"] = std::string(to_string(cfg.pattern));
  j["period"] = cfg.period ? Json(*cfg.period) : Json(nullptr);
  j["keep_prob"] = optional_json(cfg.keep_prob);
  j["alpha0"] = cfg.alpha0;
  j["constant_alpha"] = optional_json(cfg.constant_alpha);
  j["cov_scale"] = cfg.cov_scale;
  j["clip_radius"] = optional_json(cfg.clip_radius);
  j["offline_csv"] = cfg.offline_csv;
  j["stream_csv"] = cfg.stream_csv;
  j["rescale_to"] = optional_json(cfg.rescale_to);
  Json h;
  h["dim"] = cfg.hyper.dim;
  h["radius"] = optional_json(cfg.hyper.radius);
  h["feature_bound"] = cfg.hyper.feature_bound;
  h["gamma_ons"] = optional_json(cfg.hyper.gamma_ons);
  h["lambda_ons"] = cfg.hyper.lambda_ons;
  h["ratio_cap"] = cfg.hyper.ratio_cap;
  h["horizon"] = cfg.hyper.horizon;
  h["n_offline"] = cfg.hyper.n_offline;
  h["n_online"] = cfg.hyper.n_online;
  j["hyper"] = h;
  j["divergence"] = std::string(to_string(cfg.divergence));
  j["divergence_flatten"] = cfg.divergence_flatten;
  j["min_len"] = cfg.min_len;
  j["flatten"] = to_string(cfg.flatten);
  j["solver"] = {{"max_iter", cfg.solver.max_iter},
                 {"tol", cfg.solver.tol},
                 {"radius", cfg.solver.radius},
                 {"fit_intercept", cfg.solver.fit_intercept}};
  j["ulsif_lambda"] = cfg.ulsif_lambda;
  j["kliep"] = {{"steps", cfg.kliep.steps},
                {"step_size", cfg.kliep.step_size},
                {"tol", cfg.kliep.tol}};
  Json methods = Json::array();
  for (Method m : cfg.methods) methods.push_back(std::string(to_string(m)));
  j["methods"] = methods;
  j["seeds"] = cfg.seeds;
  j["prop2_mc"] = cfg.prop2_mc;
  j["heatmap_window"] = cfg.heatmap_window ? Json(*cfg.heatmap_window) : Json(nullptr);
  j["out_dir"] = cfg.out_dir;
  return j;
}

std::optional<double> get_optional(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

std::string config_to_json(const ExperimentConfig& cfg) { return config_json_object(cfg).dump(2); }

ExperimentConfig config_from_json(const std::string& text) {
  const Json j = Json::parse(text);
  ExperimentConfig cfg;
  cfg.source = j.at("source").get<std::string>() == "csv" ? DataSource::Csv : DataSource::Synthetic;
  cfg.pattern = parse_shift_pattern(j.at("pattern").get<std::string>());
  if (!j.at("period").is_null()) cfg.period = j.at("period").get<int>();
  cfg.keep_prob = get_optional(j, "keep_prob");
  cfg.alpha0 = j.at("alpha0").get<double>();
  cfg.constant_alpha = get_optional(j, "constant_alpha");
  cfg.cov_scale = j.at("cov_scale").get<double>();
  cfg.clip_radius = get_optional(j, "clip_radius");
  cfg.offline_csv = j.at("offline_csv").get<std::string>();
  cfg.stream_csv = j.at("stream_csv").get<std::string>();
  cfg.rescale_to = get_optional(j, "rescale_to");
  const Json& h = j.at("hyper");
  cfg.hyper.dim = h.at("dim").get<int>();
  cfg.hyper.radius = get_optional(h, "radius");
  cfg.hyper.feature_bound = h.at("feature_bound").get<double>();
  cfg.hyper.gamma_ons = get_optional(h, "gamma_ons");
  cfg.hyper.lambda_ons = h.at("lambda_ons").get<double>();
  cfg.hyper.ratio_cap = h.at("ratio_cap").get<double>();
  cfg.hyper.horizon = h.at("horizon").get<int>();
  cfg.hyper.n_offline = h.at("n_offline").get<int>();
  cfg.hyper.n_online = h.at("n_online").get<int>();
  cfg.divergence = parse_divergence_kind(j.at("divergence").get<std::string>());
  cfg.divergence_flatten = j.at("divergence_flatten").get<double>();
  cfg.min_len = j.at("min_len").get<int>();
  cfg.flatten = parse_flatten(j.at("flatten").get<std::string>());
  const Json& s = j.at("solver");
  cfg.solver.max_iter = s.at("max_iter").get<int>();
  cfg.solver.tol = s.at("tol").get<double>();
  cfg.solver.radius = s.at("radius").get<double>();
  cfg.solver.fit_intercept = s.at("fit_intercept").get<bool>();
  cfg.ulsif_lambda = j.at("ulsif_lambda").get<double>();
  const Json& k = j.at("kliep");
  cfg.kliep.steps = k.at("steps").get<int>();
  cfg.kliep.step_size = k.at("step_size").get<double>();
  cfg.kliep.tol = k.at("tol").get<double>();
  cfg.methods.clear();
  for (const auto& m : j.at("methods")) cfg.methods.push_back(parse_method(m.get<std::string>()));
  cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  cfg.prop2_mc = j.at("prop2_mc").get<int>();
  if (!j.at("heatmap_window").is_null()) cfg.heatmap_window = j.at("heatmap_window").get<int>();
  cfg.out_dir = j.at("out_dir").get<std::string>();
  return cfg;
}

std::string summary_json(const RunResult& result, bool include_timing) {
  const double mu = DivergenceSpec::make(result.config.divergence, result.hyper.beta(),
                                         result.config.divergence_flatten)
                        .strong_convexity;
  Json j;
  j["build_id"] = build_id();
  j["config"] = config_json_object(result.config);
  j["resolved"] = {{"radius", result.hyper.radius},
                   {"feature_bound", result.hyper.feature_bound},
                   {"gamma_ons", result.hyper.gamma_ons},
                   {"beta", result.hyper.beta()},
                   {"strong_convexity", mu},
                   {"weight_buckets", result.buckets}};
  Json agg = Json::object();
  for (Method m : kAllMethods) {
    const auto& a = result.aggregate[index_of(m)];
    if (!a) continue;
    agg[std::string(to_string(m))] = {{"mean_err", a->mean}, {"std_err", a->std}, {"seeds", a->seeds}};
  }
  j["aggregate"] = agg;
  Json seeds = Json::array();
  for (const SeedRun& run : result.seeds) {
    const SeedSummary& s = run.summary;
    Json e;
    e["seed"] = s.seed;
    e["ok"] = s.ok;
    if (!s.ok) e["error"] = s.error;
    Json errs = Json::object();
    for (Method m : kAllMethods) {
      const auto& v = s.mean_err[index_of(m)];
      if (v) errs[std::string(to_string(m))] = *v;
    }
    e["mean_err"] = errs;
    e["cumulative_est_err"] = optional_json(s.cumulative_est_err);
    if (s.prop2) {
      e["prop2"] = {{"lhs", s.prop2->lhs},
                    {"rhs", s.prop2->rhs},
                    {"mu", s.prop2->mu},
                    {"holds", s.prop2->holds}};
    } else {
      e["prop2"] = nullptr;
    }
    e["dynamic_regret"] = optional_json(s.dynamic_regret);
    if (s.variation) {
      e["variation"] = {{"alpha_path", s.variation->alpha_path},
                        {"l1_factor", s.variation->l1_factor},
                        {"value", s.variation->value}};
    } else {
      e["variation"] = nullptr;
    }
    e["max_true_ratio"] = optional_json(s.max_true_ratio);
    e["rejected_samples"] = s.rejected;
    e["clip_total"] = s.clip_total;
    e["degenerate_weights"] = s.degenerate_weights;
    if (include_timing) e["wall_time"] = s.wall_time;
    seeds.push_back(e);
  }
  j["seeds"] = seeds;
  if (include_timing) j["wall_time"] = result.wall_time;
  return j.dump(2) + "\n";
}

void emit_outputs(const RunResult& result, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
  auto write = [&](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + p.string());
  };
  for (const SeedRun& run : result.seeds) {
    if (!run.summary.ok) continue;
    write(dir / ("rounds_" + std::to_string(run.summary.seed) + ".csv"), rounds_csv(result, run));
  }
  if (!result.buckets.empty()) {
    std::ostringstream hm;
    hm << "seed,window_start,window_end";
    for (int len : result.buckets) hm << ",w_" << len;
    hm << '\n';
    for (const SeedRun& run : result.seeds) {
      if (!run.summary.ok) continue;
      for (const HeatmapRow& row : weight_heatmap(run.records, *result.config.heatmap_window)) {
        hm << run.summary.seed << ',' << row.start << ',' << row.end;
        for (double v : row.mass) hm << ',' << fmt(v);
        hm << '\n';
      }
    }
    write(dir / "heatmap.csv", hm.str());
  }
  write(dir / "summary.json", summary_json(result, true));
}

void apply_setting(ExperimentConfig& cfg, const std::string& key_in, const std::string& value_in) {
  const std::string key = trim(key_in);
  const std::string value = trim(value_in);
  auto& h = cfg.hyper;
  if (key == "source") {
    if (value == "synthetic") cfg.source = DataSource::Synthetic;
    else if (value == "csv") cfg.source = DataSource::Csv;
    else throw std::invalid_argument("source must be synthetic or csv");
  } else if (key == "pattern") {
    cfg.pattern = parse_shift_pattern(value);
  } else if (key == "period" || key == "M") {
    cfg.period = parse_int(key, value);
  } else if (key == "keep_prob") {
    cfg.keep_prob = parse_double(key, value);
  } else if (key == "alpha0") {
    cfg.alpha0 = parse_double(key, value);
  } else if (key == "constant_alpha") {
    cfg.constant_alpha = parse_double(key, value);
  } else if (key == "cov_scale") {
    cfg.cov_scale = parse_double(key, value);
  } else if (key == "clip_radius") {
    cfg.clip_radius = parse_double(key, value);
  } else if (key == "offline_csv" || key == "offline") {
    cfg.offline_csv = value;
  } else if (key == "stream_csv" || key == "stream") {
    cfg.stream_csv = value;
  } else if (key == "rescale_to") {
    cfg.rescale_to = parse_double(key, value);
  } else if (key == "dim" || key == "d") {
    h.dim = parse_int(key, value);
  } else if (key == "radius" || key == "S") {
    h.radius = parse_double(key, value);
  } else if (key == "feature_bound" || key == "R") {
    h.feature_bound = parse_double(key, value);
  } else if (key == "gamma_ons" || key == "gamma") {
    h.gamma_ons = parse_double(key, value);
  } else if (key == "lambda_ons" || key == "lambda") {
    h.lambda_ons = parse_double(key, value);
  } else if (key == "ratio_cap" || key == "cap") {
    h.ratio_cap = parse_double(key, value);
  } else if (key == "horizon" || key == "T") {
    h.horizon = parse_int(key, value);
  } else if (key == "n_offline" || key == "N0") {
    h.n_offline = parse_int(key, value);
  } else if (key == "n_online" || key == "Nt") {
    h.n_online = parse_int(key, value);
  } else if (key == "divergence") {
    cfg.divergence = parse_divergence_kind(value);
  } else if (key == "divergence_flatten") {
    cfg.divergence_flatten = parse_double(key, value);
  } else if (key == "min_len") {
    cfg.min_len = parse_int(key, value);
  } else if (key == "flatten") {
    cfg.flatten = parse_flatten(value);
  } else if (key == "solver_max_iter") {
    cfg.solver.max_iter = parse_int(key, value);
  } else if (key == "solver_tol") {
    cfg.solver.tol = parse_double(key, value);
  } else if (key == "weight_radius" || key == "D_w") {
    cfg.solver.radius = parse_double(key, value);
  } else if (key == "fit_intercept") {
    cfg.solver.fit_intercept = parse_bool(key, value);
  } else if (key == "ulsif_lambda") {
    cfg.ulsif_lambda = parse_double(key, value);
  } else if (key == "kliep_steps") {
    cfg.kliep.steps = parse_int(key, value);
  } else if (key == "kliep_step_size") {
    cfg.kliep.step_size = parse_double(key, value);
  } else if (key == "methods") {
    cfg.methods.clear();
    for (const auto& m : split_list(value)) cfg.methods.push_back(parse_method(m));
  } else if (key == "seeds") {
    cfg.seeds.clear();
    for (const auto& s : split_list(value)) {
      const auto dots = s.find("..");
      const long long lo = parse_integer(key, dots == std::string::npos ? s : s.substr(0, dots));
      const long long hi = dots == std::string::npos ? lo : parse_integer(key, s.substr(dots + 2));
      if (lo < 0 || hi < lo) throw std::invalid_argument("seeds must be nonnegative and ranges ascending");
      for (long long v = lo; v <= hi; ++v) cfg.seeds.push_back(static_cast<std::uint64_t>(v));
    }
  } else if (key == "prop2_mc") {
    cfg.prop2_mc = parse_int(key, value);
  } else if (key == "heatmap_window") {
    cfg.heatmap_window = parse_int(key, value);
  } else if (key == "out" || key == "out_dir") {
    cfg.out_dir = value;
  } else {
    throw std::invalid_argument("unknown setting '" + key + "'");
  }
}

std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected key=value",
                       line_no);
    }
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

const char* build_id() { return COVSHIFT_BUILD_ID; }

}  // namespace covshift
