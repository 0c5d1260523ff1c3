#include "covshift/checks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "covshift/ensemble.hpp"
#include "covshift/ons.hpp"

namespace covshift {

namespace {

std::string format(const char* fmt, double a, double b = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, fmt, a, b);
  return buf;
}

Matrix random_points(Rng& rng, Eigen::Index n, Eigen::Index d, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = normal(rng);
  }
  return x;
}

Vector random_vector(Rng& rng, Eigen::Index d, double scale) {
  return random_points(rng, 1, d, scale).row(0).transpose();
}

Hyperparams small_hyper(int dim, int horizon, double radius, double bound, double gamma) {
  HyperparamInput in;
  in.dim = dim;
  in.radius = radius;
  in.feature_bound = bound;
  in.gamma_ons = gamma;
  in.horizon = horizon;
  return validate_hyperparams(in);
}

}  // namespace

CheckResult check_gradients(std::uint64_t seed, int draws) {
  CheckResult res{"gradient vs finite differences", true, ""};
  Rng rng = derive_stream(SeedSpec{seed}, "check-gradients");
  std::uniform_int_distribution<int> dim_dist(1, 6);
  double worst = 0.0;
  struct Case {
    DivergenceKind kind;
    double flatten;
  };
  const Case cases[] = {{DivergenceKind::LS, 1.0}, {DivergenceKind::LR, 1.0},
                        {DivergenceKind::LR, 0.6}, {DivergenceKind::KL, 1.0}};
  for (const Case& c : cases) {
    const DivergenceSpec spec = DivergenceSpec::make(c.kind, 10.0, c.flatten);
    for (int i = 0; i < draws; ++i) {
      const int d = dim_dist(rng);
      const Matrix off = random_points(rng, 20, d, 0.7);
      const Matrix on = random_points(rng, 5, d, 0.7);
      RatioModel m{required_link(c.kind), random_vector(rng, d, 0.5), 10.0};
      const Vector g = empirical_grad(spec, m, off, on);
      Vector fd(d);
      for (int j = 0; j < d; ++j) {
        const double h = 1e-5 * std::max(1.0, std::abs(m.theta[j]));
        RatioModel plus = m, minus = m;
        plus.theta[j] += h;
        minus.theta[j] -= h;
        fd[j] = (empirical_loss(spec, plus, off, on) - empirical_loss(spec, minus, off, on)) / (2 * h);
      }
      const double rel = (fd - g).norm() / std::max(g.norm(), 1e-3);
      worst = std::max(worst, rel);
    }
  }
  res.passed = worst <= 1e-5;
  res.detail = format("max relative error %.3g (tol 1e-5)", worst);
  return res;
}

CheckResult check_projection_kkt(std::uint64_t seed, int pairs) {
  CheckResult res{"weighted projection KKT", true, ""};
  Rng rng = derive_stream(SeedSpec{seed}, "check-projection");
  std::uniform_int_distribution<int> dim_dist(1, 8);
  std::uniform_real_distribution<double> radius_dist(0.2, 3.0);
  double worst = 0.0;
  int failures = 0;
  for (int i = 0; i < pairs; ++i) {
    const int d = dim_dist(rng);
    const Matrix b = random_points(rng, d, d, 1.0);
    const Matrix a = b * b.transpose() + 0.05 * Matrix::Identity(d, d);
    const Vector p = random_vector(rng, d, 2.0);
    const double s = radius_dist(rng);
    const WeightedProjection w = proj_weighted_ball_kkt(a, p, s);
    double err = 0.0;
    if (p.norm() <= s) {
      err = (w.theta - p).norm();
      if (w.active) ++failures;
    } else {
      // (A + nu I) theta = A p, nu >= 0, ||theta|| = S.
      const Vector ap = a * p;
      const double scale = std::max(1.0, ap.norm());
      const double stationarity = (a * w.theta + w.multiplier * w.theta - ap).norm() / scale;
      const double boundary = std::abs(w.theta.norm() - s);
      err = std::max(stationarity, boundary);
      if (w.multiplier < 0.0 || w.theta.norm() > s * (1.0 + 1e-12)) ++failures;
    }
    worst = std::max(worst, err);
  }
  res.passed = worst <= 1e-8 && failures == 0;
  res.detail = format("max KKT residual %.3g (tol 1e-8), sign/feasibility failures %.0f", worst,
                      failures);
  return res;
}

CheckResult check_sherman_morrison(std::uint64_t seed, int updates) {
  CheckResult res{"Sherman-Morrison inverse", true, ""};
  Rng rng = derive_stream(SeedSpec{seed}, "check-sherman-morrison");
  const int d = 5;
  OnsState s = ons_init({1, updates}, small_hyper(d, updates, 2.0, 3.0, 1.0));
  double worst = 0.0;
  for (int i = 0; i < updates; ++i) {
    ons_step(s, random_vector(rng, d, 1.0));
    const Matrix direct = s.curvature.inverse();
    worst = std::max(worst, (s.curvature_inv - direct).cwiseAbs().maxCoeff());
  }
  res.passed = worst <= 1e-6;
  res.detail = format("max abs deviation %.3g over %.0f updates (tol 1e-6)", worst, updates);
  return res;
}

CheckResult check_meta_simplex(std::uint64_t seed, int horizon) {
  CheckResult res{"meta-weight simplex", true, ""};
  const int d = 5;
  const GaussianMixtureSpec g = GaussianMixtureSpec::standard(d);
  const SeedSpec ss{seed};
  Rng rng = derive_stream(ss, "check-simplex");
  const Matrix offline = sample_batch(g, 0.9, 200, rng).x;
  const Hyperparams h = small_hyper(d, horizon, d / 2.0, g.clip_radius, kDefaultGammaOns);
  const DivergenceSpec spec = DivergenceSpec::make(DivergenceKind::LR, h.beta());
  OnlineEnsemble ens(h, spec, CoveringMode::Geometric, 1);
  ScheduleOptions so;
  const ShiftSchedule sched = make_schedule(ShiftPattern::Squ, horizon, so, ss);
  double worst = 0.0;
  int negatives = 0;
  int too_many = 0;
  for (int t = 1; t <= horizon; ++t) {
    UnlabeledBatch b{t, sample_batch(g, alpha_at(sched, t), 1, rng).x, std::nullopt};
    ens.begin_round(t);
    double sum = 0.0;
    for (double p : ens.weights()) {
      if (p < 0.0) ++negatives;
      sum += p;
    }
    worst = std::max(worst, std::abs(sum - 1.0));
    const int bound = static_cast<int>(std::ceil(std::log2(static_cast<double>(t)))) + 1;
    if (static_cast<int>(ens.entries().size()) > bound) ++too_many;
    ens.finish_round(offline, b);
  }
  res.passed = worst <= 1e-10 && negatives == 0 && too_many == 0;
  std::ostringstream os;
  os << "max |sum p - 1| = " << worst << ", negative weights " << negatives
     << ", rounds over the active bound " << too_many;
  res.detail = os.str();
  return res;
}

CheckResult check_covering_cardinality(int horizon) {
  CheckResult res{"covering cardinality", true, ""};
  int violations = 0;
  int uncovered = 0;
  for (int t = 1; t <= horizon; ++t) {
    const CoveringSnapshot snap = covering_at(t, horizon, 1);
    const int bound = static_cast<int>(std::ceil(std::log2(static_cast<double>(t)))) + 1;
    if (static_cast<int>(snap.active.size()) > bound) ++violations;
    // Each level k with 2^k <= t contributes exactly one interval holding t.
    for (int k = 0; (1 << k) <= t; ++k) {
      const auto hit = std::count_if(snap.active.begin(), snap.active.end(), [&](const auto& c) {
        return c.level == k && c.start <= t && t <= c.end;
      });
      if (hit != 1) ++uncovered;
    }
  }
  res.passed = violations == 0 && uncovered == 0;
  res.detail = "rounds over the bound: " + std::to_string(violations) +
               ", level coverage errors: " + std::to_string(uncovered) + " (T = " +
               std::to_string(horizon) + ")";
  return res;
}

CheckResult check_olre_equivalence(std::uint64_t seed, int horizon) {
  CheckResult res{"single-interval ensemble equals lone ONS", true, ""};
  const int d = 5;
  const GaussianMixtureSpec g = GaussianMixtureSpec::standard(d);
  const SeedSpec ss{seed};
  Rng rng = derive_stream(ss, "check-olre");
  const Matrix offline = sample_batch(g, 0.9, 200, rng).x;
  const Hyperparams h = small_hyper(d, horizon, d / 2.0, g.clip_radius, kDefaultGammaOns);
  const DivergenceSpec spec = DivergenceSpec::make(DivergenceKind::LR, h.beta());
  OnlineEnsemble ens = olre_estimator(h, spec);
  OnsState lone = ons_init({1, horizon}, h);
  ScheduleOptions so;
  const ShiftSchedule sched = make_schedule(ShiftPattern::Sin, horizon, so, ss);
  int mismatches = 0;
  for (int t = 1; t <= horizon; ++t) {
    UnlabeledBatch b{t, sample_batch(g, alpha_at(sched, t), 1, rng).x, std::nullopt};
    const Vector& combined = ens.begin_round(t);
    if (combined.size() != lone.theta.size() ||
        !std::equal(combined.data(), combined.data() + combined.size(), lone.theta.data())) {
      ++mismatches;
    }
    ens.finish_round(offline, b);
    ons_step(lone, empirical_grad(spec, RatioModel{Link::Exponential, lone.theta, h.radius},
                                  offline, b.xs));
  }
  res.passed = mismatches == 0;
  res.detail = "rounds with differing bits: " + std::to_string(mismatches) + " of " +
               std::to_string(horizon);
  return res;
}

Vector batch_minimizer(const DivergenceSpec& spec, const Matrix& offline,
                       const std::vector<Matrix>& batches, int rounds, double radius) {
  if (rounds < 1 || rounds > static_cast<int>(batches.size())) {
    throw std::invalid_argument("batch_minimizer: round count out of range");
  }
  const Eigen::Index d = offline.cols();
  const Link link = required_link(spec.kind);
  // sum_t L_hat_t = rounds * offline term + sum_t mean_{S_t} online term.
  // Batches may differ in size, so the online part is weighted per row.
  Eigen::Index total_rows = 0;
  for (int t = 0; t < rounds; ++t) total_rows += batches[t].rows();
  Matrix stacked(total_rows, d);
  Vector row_weight(total_rows);
  Eigen::Index at = 0;
  for (int t = 0; t < rounds; ++t) {
    const Matrix& b = batches[t];
    stacked.middleRows(at, b.rows()) = b;
    row_weight.segment(at, b.rows()).setConstant(static_cast<double>(total_rows) /
                                                 (static_cast<double>(rounds) * b.rows()));
    at += b.rows();
  }
  // With equal batch sizes all row weights are 1 and the objective is
  // rounds * empirical_loss(offline, stacked); weights handle the rest.
  const bool uniform = (row_weight.array() == 1.0).all();
  if (!uniform) throw std::invalid_argument("batch_minimizer expects equal batch sizes");

  auto value_grad = [&](const Vector& th, Vector* g) {
    const LossAndGrad lg = empirical_loss_and_grad(spec, RatioModel{link, th, radius}, offline, stacked);
    if (g) *g = lg.grad;
    return lg.loss;
  };
  auto project = [&](Vector v) {
    const double n = v.norm();
    if (n > radius) v *= radius / n;
    return v;
  };
  // Newton steps with a Hessian from central differences of the gradient,
  // projected gradient when the Newton point leaves the ball.
  auto hessian = [&](const Vector& th) {
    Matrix hm(d, d);
    for (Eigen::Index j = 0; j < d; ++j) {
      const double h = 1e-5;
      Vector a = th, b = th, ga, gb;
      a[j] += h;
      b[j] -= h;
      value_grad(a, &ga);
      value_grad(b, &gb);
      hm.col(j) = (ga - gb) / (2 * h);
    }
    return Matrix(0.5 * (hm + hm.transpose()));
  };
  Vector th = Vector::Zero(d);
  Vector g;
  double f = value_grad(th, &g);
  double step = 1.0;
  for (int it = 0; it < 5000; ++it) {
    if ((project(th - g) - th).norm() <= 1e-11) break;
    Vector dir = -hessian(th).ldlt().solve(g);
    const bool newton = dir.allFinite() && g.dot(dir) < 0.0 && (th + dir).norm() <= radius;
    if (!newton) dir = project(th - step * g) - th;
    const double slope = g.dot(dir);
    if (!(slope < 0.0)) break;
    Vector cand;
    Vector gc;
    double fc = 0.0;
    double eta = 1.0;
    bool ok = false;
    for (int h = 0; h < 60; ++h, eta *= 0.5) {
      cand = th + eta * dir;
      fc = value_grad(cand, &gc);
      if (fc <= f + 1e-4 * eta * slope) {
        ok = true;
        break;
      }
    }
    if (!ok) break;
    const Vector s = cand - th;
    const Vector y = gc - g;
    const double sy = s.dot(y);
    step = sy > 0.0 ? std::clamp(s.squaredNorm() / sy, 1e-8, 1e4) : 1.0;
    th = cand;
    g = gc;
    f = fc;
  }
  return th;
}

RegretCurve ons_regret_curve(std::uint64_t seed, const std::vector<int>& checkpoints,
                             const ExperimentConfig& base) {
  if (checkpoints.empty()) throw std::invalid_argument("need at least one checkpoint");
  const int horizon = *std::max_element(checkpoints.begin(), checkpoints.end());
  ExperimentConfig cfg = base;
  cfg.hyper.horizon = horizon;
  cfg = resolve_config(cfg);
  const Hyperparams h = validate_hyperparams(cfg.hyper);
  const DivergenceSpec spec = DivergenceSpec::make(cfg.divergence, h.beta(), cfg.divergence_flatten);
  GaussianMixtureSpec g = GaussianMixtureSpec::standard(h.dim, cfg.cov_scale);
  g.clip_radius = *cfg.clip_radius;

  const SeedSpec ss{seed};
  Rng off_rng = derive_stream(ss, "offline");
  Rng stream_rng = derive_stream(ss, "stream");
  const Matrix offline = sample_batch(g, cfg.alpha0, h.n_offline, off_rng).x;
  const double alpha = cfg.constant_alpha.value_or(cfg.alpha0);

  std::vector<Matrix> batches;
  batches.reserve(static_cast<std::size_t>(horizon));
  OnsState learner = ons_init({1, horizon}, h);
  const Link link = required_link(spec.kind);
  std::vector<double> online_loss(static_cast<std::size_t>(horizon));
  for (int t = 1; t <= horizon; ++t) {
    batches.push_back(sample_batch(g, alpha, h.n_online, stream_rng).x);
    const LossAndGrad lg = empirical_loss_and_grad(spec, RatioModel{link, learner.theta, h.radius},
                                                   offline, batches.back());
    online_loss[static_cast<std::size_t>(t - 1)] = lg.loss;
    ons_step(learner, lg.grad);
  }

  RegretCurve curve;
  for (int tau : checkpoints) {
    const Vector best = batch_minimizer(spec, offline, batches, tau, h.radius);
    double learner_sum = 0.0;
    double best_sum = 0.0;
    for (int t = 0; t < tau; ++t) {
      learner_sum += online_loss[static_cast<std::size_t>(t)];
      best_sum += empirical_loss(spec, RatioModel{link, best, h.radius}, offline, batches[t]);
    }
    curve.checkpoints.push_back(tau);
    curve.regret.push_back(learner_sum - best_sum);
  }
  return curve;
}

CheckResult check_ons_regret(const std::vector<std::uint64_t>& seeds, int short_t, int long_t) {
  CheckResult res{"ONS average regret shrinks", true, ""};
  ExperimentConfig base = synthetic_defaults();
  base.pattern = ShiftPattern::Constant;
  base.constant_alpha = 0.5;
  int good = 0;
  std::ostringstream os;
  for (std::uint64_t s : seeds) {
    const RegretCurve c = ons_regret_curve(s, {short_t, long_t}, base);
    const double avg_short = c.regret[0] / short_t;
    const double avg_long = c.regret[1] / long_t;
    const bool ok = avg_long <= 0.5 * avg_short;
    if (ok) ++good;
    os << "seed " << s << ": R(" << short_t << ")/" << short_t << "=" << avg_short << ", R("
       << long_t << ")/" << long_t << "=" << avg_long << (ok ? " ok" : " no") << "; ";
  }
  res.passed = 2 * good > static_cast<int>(seeds.size());
  res.detail = os.str() + std::to_string(good) + "/" + std::to_string(seeds.size()) + " seeds";
  return res;
}

std::vector<CheckResult> run_props_suite(std::uint64_t seed) {
  return {check_gradients(seed),          check_projection_kkt(seed),
          check_sherman_morrison(seed),   check_meta_simplex(seed),
          check_covering_cardinality(),   check_olre_equivalence(seed)};
}

std::vector<CheckResult> run_prop2_suite(std::uint64_t seed, int horizon) {
  std::vector<CheckResult> out;
  for (ShiftPattern p : {ShiftPattern::Lin, ShiftPattern::Squ, ShiftPattern::Sin, ShiftPattern::Ber}) {
    ExperimentConfig cfg = synthetic_defaults();
    cfg.pattern = p;
    cfg.hyper.horizon = horizon;
    cfg.methods = {Method::Accous};
    cfg.seeds = {seed};
    const RunResult r = run_experiment(cfg);
    CheckResult c{"cumulative estimation error bound (" + std::string(to_string(p)) + ")", false, ""};
    const SeedSummary& s = r.seeds.front().summary;
    if (!s.ok) {
      c.detail = "run failed: " + s.error;
    } else if (s.prop2) {
      c.passed = s.prop2->holds;
      c.detail = format("lhs %.6g, rhs %.6g", s.prop2->lhs, s.prop2->rhs);
    } else {
      c.detail = "no oracle terms recorded";
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<CheckResult> run_regret_suite(const std::vector<std::uint64_t>& seeds) {
  return {check_ons_regret(seeds)};
}

}  // namespace covshift
