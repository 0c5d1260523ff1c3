#include <doctest.h>

#include <cmath>
#include <random>

#include "covshift/bregman.hpp"

using namespace covshift;

namespace {

Matrix rows(std::initializer_list<std::initializer_list<double>> init) {
  Matrix m(static_cast<Eigen::Index>(init.size()), static_cast<Eigen::Index>(init.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : init) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

Matrix gaussian(Rng& rng, Eigen::Index n, Eigen::Index d, double sd) {
  std::normal_distribution<double> nd(0.0, sd);
  Matrix x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = nd(rng);
  return x;
}

// Straight transcriptions of the generators, used as reference values.
double psi_ref(DivergenceKind k, double t) {
  switch (k) {
    case DivergenceKind::LS: return 0.5 * (t - 1) * (t - 1);
    case DivergenceKind::LR: return t * std::log(t) - (t + 1) * std::log(t + 1);
    case DivergenceKind::KL: return t * std::log(t) - t;
  }
  return 0;
}

const DivergenceKind kAllKinds[] = {DivergenceKind::LS, DivergenceKind::LR, DivergenceKind::KL};

}  // namespace

TEST_CASE("psi values") {
  CHECK(psi_value(DivergenceKind::LS, 1.0) == 0.0);
  CHECK(psi_value(DivergenceKind::LR, 1.0) == doctest::Approx(-2.0 * std::log(2.0)).epsilon(1e-12));
  CHECK(psi_value(DivergenceKind::LR, 1.0) == doctest::Approx(-1.3862944).epsilon(1e-7));
  CHECK(psi_value(DivergenceKind::KL, 1.0) == doctest::Approx(-1.0));
  for (DivergenceKind k : kAllKinds) {
    for (double t : {0.1, 0.5, 2.0, 7.5}) {
      CHECK(psi_value(k, t) == doctest::Approx(psi_ref(k, t)).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(psi_value(DivergenceKind::LR, 0.0), std::domain_error);
  CHECK_THROWS_AS(psi_value(DivergenceKind::KL, -1.0), std::domain_error);
  CHECK_NOTHROW(psi_value(DivergenceKind::LS, -1.0));
}

TEST_CASE("psi derivatives") {
  CHECK(psi_deriv(DivergenceKind::LR, 1.0) == doctest::Approx(-0.693147).epsilon(1e-6));
  CHECK(psi_deriv(DivergenceKind::LS, 3.0) == 2.0);
  CHECK(psi_second(DivergenceKind::LS, 3.0) == 1.0);
  CHECK(psi_deriv(DivergenceKind::KL, std::exp(1.0)) == doctest::Approx(1.0).epsilon(1e-14));

  // Central differences of the reference generator.
  for (DivergenceKind k : kAllKinds) {
    for (double t : {0.3, 1.0, 4.0}) {
      const double h = 1e-5;
      const double d1 = (psi_ref(k, t + h) - psi_ref(k, t - h)) / (2 * h);
      const double d2 = (psi_ref(k, t + h) - 2 * psi_ref(k, t) + psi_ref(k, t - h)) / (h * h);
      CHECK(psi_deriv(k, t) == doctest::Approx(d1).epsilon(1e-8));
      CHECK(psi_second(k, t) == doctest::Approx(d2).epsilon(1e-4));
    }
  }
}

TEST_CASE("Bregman divergence") {
  CHECK(bregman_div(DivergenceKind::LS, 3.0, 1.0) == doctest::Approx(2.0));
  for (DivergenceKind k : kAllKinds) CHECK(bregman_div(k, 2.0, 2.0) == doctest::Approx(0.0));
  const double expected = psi_value(DivergenceKind::LR, 2.0) - psi_value(DivergenceKind::LR, 1.0) -
                          psi_deriv(DivergenceKind::LR, 1.0) * 1.0;
  CHECK(bregman_div(DivergenceKind::LR, 2.0, 1.0) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("Bregman divergence dominates the strong-convexity quadratic on [1/beta, beta]") {
  const double beta = std::exp(2.0);
  Rng rng(11);
  std::uniform_real_distribution<double> u(1.0 / beta, beta);
  for (DivergenceKind k : kAllKinds) {
    const DivergenceSpec spec = DivergenceSpec::make(k, beta);
    for (int i = 0; i < 200; ++i) {
      const double a = u(rng), b = u(rng);
      CHECK(bregman_div(k, a, b) >= 0.5 * spec.strong_convexity * (a - b) * (a - b) - 1e-10);
    }
  }
}

TEST_CASE("strong convexity constants") {
  const double beta = 5.0;
  CHECK(DivergenceSpec::make(DivergenceKind::LS, beta).strong_convexity == 1.0);
  CHECK(DivergenceSpec::make(DivergenceKind::LR, beta).strong_convexity ==
        doctest::Approx(1.0 / (beta + beta * beta)));
  CHECK(DivergenceSpec::make(DivergenceKind::KL, beta).strong_convexity == doctest::Approx(1.0 / beta));
  CHECK_THROWS(DivergenceSpec::make(DivergenceKind::LS, beta, 0.4));
  CHECK_THROWS(DivergenceSpec::make(DivergenceKind::LR, 0.5));
}

TEST_CASE("ratio evaluation") {
  const Vector x = Vector::Constant(3, 0.7);
  CHECK(ratio_eval(RatioModel::zeros(Link::Exponential, 3, 1.0), x) == 1.0);
  CHECK(ratio_eval(RatioModel{Link::Exponential, Vector::Unit(2, 0), 1.0},
                   Vector{{std::log(2.0), 0.0}}) == doctest::Approx(2.0));
  CHECK(ratio_eval(RatioModel{Link::Linear, Vector{{1.0, 1.0}}, 2.0}, Vector{{0.5, 0.5}}) ==
        doctest::Approx(1.0));
}

TEST_CASE("exponential ratios stay within [exp(-SR), exp(SR)]") {
  Rng rng(3);
  const double s = 1.5, r = 2.0;
  for (int i = 0; i < 100; ++i) {
    Vector th = gaussian(rng, 1, 4, 1.0).row(0).transpose();
    th *= s / std::max(s, th.norm());
    Vector x = gaussian(rng, 1, 4, 1.0).row(0).transpose();
    x *= r / std::max(r, x.norm());
    const double v = ratio_eval(RatioModel{Link::Exponential, th, s}, x);
    CHECK(v >= std::exp(-s * r) * (1 - 1e-12));
    CHECK(v <= std::exp(s * r) * (1 + 1e-12));
  }
}

TEST_CASE("losses at theta = 0") {
  Rng rng(5);
  const Matrix off = gaussian(rng, 7, 3, 1.0), on = gaussian(rng, 2, 3, 1.0);
  auto at_zero = [&](DivergenceKind k) {
    return empirical_loss(DivergenceSpec::make(k, 10.0), RatioModel::zeros(required_link(k), 3, 1.0),
                          off, on);
  };
  CHECK(at_zero(DivergenceKind::LR) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(at_zero(DivergenceKind::LS) == doctest::Approx(0.5));
  CHECK(at_zero(DivergenceKind::KL) == doctest::Approx(1.0));
}

TEST_CASE("loss matches the Bregman matching form") {
  // L(theta) = mean_S0 base(r) - mean_St target(r), up to the LR factor 1/2
  // and the LS constant.
  Rng rng(17);
  const Matrix off = gaussian(rng, 9, 2, 1.0), on = gaussian(rng, 4, 2, 1.0);
  for (DivergenceKind k : kAllKinds) {
    const Vector th{{0.3, -0.6}};
    const RatioModel m{required_link(k), th, 2.0};
    if (k == DivergenceKind::LS) continue;  // linear ratios can be negative here
    const double lhs = empirical_loss(DivergenceSpec::make(k, 10.0), m, off, on);
    const double rhs = functional_loss(k, ratio_eval_all(m, off), ratio_eval_all(m, on));
    const double scale = k == DivergenceKind::LR ? 0.5 : 1.0;
    CHECK(lhs == doctest::Approx(scale * rhs).epsilon(1e-12));
  }
}

TEST_CASE("gradient examples") {
  const Matrix s0 = rows({{1.0, 0.0}});
  const Matrix st = rows({{0.0, 1.0}});
  const Vector g_lr = empirical_grad(DivergenceSpec::make(DivergenceKind::LR, 10.0),
                                     RatioModel::zeros(Link::Exponential, 2, 1.0), s0, st);
  // sigma(0) = 1/2: 1/4 (mean_S0 x - mean_St x).
  CHECK(g_lr[0] == doctest::Approx(0.25));
  CHECK(g_lr[1] == doctest::Approx(-0.25));

  const Vector g_ls = empirical_grad(DivergenceSpec::make(DivergenceKind::LS, 10.0),
                                     RatioModel::zeros(Link::Linear, 2, 1.0), s0, st);
  CHECK(g_ls[0] == doctest::Approx(0.0));
  CHECK(g_ls[1] == doctest::Approx(-1.0));
}

TEST_CASE("gradient vanishes at the stationary point of matched samples") {
  Rng rng(23);
  const Matrix s = gaussian(rng, 6, 3, 1.0);
  // LR and KL with identical samples are stationary at theta = 0.
  for (DivergenceKind k : {DivergenceKind::LR, DivergenceKind::KL}) {
    const Vector g = empirical_grad(DivergenceSpec::make(k, 10.0),
                                    RatioModel::zeros(Link::Exponential, 3, 5.0), s, s);
    CHECK(g.norm() <= 1e-12);
  }
  // LS: H theta = mean x.
  const Matrix h = s.transpose() * s / 6.0;
  const Vector th = h.ldlt().solve(Vector(s.colwise().mean().transpose()));
  const Vector g = empirical_grad(DivergenceSpec::make(DivergenceKind::LS, 10.0),
                                  RatioModel{Link::Linear, th, 100.0}, s, s);
  CHECK(g.norm() <= 1e-12);
}

TEST_CASE("gradient matches finite differences") {
  Rng rng(29);
  for (DivergenceKind k : kAllKinds) {
    for (double flat : {0.5, 1.0}) {
      const DivergenceSpec spec = DivergenceSpec::make(k, 10.0, flat);
      for (int i = 0; i < 100; ++i) {
        const Matrix off = gaussian(rng, 8, 3, 0.8), on = gaussian(rng, 3, 3, 0.8);
        RatioModel m{required_link(k), gaussian(rng, 1, 3, 0.5).row(0).transpose(), 5.0};
        const Vector g = empirical_grad(spec, m, off, on);
        Vector fd(3);
        for (int j = 0; j < 3; ++j) {
          RatioModel a = m, b = m;
          a.theta[j] += 1e-5;
          b.theta[j] -= 1e-5;
          fd[j] = (empirical_loss(spec, a, off, on) - empirical_loss(spec, b, off, on)) / 2e-5;
        }
        CHECK((fd - g).norm() <= 1e-5 * std::max(g.norm(), 1e-3));
      }
    }
  }
}

TEST_CASE("LR loss is convex along segments") {
  Rng rng(31);
  const DivergenceSpec spec = DivergenceSpec::make(DivergenceKind::LR, 10.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const Matrix off = gaussian(rng, 10, 3, 1.0), on = gaussian(rng, 2, 3, 1.0);
    const Vector a = gaussian(rng, 1, 3, 1.0).row(0).transpose();
    const Vector b = gaussian(rng, 1, 3, 1.0).row(0).transpose();
    const double t = u(rng);
    auto loss = [&](const Vector& th) {
      return empirical_loss(spec, RatioModel{Link::Exponential, th, 10.0}, off, on);
    };
    CHECK(loss(t * a + (1 - t) * b) <= t * loss(a) + (1 - t) * loss(b) + 1e-10);
  }
}

TEST_CASE("link and kind must agree") {
  const Matrix s = Matrix::Ones(2, 2);
  CHECK_THROWS_AS(empirical_loss(DivergenceSpec::make(DivergenceKind::LR, 2.0),
                                 RatioModel::zeros(Link::Linear, 2, 1.0), s, s),
                  std::invalid_argument);
  CHECK_THROWS_AS(empirical_loss(DivergenceSpec::make(DivergenceKind::LS, 2.0),
                                 RatioModel::zeros(Link::Exponential, 2, 1.0), s, s),
                  std::invalid_argument);
  CHECK_THROWS_AS(empirical_loss(DivergenceSpec::make(DivergenceKind::KL, 2.0),
                                 RatioModel::zeros(Link::Exponential, 2, 1.0), s, Matrix(0, 2)),
                  std::invalid_argument);
}

TEST_CASE("Monte Carlo expected loss") {
  Rng data_rng(37);
  const Matrix off = gaussian(data_rng, 5, 2, 1.0);
  const Matrix support = rows({{0.5, -1.0}, {1.5, 0.2}, {-0.3, 0.4}});
  const FeatureSampler sampler = [&](Eigen::Index n, Rng& rng) {
    std::uniform_int_distribution<int> pick(0, 2);
    Matrix out(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) out.row(i) = support.row(pick(rng));
    return out;
  };
  const DivergenceSpec spec = DivergenceSpec::make(DivergenceKind::LR, 10.0);
  const RatioModel m{Link::Exponential, Vector{{0.4, -0.2}}, 2.0};

  Rng r1(1), r2(1);
  const double a = expected_loss_mc(spec, m, off, sampler, 20000, r1);
  const double b = expected_loss_mc(spec, m, off, sampler, 20000, r2);
  CHECK(a == b);
  CHECK(a == doctest::Approx(empirical_loss(spec, m, off, support)).epsilon(5e-3));

  Rng r3(2);
  CHECK(expected_loss_mc(spec, RatioModel::zeros(Link::Exponential, 2, 2.0), off, sampler, 10, r3) ==
        doctest::Approx(std::log(2.0)));
  CHECK_THROWS(expected_loss_mc(spec, m, off, sampler, 0, r3));
}

TEST_CASE("estimation error") {
  Rng rng(41);
  const Matrix off = gaussian(rng, 12, 2, 1.0);
  const RatioModel m{Link::Exponential, Vector{{0.3, 0.8}}, 2.0};
  CHECK(estimation_error(m, [&](const Vector& x) { return ratio_eval(m, x); }, off) == 0.0);
  CHECK(estimation_error(RatioModel::zeros(Link::Exponential, 2, 1.0),
                         [](const Vector&) { return 3.0; }, off) == doctest::Approx(2.0));

  auto r_star = [](const Vector& x) { return 1.0 + x[0]; };
  double direct = 0.0;
  for (Eigen::Index i = 0; i < off.rows(); ++i) {
    direct += std::abs(std::exp(off.row(i).dot(m.theta)) - (1.0 + off(i, 0)));
  }
  CHECK(estimation_error(m, r_star, off) == doctest::Approx(direct / 12.0).epsilon(1e-14));
}

TEST_CASE("functional loss is minimized by the true ratio") {
  // Two-point base and target distributions with known ratio r* = q/p.
  const Vector p{{0.7, 0.3}}, q{{0.2, 0.8}};
  const Vector r_star = q.cwiseQuotient(p);
  auto loss = [&](DivergenceKind k, const Vector& r) {
    double base = 0.0, target = 0.0;
    for (int i = 0; i < 2; ++i) {
      base += p[i] * matching_base_term(k, r[i]);
      target += q[i] * matching_target_term(k, r[i]);
    }
    return base - target;
  };
  for (DivergenceKind k : kAllKinds) {
    const double best = loss(k, r_star);
    for (double da : {-0.1, 0.05, 0.2}) {
      for (double db : {-0.3, 0.1}) {
        CHECK(loss(k, r_star + Vector{{da, db}}) >= best);
      }
    }
  }
}
