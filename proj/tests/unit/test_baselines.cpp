#include <doctest.h>

#include <random>

#include "covshift/baselines.hpp"
#include "covshift/datagen.hpp"

using namespace covshift;

namespace {

Matrix gaussian(Rng& rng, Eigen::Index n, Eigen::Index d, double mean, double sd) {
  std::normal_distribution<double> nd(mean, sd);
  Matrix x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = nd(rng);
  return x;
}

}  // namespace

TEST_CASE("uLSIF closed form") {
  Matrix off(2, 2);
  off << std::sqrt(2.0), 0.0, 0.0, std::sqrt(2.0);  // mean x x' = I
  Matrix batch(1, 2);
  batch << 1.0, 0.0;
  const UlsifFit f = ulsif_fit(off, batch, 1.0, 10.0);
  CHECK(f.raw_theta[0] == doctest::Approx(0.5));
  CHECK(f.raw_theta[1] == doctest::Approx(0.0));
  CHECK(f.model.link == Link::Linear);

  Matrix centered(2, 2);
  centered << 1.0, -1.0, -1.0, 1.0;
  const UlsifFit z = ulsif_fit(off, centered, 1.0, 10.0);
  CHECK(z.model.theta.norm() == 0.0);
  CHECK(ratio_eval(z.model, Vector{{3.0, 1.0}}) == 0.0);
}

TEST_CASE("uLSIF matches a gradient-descent oracle") {
  Rng rng(1);
  const Matrix off = gaussian(rng, 40, 3, 0.0, 1.0);
  const Matrix batch = gaussian(rng, 5, 3, 0.5, 1.0);
  const double lambda = 0.1;
  const UlsifFit f = ulsif_fit(off, batch, lambda, 100.0);

  // Objective 1/2 theta' H theta - h' theta + lambda/2 ||theta||^2.
  const Matrix h = off.transpose() * off / 40.0;
  const Vector hv = batch.colwise().mean().transpose();
  Vector th = Vector::Zero(3);
  const double step = 1.0 / (h.eigenvalues().real().maxCoeff() + lambda);
  for (int i = 0; i < 100000; ++i) {
    const Vector g = h * th - hv + lambda * th;
    if (g.norm() < 1e-14) break;
    th -= step * g;
  }
  CHECK((f.raw_theta - th).norm() < 1e-8);
}

TEST_CASE("uLSIF output is rescaled into the ball") {
  Rng rng(2);
  const Matrix off = gaussian(rng, 30, 2, 0.0, 0.1);
  const Matrix batch = gaussian(rng, 3, 2, 2.0, 0.1);
  const UlsifFit f = ulsif_fit(off, batch, 0.01, 1.0);
  CHECK(f.raw_theta.norm() > 1.0);
  CHECK(f.model.theta.norm() == doctest::Approx(1.0));
  CHECK(f.model.theta.normalized().isApprox(f.raw_theta.normalized()));
}

TEST_CASE("KLIEP on matched samples stays near zero") {
  Rng rng(3);
  const Matrix off = gaussian(rng, 200, 3, 0.0, 1.0);
  const KliepFit f = kliep_fit(off, off, KliepConfig{}, 2.0);
  CHECK(f.losses.front() == doctest::Approx(1.0));
  CHECK(f.losses.back() <= 1.0);
  CHECK(f.model.theta.norm() < 1e-6);
}

TEST_CASE("KLIEP descends monotonically and stays in the ball") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix off = gaussian(rng, 100, 4, 0.0, 1.0);
    const Matrix batch = gaussian(rng, 3, 4, 0.8, 1.0);
    const KliepFit f = kliep_fit(off, batch, KliepConfig{}, 1.5);
    for (std::size_t k = 1; k < f.losses.size(); ++k) {
      CHECK(f.losses[k] <= f.losses[k - 1] + 1e-12);
    }
    CHECK(f.model.theta.norm() <= 1.5 + 1e-8);
  }
}

TEST_CASE("KLIEP argument checks") {
  const Matrix s = Matrix::Ones(3, 2);
  KliepConfig cfg;
  cfg.steps = 0;
  CHECK_THROWS_AS(kliep_fit(s, s, cfg, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(kliep_fit(s, Matrix::Ones(1, 3), KliepConfig{}, 1.0), std::invalid_argument);
}

TEST_CASE("OLRE starts at zero and keeps one learner") {
  HyperparamInput in;
  in.dim = 2;
  in.feature_bound = 30.0;
  in.gamma_ons = 1.0;
  in.horizon = 50;
  const Hyperparams h = validate_hyperparams(in);
  OnlineEnsemble e = olre_estimator(h, DivergenceSpec::make(DivergenceKind::LR, h.beta()));
  CHECK(e.begin_round(1) == Vector::Zero(2));
  CHECK(e.entries().size() == 1);
  CHECK(e.entries()[0].interval.start == 1);
  CHECK(e.entries()[0].interval.end >= 50);
}
