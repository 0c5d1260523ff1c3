#include "covshift/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <stdexcept>
#include <string>

namespace covshift {

namespace {

constexpr int kMemory = 10;          // nonmonotone reference window
constexpr double kArmijo = 1e-4;
constexpr int kMaxHalvings = 30;
constexpr double kMinStep = 1e-10;
constexpr double kMaxStep = 1e10;

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// Parameters are packed as z = (w, b); b is pinned at zero without intercept.
struct Problem {
  const Matrix& x;
  Vector signs;
  Vector weights;  // normalized to mean one
  bool intercept;
  double radius;

  Eigen::Index dim() const { return x.cols(); }

  double value_and_grad(const Vector& z, Vector* grad) const {
    const Eigen::Index d = dim();
    const Vector margin = signs.cwiseProduct(x * z.head(d) + Vector::Constant(x.rows(), z[d]));
    const double n = static_cast<double>(x.rows());
    double f = 0.0;
    Vector coef(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      f += weights[i] * softplus(-margin[i]);
      coef[i] = -weights[i] * signs[i] * sigmoid(-margin[i]);
    }
    if (grad) {
      grad->resize(d + 1);
      grad->head(d) = x.transpose() * coef / n;
      (*grad)[d] = intercept ? coef.sum() / n : 0.0;
    }
    return f / n;
  }

  // Weighted Hessian (1/N) sum w s (1 - s) x~ x~' with x~ = (x, 1).
  Matrix hessian(const Vector& z) const {
    const Eigen::Index d = dim();
    const Vector margin = signs.cwiseProduct(x * z.head(d) + Vector::Constant(x.rows(), z[d]));
    Vector c(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double s = sigmoid(margin[i]);
      c[i] = weights[i] * s * (1.0 - s);
    }
    const double n = static_cast<double>(x.rows());
    Matrix h(d + 1, d + 1);
    h.topLeftCorner(d, d) = x.transpose() * c.asDiagonal() * x / n;
    const Vector cross = x.transpose() * c / n;
    h.topRightCorner(d, 1) = cross;
    h.bottomLeftCorner(1, d) = cross.transpose();
    h(d, d) = c.sum() / n;
    if (!intercept) {
      h.row(d).setZero();
      h.col(d).setZero();
      h(d, d) = 1.0;
    }
    return h;
  }

  Vector project(Vector z) const {
    if (!intercept) z[dim()] = 0.0;
    const double norm = z.norm();
    if (norm > radius) z *= radius / norm;
    return z;
  }
};

Vector pack(const LinearClassifier& c, Eigen::Index d) {
  Vector z = Vector::Zero(d + 1);
  if (c.w.size() == d) {
    z.head(d) = c.w;
    z[d] = c.bias;
  }
  return z;
}

void check_training_inputs(const LabeledSet& data, const Vector& weights) {
  if (data.size() == 0) throw std::invalid_argument("training set is empty");
  if (data.y.size() != data.size()) throw std::invalid_argument("label count does not match samples");
  if (weights.size() != data.size()) {
    throw std::invalid_argument("weight count " + std::to_string(weights.size()) +
                                " does not match sample count " + std::to_string(data.size()));
  }
  if (!weights.allFinite()) throw std::invalid_argument("non-finite importance weight");
  if ((weights.array() < 0.0).any()) throw std::invalid_argument("negative importance weight");
  if (!(weights.sum() > 0.0)) throw std::invalid_argument("all importance weights are zero");
}

}  // namespace

FlattenSpec FlattenSpec::power(double gamma) {
  FlattenSpec f{Kind::Power, gamma};
  f.validate();
  return f;
}

FlattenSpec FlattenSpec::mixture(double alpha) {
  FlattenSpec f{Kind::Mixture, alpha};
  f.validate();
  return f;
}

void FlattenSpec::validate() const {
  if (kind == Kind::Identity) return;
  if (!(param > 0.0 && param <= 1.0)) {
    throw std::invalid_argument("flattening parameter must lie in (0, 1], got " +
                                std::to_string(param));
  }
}

FlattenSpec parse_flatten(std::string_view text) {
  if (text == "identity" || text == "none") return FlattenSpec::identity();
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw std::invalid_argument("flatten must be identity, power:<g> or mixture:<a>");
  }
  const std::string head(text.substr(0, colon));
  const std::string tail(text.substr(colon + 1));
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(tail, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != tail.size()) {
    throw std::invalid_argument("bad flattening parameter: " + tail);
  }
  if (head == "power") return FlattenSpec::power(value);
  if (head == "mixture") return FlattenSpec::mixture(value);
  throw std::invalid_argument("unknown flattening kind: " + head);
}

std::string to_string(const FlattenSpec& f) {
  char buf[64];
  switch (f.kind) {
    case FlattenSpec::Kind::Identity: return "identity";
    case FlattenSpec::Kind::Power: std::snprintf(buf, sizeof buf, "power:%.9g", f.param); break;
    case FlattenSpec::Kind::Mixture: std::snprintf(buf, sizeof buf, "mixture:%.9g", f.param); break;
  }
  return buf;
}

double flatten_weight(const FlattenSpec& f, double r) {
  if (!(r >= 0.0)) throw std::invalid_argument("flatten_weight needs r >= 0");
  switch (f.kind) {
    case FlattenSpec::Kind::Identity: return r;
    case FlattenSpec::Kind::Power: return std::pow(r, f.param);
    case FlattenSpec::Kind::Mixture: return r / (f.param + (1.0 - f.param) * r);
  }
  return r;
}

PreparedWeights prepare_weights(const RatioModel& model, const FlattenSpec& f,
                                const Matrix& offline, double cap) {
  if (!(cap >= 1.0)) throw std::invalid_argument("weight cap must be at least 1");
  f.validate();
  const Vector raw = ratio_eval_all(model, offline);
  PreparedWeights out;
  out.weights.resize(raw.size());
  for (Eigen::Index i = 0; i < raw.size(); ++i) {
    double r = raw[i];
    if (!(r > 0.0)) {
      ++out.n_floored;
      r = 0.0;
    }
    double w = flatten_weight(f, r);
    if (w > cap) {
      ++out.n_capped;
      w = cap;
    }
    out.weights[i] = w;
  }
  return out;
}

double iwerm_objective(const LabeledSet& data, const Vector& weights, const LinearClassifier& c) {
  check_training_inputs(data, weights);
  if (c.w.size() != data.dim()) throw std::invalid_argument("classifier dimension mismatch");
  const Vector margin =
      data.y.cast<double>().cwiseProduct(data.x * c.w + Vector::Constant(data.size(), c.bias));
  double f = 0.0;
  for (Eigen::Index i = 0; i < margin.size(); ++i) f += weights[i] * softplus(-margin[i]);
  return f / static_cast<double>(data.size());
}

LinearClassifier iwerm_train(const LabeledSet& data, const Vector& weights,
                             const LinearClassifier* warm, const SolverConfig& cfg) {
  check_training_inputs(data, weights);
  check_labels(data.y);
  if (cfg.max_iter < 1) throw std::invalid_argument("max_iter must be at least 1");
  const Eigen::Index d = data.dim();
  const double radius = cfg.radius > 0.0 ? cfg.radius : 10.0 * static_cast<double>(d);

  Problem prob{data.x, data.y.cast<double>(), weights * (weights.size() / weights.sum()),
               cfg.fit_intercept, radius};

  Vector z = prob.project(warm ? pack(*warm, d) : Vector::Zero(d + 1));
  Vector g;
  double f = prob.value_and_grad(z, &g);
  std::deque<double> history{f};
  double step = 1.0;
  {
    const double gmax = g.cwiseAbs().maxCoeff();
    if (gmax > 0.0) step = std::clamp(1.0 / gmax, kMinStep, kMaxStep);
  }

  for (int it = 0; it < cfg.max_iter; ++it) {
    if ((prob.project(z - g) - z).norm() <= cfg.tol) break;

    // Newton direction when the full step stays feasible, else a spectral
    // projected-gradient direction.
    Matrix hess = prob.hessian(z);
    hess.diagonal().array() += 1e-12;
    Vector dir = -hess.ldlt().solve(g);
    bool newton = dir.allFinite() && g.dot(dir) < 0.0 && (z + dir).norm() <= radius;
    if (!newton) dir = prob.project(z - step * g) - z;
    const double slope = g.dot(dir);
    if (!(slope < 0.0)) break;
    const double f_ref = newton ? f : *std::max_element(history.begin(), history.end());

    double lambda = 1.0;
    Vector z_new = z + dir;
    Vector g_new;
    double f_new = prob.value_and_grad(z_new, &g_new);
    int halvings = 0;
    while (!(f_new <= f_ref + kArmijo * lambda * slope) && halvings < kMaxHalvings) {
      lambda *= 0.5;
      ++halvings;
      z_new = z + lambda * dir;
      f_new = prob.value_and_grad(z_new, &g_new);
    }
    if (!(f_new <= f_ref + kArmijo * lambda * slope)) break;

    const Vector s = z_new - z;
    const Vector y = g_new - g;
    const double sy = s.dot(y);
    step = sy > 0.0 ? std::clamp(s.squaredNorm() / sy, kMinStep, kMaxStep) : kMaxStep;

    z = std::move(z_new);
    g = std::move(g_new);
    f = f_new;
    history.push_back(f);
    if (history.size() > kMemory) history.pop_front();
  }

  LinearClassifier out;
  out.w = z.head(d);
  out.bias = z[d];
  out.trained = true;
  return out;
}

LinearClassifier fix_train(const LabeledSet& data, const SolverConfig& cfg) {
  return iwerm_train(data, Vector::Ones(data.size()), nullptr, cfg);
}

int predict(const LinearClassifier& c, const Vector& x) {
  if (!c.trained) throw std::logic_error("predict called on an untrained classifier");
  if (x.size() != c.w.size()) throw std::invalid_argument("feature dimension mismatch");
  return c.w.dot(x) + c.bias >= 0.0 ? 1 : -1;
}

Labels predict_all(const LinearClassifier& c, const Matrix& xs) {
  if (!c.trained) throw std::logic_error("predict called on an untrained classifier");
  if (xs.cols() != c.w.size()) throw std::invalid_argument("feature dimension mismatch");
  const Vector score = xs * c.w;
  Labels out(xs.rows());
  for (Eigen::Index i = 0; i < xs.rows(); ++i) out[i] = score[i] + c.bias >= 0.0 ? 1 : -1;
  return out;
}

double error_rate(const LinearClassifier& c, const Matrix& xs, const Labels& ys) {
  if (ys.size() != xs.rows()) throw std::invalid_argument("label count does not match samples");
  if (xs.rows() == 0) throw std::invalid_argument("error_rate needs a nonempty batch");
  const Labels pred = predict_all(c, xs);
  return static_cast<double>((pred.array() != ys.array()).count()) /
         static_cast<double>(xs.rows());
}

}  // namespace covshift
