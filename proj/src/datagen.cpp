#include "covshift/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>

namespace covshift {

namespace {

constexpr long kMaxRejectionsPerPoint = 100000;

double log_sum_exp(double a, double b) {
  if (a == -INFINITY) return b;
  if (b == -INFINITY) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

double log_or_neg_inf(double v) { return v > 0.0 ? std::log(v) : -INFINITY; }

void check_alpha(double a, const char* what) {
  if (!(a >= 0.0 && a <= 1.0)) {
    throw std::invalid_argument(std::string(what) + " must lie in [0, 1], got " +
                                std::to_string(a));
  }
}

Vector draw_point(const GaussianMixtureSpec& g, const Vector& mean, Rng& rng,
                  std::normal_distribution<double>& normal, SampleStats* stats) {
  const double sd = std::sqrt(g.cov_scale);
  Vector x(mean.size());
  for (long attempt = 0; attempt < kMaxRejectionsPerPoint; ++attempt) {
    for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = mean[j] + sd * normal(rng);
    if (x.norm() <= g.clip_radius) return x;
    if (stats) ++stats->rejected;
  }
  throw std::runtime_error("rejection sampling failed: clip radius too small for the mixture");
}

// ---- CSV ----

std::vector<std::string_view> split_row(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t pos = 0;
  while (true) {
    const std::size_t comma = line.find(',', pos);
    std::string_view cell = line.substr(pos, comma == std::string_view::npos ? line.npos : comma - pos);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) {
      cell.remove_suffix(1);
    }
    cells.push_back(cell);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return cells;
}

double parse_number(std::string_view cell, std::size_t line, const std::string& file) {
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size()) {
    throw ParseError(file + ":" + std::to_string(line) + ": non-numeric cell '" +
                         std::string(cell) + "'",
                     line);
  }
  if (!std::isfinite(v)) {
    throw ParseError(file + ":" + std::to_string(line) + ": non-finite value '" +
                         std::string(cell) + "'",
                     line);
  }
  return v;
}

int parse_label(std::string_view cell, std::size_t line, const std::string& file) {
  const double v = parse_number(cell, line, file);
  if (v != 1.0 && v != -1.0) {
    throw ParseError(file + ":" + std::to_string(line) + ": label must be -1 or +1", line);
  }
  return static_cast<int>(v);
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string_view>> rows;
  std::vector<std::size_t> line_numbers;
  std::string text;
};

Table read_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Table t;
  t.text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  const std::string file = path.string();

  std::string_view all(t.text);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool have_header = false;
  while (pos < all.size()) {
    std::size_t nl = all.find('\n', pos);
    if (nl == std::string_view::npos) nl = all.size();
    std::string_view line = all.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    auto cells = split_row(line);
    if (!have_header) {
      for (auto c : cells) t.header.emplace_back(c);
      have_header = true;
      continue;
    }
    if (cells.size() != t.header.size()) {
      throw ParseError(file + ":" + std::to_string(line_no) + ": expected " +
                           std::to_string(t.header.size()) + " cells, found " +
                           std::to_string(cells.size()),
                       line_no);
    }
    t.rows.push_back(std::move(cells));
    t.line_numbers.push_back(line_no);
  }
  if (!have_header) throw ParseError(file + ": missing header row", 0);
  return t;
}

void check_feature_header(const std::vector<std::string>& cols, std::size_t first,
                          const std::string& file) {
  for (std::size_t j = first; j + 1 < cols.size(); ++j) {
    const std::string expect = "x" + std::to_string(j - first + 1);
    if (cols[j] != expect) {
      throw ParseError(file + ": header column " + std::to_string(j + 1) + " is '" + cols[j] +
                           "', expected '" + expect + "'",
                       1);
    }
  }
  if (cols.empty() || cols.back() != "y") {
    throw ParseError(file + ": last header column must be 'y'", 1);
  }
}

}  // namespace

GaussianMixtureSpec GaussianMixtureSpec::standard(int dim, double cov_scale) {
  if (dim < 1) throw std::invalid_argument("dimension must be positive");
  GaussianMixtureSpec g;
  g.mean1 = Vector::Ones(dim);
  g.mean2 = -Vector::Ones(dim);
  g.cov_scale = cov_scale;
  g.clip_radius = default_clip_radius(g.mean1, g.mean2, cov_scale);
  g.validate();
  return g;
}

void GaussianMixtureSpec::validate() const {
  if (mean1.size() == 0 || mean1.size() != mean2.size()) {
    throw std::invalid_argument("component means must be nonempty and of equal dimension");
  }
  if (!(cov_scale > 0.0)) throw std::invalid_argument("covariance scale must be positive");
  if (!(clip_radius > 0.0)) throw std::invalid_argument("clip radius must be positive");
}

double default_clip_radius(const Vector& mean1, const Vector& mean2, double cov_scale) {
  const double d = static_cast<double>(mean1.size());
  return std::max(mean1.norm(), mean2.norm()) + 6.0 * std::sqrt(cov_scale) * std::sqrt(d);
}

std::string_view to_string(ShiftPattern p) {
  switch (p) {
    case ShiftPattern::Lin: return "lin";
    case ShiftPattern::Squ: return "squ";
    case ShiftPattern::Sin: return "sin";
    case ShiftPattern::Ber: return "ber";
    case ShiftPattern::Constant: return "constant";
  }
  return "?";
}

ShiftPattern parse_shift_pattern(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "lin") return ShiftPattern::Lin;
  if (lower == "squ") return ShiftPattern::Squ;
  if (lower == "sin") return ShiftPattern::Sin;
  if (lower == "ber") return ShiftPattern::Ber;
  if (lower == "constant" || lower == "const") return ShiftPattern::Constant;
  throw std::invalid_argument("unknown shift pattern: " + std::string(name));
}

ShiftSchedule make_schedule(ShiftPattern pattern, int horizon, const ScheduleOptions& opts,
                            const SeedSpec& seed) {
  if (horizon < 1) throw std::invalid_argument("horizon must be positive");
  ShiftSchedule s;
  s.pattern = pattern;
  s.horizon = horizon;
  s.period = opts.period.value_or(static_cast<int>(std::ceil(std::sqrt(static_cast<double>(horizon)))));
  s.keep_prob = opts.keep_prob.value_or(1.0 - 1.0 / std::sqrt(static_cast<double>(horizon)));
  s.alpha0 = opts.alpha0;
  s.constant = opts.constant.value_or(opts.alpha0);
  if (s.period < 1) throw std::invalid_argument("period M must be at least 1");
  check_alpha(s.keep_prob, "keep probability");
  check_alpha(s.alpha0, "alpha0");
  check_alpha(s.constant, "constant alpha");

  if (pattern == ShiftPattern::Ber) {
    Rng rng = derive_stream(seed, "ber-schedule");
    std::bernoulli_distribution keep(s.keep_prob);
    s.path.resize(horizon);
    s.path[0] = 0.0;
    for (int t = 1; t < horizon; ++t) s.path[t] = keep(rng) ? s.path[t - 1] : 1.0 - s.path[t - 1];
  }
  return s;
}

double alpha_at(const ShiftSchedule& s, int t) {
  if (t < 1 || t > s.horizon) {
    throw std::out_of_range("round " + std::to_string(t) + " outside [1, " +
                            std::to_string(s.horizon) + "]");
  }
  switch (s.pattern) {
    case ShiftPattern::Lin:
      return static_cast<double>(t) / static_cast<double>(s.horizon);
    case ShiftPattern::Squ: {
      const int block = (t + s.period - 1) / s.period;
      return block % 2 == 1 ? 1.0 : 0.0;
    }
    case ShiftPattern::Sin: {
      const double v = std::sin(static_cast<double>(t % s.period) * std::numbers::pi /
                                static_cast<double>(s.period));
      return std::clamp(v, 0.0, 1.0);
    }
    case ShiftPattern::Ber:
      if (static_cast<int>(s.path.size()) != s.horizon) {
        throw std::logic_error("Ber schedule was not materialized");
      }
      return s.path[t - 1];
    case ShiftPattern::Constant:
      return s.constant;
  }
  return 0.0;
}

LabeledSet sample_batch(const GaussianMixtureSpec& g, double alpha, int n, Rng& rng,
                        SampleStats* stats) {
  g.validate();
  check_alpha(alpha, "mixture coefficient");
  if (n < 1) throw std::invalid_argument("batch size must be at least 1");
  const int d = g.dim();
  LabeledSet out;
  out.x.resize(n, d);
  out.y.resize(n);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    const bool second = unif(rng) < alpha;
    const Vector x = draw_point(g, second ? g.mean2 : g.mean1, rng, normal, stats);
    out.x.row(i) = x.transpose();
    out.y[i] = x.norm() <= static_cast<double>(d) ? 1 : -1;
  }
  return out;
}

Matrix sample_component(const GaussianMixtureSpec& g, int component, int n, Rng& rng) {
  g.validate();
  if (component != 1 && component != 2) throw std::invalid_argument("component must be 1 or 2");
  if (n < 1) throw std::invalid_argument("sample size must be at least 1");
  Matrix out(n, g.dim());
  std::normal_distribution<double> normal(0.0, 1.0);
  const Vector& mean = component == 1 ? g.mean1 : g.mean2;
  for (int i = 0; i < n; ++i) out.row(i) = draw_point(g, mean, rng, normal, nullptr).transpose();
  return out;
}

double log_component_quotient(const GaussianMixtureSpec& g, const Vector& x) {
  return ((x - g.mean1).squaredNorm() - (x - g.mean2).squaredNorm()) / (2.0 * g.cov_scale);
}

double true_ratio_from_quotient(double log_q, double alpha_t, double alpha0) {
  check_alpha(alpha_t, "alpha_t");
  check_alpha(alpha0, "alpha0");
  const double num = log_sum_exp(log_or_neg_inf(1.0 - alpha_t), log_or_neg_inf(alpha_t) + log_q);
  const double den = log_sum_exp(log_or_neg_inf(1.0 - alpha0), log_or_neg_inf(alpha0) + log_q);
  return std::exp(num - den);
}

double true_ratio(const GaussianMixtureSpec& g, double alpha_t, double alpha0, const Vector& x) {
  return true_ratio_from_quotient(log_component_quotient(g, x), alpha_t, alpha0);
}

VariationEstimate variation_V(const ShiftSchedule& s, const GaussianMixtureSpec& g, int n_mc,
                              Rng& rng) {
  if (n_mc < 1) throw std::invalid_argument("n_mc must be at least 1");
  VariationEstimate v;
  for (int t = 2; t <= s.horizon; ++t) v.alpha_path += std::abs(alpha_at(s, t) - alpha_at(s, t - 1));
  // ||phi1 - phi2||_1 = 2 (1 - E_phi1[min(1, phi2/phi1)]); the integrand is bounded.
  const Matrix draws = sample_component(g, 1, n_mc, rng);
  double overlap = 0.0;
  for (Eigen::Index i = 0; i < draws.rows(); ++i) {
    overlap += std::min(1.0, std::exp(log_component_quotient(g, draws.row(i).transpose())));
  }
  v.l1_factor = 2.0 * (1.0 - overlap / static_cast<double>(n_mc));
  v.value = v.alpha_path * v.l1_factor;
  return v;
}

double component_l1_distance(const GaussianMixtureSpec& g) {
  const double delta = (g.mean1 - g.mean2).norm();
  const double z = delta / (2.0 * std::sqrt(g.cov_scale));
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  return 2.0 * (2.0 * cdf - 1.0);
}

CsvStream load_csv_stream(const std::filesystem::path& offline_path,
                          const std::filesystem::path& stream_path,
                          std::optional<double> rescale_to) {
  const Table off = read_table(offline_path);
  const Table str = read_table(stream_path);
  const std::string off_name = offline_path.string();
  const std::string str_name = stream_path.string();

  if (off.header.size() < 2) throw ParseError(off_name + ": need at least one feature and y", 1);
  check_feature_header(off.header, 0, off_name);
  if (str.header.empty() || str.header.front() != "round") {
    throw ParseError(str_name + ": missing round column (first header must be 'round')", 1);
  }
  check_feature_header(str.header, 1, str_name);
  const Eigen::Index d = static_cast<Eigen::Index>(off.header.size()) - 1;
  if (static_cast<Eigen::Index>(str.header.size()) - 2 != d) {
    throw ParseError(str_name + ": feature count differs from the offline file", 1);
  }
  if (off.rows.empty()) throw ParseError(off_name + ": no data rows", 0);
  if (str.rows.empty()) throw ParseError(str_name + ": no data rows", 0);

  CsvStream out;
  out.offline.x.resize(static_cast<Eigen::Index>(off.rows.size()), d);
  out.offline.y.resize(static_cast<Eigen::Index>(off.rows.size()));
  for (std::size_t i = 0; i < off.rows.size(); ++i) {
    for (Eigen::Index j = 0; j < d; ++j) {
      out.offline.x(i, j) = parse_number(off.rows[i][j], off.line_numbers[i], off_name);
    }
    out.offline.y[i] = parse_label(off.rows[i][d], off.line_numbers[i], off_name);
  }

  // Group contiguous stream rows by round.
  int current = 0;
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < str.rows.size(); ++i) {
    const std::size_t ln = str.line_numbers[i];
    const double rv = parse_number(str.rows[i][0], ln, str_name);
    if (rv != std::floor(rv) || rv < 1.0 || rv > 1e9) {
      throw ParseError(str_name + ":" + std::to_string(ln) + ": round must be a positive integer", ln);
    }
    const int r = static_cast<int>(rv);
    if (r != current) {
      if (r != current + 1) {
        throw ParseError(str_name + ":" + std::to_string(ln) + ": round " + std::to_string(r) +
                             " follows round " + std::to_string(current) +
                             " (rounds must start at 1 and be contiguous)",
                         ln);
      }
      current = r;
      starts.push_back(i);
    }
  }
  starts.push_back(str.rows.size());
  for (std::size_t b = 0; b + 1 < starts.size(); ++b) {
    const std::size_t lo = starts[b];
    const std::size_t n = starts[b + 1] - lo;
    UnlabeledBatch batch;
    batch.round = static_cast<int>(b) + 1;
    batch.xs.resize(static_cast<Eigen::Index>(n), d);
    Labels ys(static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < n; ++k) {
      const auto& row = str.rows[lo + k];
      const std::size_t ln = str.line_numbers[lo + k];
      for (Eigen::Index j = 0; j < d; ++j) batch.xs(k, j) = parse_number(row[j + 1], ln, str_name);
      ys[k] = parse_label(row[d + 1], ln, str_name);
    }
    batch.hidden_labels = std::move(ys);
    out.batches.push_back(std::move(batch));
  }

  double max_norm = out.offline.x.rowwise().norm().maxCoeff();
  for (const auto& b : out.batches) max_norm = std::max(max_norm, b.xs.rowwise().norm().maxCoeff());
  if (rescale_to) {
    if (!(*rescale_to > 0.0)) throw std::invalid_argument("rescale target must be positive");
    if (!(max_norm > 0.0)) throw std::invalid_argument("cannot rescale all-zero features");
    out.scale = *rescale_to / max_norm;
    out.offline.x *= out.scale;
    for (auto& b : out.batches) b.xs *= out.scale;
    out.feature_bound = *rescale_to;
  } else {
    out.feature_bound = max_norm;
  }
  return out;
}

}  // namespace covshift
