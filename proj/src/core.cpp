#include "covshift/core.hpp"

#include <array>

namespace covshift {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void require(bool ok, const char* message) {
  if (!ok) throw std::invalid_argument(message);
}

}  // namespace

Hyperparams validate_hyperparams(const HyperparamInput& in) {
  require(in.dim > 0, "dim must be positive");
  Hyperparams h;
  h.dim = in.dim;
  h.radius = in.radius.value_or(in.dim / 2.0);
  require(std::isfinite(h.radius) && h.radius > 0.0, "radius S must be positive");
  h.feature_bound = in.feature_bound;
  require(std::isfinite(h.feature_bound) && h.feature_bound > 0.0,
          "feature bound R must be positive");
  require(in.horizon > 0, "horizon T must be positive");
  require(in.n_offline > 0, "n_offline must be positive");
  require(in.n_online > 0, "n_online must be positive");
  require(in.ratio_cap >= 1.0, "ratio_cap must be at least 1");
  require(in.lambda_ons > 0.0, "lambda_ons must be positive");
  h.horizon = in.horizon;
  h.n_offline = in.n_offline;
  h.n_online = in.n_online;
  h.ratio_cap = in.ratio_cap;
  h.lambda_ons = in.lambda_ons;
  h.gamma_ons = in.gamma_ons.value_or(6.0 * (1.0 + h.beta()));
  require(std::isfinite(h.gamma_ons) && h.gamma_ons > 0.0,
          "gamma_ons must be positive and finite (exp(S*R) overflowed?)");
  return h;
}

Hyperparams validate_hyperparams(const Hyperparams& h) {
  HyperparamInput in;
  in.dim = h.dim;
  in.radius = h.radius;
  in.feature_bound = h.feature_bound;
  in.gamma_ons = h.gamma_ons;
  in.lambda_ons = h.lambda_ons;
  in.ratio_cap = h.ratio_cap;
  in.horizon = h.horizon;
  in.n_offline = h.n_offline;
  in.n_online = h.n_online;
  return validate_hyperparams(in);
}

void check_feature_bound(const Matrix& x, double bound, double slack) {
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double n = x.row(i).norm();
    if (!std::isfinite(n) || n > bound + slack) {
      throw std::invalid_argument("sample " + std::to_string(i) + " has norm " +
                                  std::to_string(n) + " above feature bound " +
                                  std::to_string(bound));
    }
  }
}

void check_labels(const Labels& y) {
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (y[i] != 1 && y[i] != -1) {
      throw std::invalid_argument("label at index " + std::to_string(i) +
                                  " is not -1 or +1");
    }
  }
}

Rng derive_stream(const SeedSpec& seed, std::string_view label) {
  if (label.empty()) throw std::invalid_argument("stream label must be nonempty");
  std::uint64_t state = seed.master_seed ^ fnv1a(label);
  // Mix twice so nearby master seeds land far apart.
  splitmix64(state);
  std::array<std::uint32_t, 8> words{};
  for (std::size_t i = 0; i < words.size(); i += 2) {
    const std::uint64_t v = splitmix64(state);
    words[i] = static_cast<std::uint32_t>(v);
    words[i + 1] = static_cast<std::uint32_t>(v >> 32);
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

}  // namespace covshift
