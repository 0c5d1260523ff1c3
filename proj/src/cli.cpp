#include "covshift/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "covshift/checks.hpp"
#include "covshift/harness.hpp"

namespace covshift {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitCheckFailed = 2;

// Flag name -> config key. Values are kept as text and go through
// apply_setting, so flags and config files share one parser.
struct FlagSpec {
  const char* flag;
  const char* key;
  const char* help;
};

const FlagSpec kSyntheticFlags[] = {
    {"--pattern", "pattern", "lin | squ | sin | ber | constant"},
    {"--M", "period", "period for squ/sin"},
    {"--keep-prob", "keep_prob", "ber: probability of keeping alpha"},
    {"--alpha0", "alpha0", "offline mixture coefficient"},
    {"--constant-alpha", "constant_alpha", "alpha for the constant pattern"},
    {"--cov-scale", "cov_scale", "component covariance c I"},
    {"--clip-radius", "clip_radius", "rejection radius for features"},
    {"--T", "horizon", "number of rounds"},
    {"--d", "dim", "feature dimension"},
    {"--prop2-mc", "prop2_mc", "oracle sample size, 0 disables"},
};

const FlagSpec kCsvFlags[] = {
    {"--offline", "offline_csv", "labeled offline CSV"},
    {"--stream", "stream_csv", "stream CSV with a leading round column"},
    {"--rescale", "rescale_to", "rescale features to this max norm"},
};

const FlagSpec kCommonFlags[] = {
    {"--Nt", "n_online", "points per round"},
    {"--N0", "n_offline", "offline sample size"},
    {"--S", "radius", "parameter ball radius"},
    {"--R", "feature_bound", "feature norm bound"},
    {"--gamma", "gamma_ons", "ONS step parameter"},
    {"--lambda", "lambda_ons", "ONS regularizer"},
    {"--cap", "ratio_cap", "importance weight cap"},
    {"--divergence", "divergence", "ls | lr | kl"},
    {"--min-len", "min_len", "shortest covering interval"},
    {"--flatten", "flatten", "identity | power:g | mixture:a"},
    {"--seeds", "seeds", "comma list or a..b"},
    {"--methods", "methods", "comma list of accous,olre,fix,ulsif,kliep"},
    {"--heatmap-window", "heatmap_window", "rounds per heatmap row"},
    {"--out", "out_dir", "output directory"},
};

struct RunArgs {
  std::string config_file;
  std::map<std::string, std::string> values;  // config key -> text
  std::vector<std::string> extra;             // key=value pairs from --set
};

void add_flags(CLI::App& app, RunArgs& args, const FlagSpec* begin, const FlagSpec* end) {
  for (const FlagSpec* f = begin; f != end; ++f) {
    const std::string key = f->key;
    app.add_option_function<std::string>(
        f->flag, [&args, key](const std::string& v) { args.values[key] = v; }, f->help);
  }
}

ExperimentConfig build_config(const RunArgs& args, DataSource source) {
  ExperimentConfig cfg = synthetic_defaults();
  cfg.source = source;
  if (!args.config_file.empty()) {
    for (const auto& [k, v] : read_config_file(args.config_file)) apply_setting(cfg, k, v);
  }
  for (const std::string& kv : args.extra) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got " + kv);
    apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  for (const auto& [k, v] : args.values) apply_setting(cfg, k, v);
  cfg.source = source;
  return cfg;
}

void print_summary(const RunResult& r) {
  for (std::size_t m = 0; m < kMethodCount; ++m) {
    if (!r.aggregate[m]) continue;
    std::printf("%-7s %8.3f +- %.3f  (%d seeds)\n", std::string(to_string(kAllMethods[m])).c_str(),
                100.0 * r.aggregate[m]->mean, 100.0 * r.aggregate[m]->std, r.aggregate[m]->seeds);
  }
  for (const SeedRun& s : r.seeds) {
    if (!s.summary.ok) {
      std::fprintf(stderr, "seed %llu failed: %s\n",
                   static_cast<unsigned long long>(s.summary.seed), s.summary.error.c_str());
    } else if (s.summary.prop2) {
      std::printf("seed %llu: cumulative error %.4g <= %.4g : %s\n",
                  static_cast<unsigned long long>(s.summary.seed), s.summary.prop2->lhs,
                  s.summary.prop2->rhs, s.summary.prop2->holds ? "yes" : "NO");
    }
  }
}

int do_run(const RunArgs& args, DataSource source) {
  ExperimentConfig cfg = build_config(args, source);
  const RunResult r = run_experiment(cfg);
  if (!r.config.out_dir.empty()) emit_outputs(r, r.config.out_dir);
  print_summary(r);
  if (!r.all_ok()) return kExitUsage;
  for (const SeedRun& s : r.seeds) {
    if (s.summary.prop2 && !s.summary.prop2->holds) return kExitCheckFailed;
  }
  return kExitOk;
}

int do_check(const std::string& suite, std::uint64_t seed) {
  std::vector<CheckResult> results;
  if (suite == "props") {
    results = run_props_suite(seed);
  } else if (suite == "prop2") {
    results = run_prop2_suite(seed);
  } else {
    results = run_regret_suite({seed, seed + 1, seed + 2, seed + 3, seed + 4});
  }
  bool ok = true;
  for (const CheckResult& c : results) {
    std::printf("%s %s: %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
    ok = ok && c.passed;
  }
  return ok ? kExitOk : kExitCheckFailed;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Online density-ratio estimation under continuous covariate shift"};
  app.require_subcommand(1);

  RunArgs syn_args;
  CLI::App* syn = app.add_subcommand("run-synthetic", "run on the Gaussian-mixture stream");
  syn->add_option("--config", syn_args.config_file, "key=value config file")->check(CLI::ExistingFile);
  syn->add_option("--set", syn_args.extra, "extra key=value settings");
  add_flags(*syn, syn_args, std::begin(kSyntheticFlags), std::end(kSyntheticFlags));
  add_flags(*syn, syn_args, std::begin(kCommonFlags), std::end(kCommonFlags));

  RunArgs csv_args;
  CLI::App* csv = app.add_subcommand("run-csv", "run on a recorded offline set and stream");
  csv->add_option("--config", csv_args.config_file, "key=value config file")->check(CLI::ExistingFile);
  csv->add_option("--set", csv_args.extra, "extra key=value settings");
  add_flags(*csv, csv_args, std::begin(kCsvFlags), std::end(kCsvFlags));
  add_flags(*csv, csv_args, std::begin(kCommonFlags), std::end(kCommonFlags));

  std::string suite = "props";
  std::uint64_t seed = 1;
  CLI::App* chk = app.add_subcommand("check", "run an invariant suite");
  chk->add_option("--suite", suite, "props | prop2 | regret")
      ->check(CLI::IsMember({"props", "prop2", "regret"}));
  chk->add_option("--seed", seed, "base seed");

  app.add_flag_callback("--version", [] {
    std::printf("covshift %s\n", build_id());
    throw CLI::Success();
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*syn) return do_run(syn_args, DataSource::Synthetic);
    if (*csv) return do_run(csv_args, DataSource::Csv);
    return do_check(suite, seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
}

}  // namespace covshift
