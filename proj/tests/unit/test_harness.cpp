#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "covshift/harness.hpp"

using namespace covshift;

namespace {

ExperimentConfig small(ShiftPattern p, int horizon) {
  ExperimentConfig cfg = synthetic_defaults();
  cfg.pattern = p;
  cfg.hyper.horizon = horizon;
  cfg.hyper.n_offline = 200;
  cfg.seeds = {1};
  cfg.prop2_mc = 500;
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("method names") {
  for (Method m : kAllMethods) CHECK(parse_method(to_string(m)) == m);
  CHECK_THROWS(parse_method("dann"));
}

TEST_CASE("weight buckets") {
  CHECK(weight_buckets(100, 4) == std::vector<int>{4, 8, 16, 32, 64});
  CHECK(weight_buckets(10000, 4).back() == 8192);
  CHECK(weight_buckets(8, 1) == std::vector<int>{1, 2, 4, 8});
}

TEST_CASE("rounds CSV layout") {
  const RunResult r = run_experiment(small(ShiftPattern::Squ, 3));
  REQUIRE(r.all_ok());
  const auto rows = lines(rounds_csv(r, r.seeds.front()));
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].rfind("t,alpha,err_accous,err_olre,err_fix,err_ulsif,err_kliep,loss_hat,est_err,clip_count", 0) == 0);
  CHECK(rows[1].rfind("1,", 0) == 0);
  // T = 3 is shorter than the shortest interval, so no weight columns.
  CHECK(r.buckets.empty());
  CHECK(rows[0].find(",w_") == std::string::npos);

  ExperimentConfig cfg = small(ShiftPattern::Squ, 20);
  cfg.prop2_mc = 0;
  const RunResult longer = run_experiment(cfg);
  const std::string header = lines(rounds_csv(longer, longer.seeds.front()))[0];
  CHECK(header.substr(header.find(",w_")) == ",w_4,w_8,w_16");
}

TEST_CASE("errors and masses are well formed") {
  const RunResult r = run_experiment(small(ShiftPattern::Sin, 200));
  REQUIRE(r.all_ok());
  for (const RoundRecord& rec : r.seeds.front().records) {
    for (const auto& e : rec.err) {
      REQUIRE(e.has_value());
      CHECK(*e >= 0.0);
      CHECK(*e <= 1.0);
    }
    double mass = 0.0;
    for (double v : rec.bucket_mass) mass += v;
    if (rec.t < 4) {
      CHECK(mass == 0.0);
    } else {
      CHECK(std::abs(mass - 1.0) <= 1e-9);
    }
  }
  for (const HeatmapRow& row : weight_heatmap(r.seeds.front().records, 15)) {
    double s = 0.0;
    for (double v : row.mass) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-9);
  }
}

TEST_CASE("first round uses uniform weights") {
  ExperimentConfig cfg = small(ShiftPattern::Lin, 10);
  cfg.min_len = 1;
  const RunResult r = run_experiment(cfg);
  REQUIRE(r.all_ok());
  CHECK(r.seeds.front().records.front().theta_hat == Vector::Zero(5));
}

TEST_CASE("outputs are byte-identical across executions") {
  ExperimentConfig cfg = small(ShiftPattern::Ber, 120);
  cfg.seeds = {3, 4};
  const auto base = std::filesystem::temp_directory_path() / "covshift_det";
  std::filesystem::remove_all(base);
  emit_outputs(run_experiment(cfg), base / "a");
  emit_outputs(run_experiment(cfg), base / "b");
  for (const char* f : {"rounds_3.csv", "rounds_4.csv", "heatmap.csv"}) {
    CHECK(slurp(base / "a" / f) == slurp(base / "b" / f));
  }
  auto strip = [](std::string text) {
    auto j = nlohmann::ordered_json::parse(text);
    j.erase("wall_time");
    for (auto& s : j["seeds"]) s.erase("wall_time");
    return j.dump();
  };
  CHECK(strip(slurp(base / "a" / "summary.json")) == strip(slurp(base / "b" / "summary.json")));
}

TEST_CASE("summary config round-trips") {
  const RunResult r = run_experiment(small(ShiftPattern::Lin, 5));
  const auto j = nlohmann::json::parse(summary_json(r));
  const ExperimentConfig back = config_from_json(j.at("config").dump());
  CHECK(config_to_json(back) == config_to_json(r.config));
  CHECK(j.at("config").at("hyper").at("horizon") == 5);
}

TEST_CASE("cumulative error bound check") {
  const DivergenceSpec spec = DivergenceSpec::make(DivergenceKind::LR, 10.0);
  std::vector<RoundRecord> recs(5);
  for (int i = 0; i < 5; ++i) {
    recs[i].t = i + 1;
    recs[i].oracle_abs_err = 0.0;
    recs[i].oracle_gap = 0.0;
  }
  const Prop2Check zero = check_prop2(recs, spec);
  CHECK(zero.lhs == 0.0);
  CHECK(zero.holds);

  for (auto& r : recs) {
    r.oracle_abs_err = 0.2;
    r.oracle_gap = 0.01;
  }
  const Prop2Check c = check_prop2(recs, spec);
  CHECK(c.lhs == doctest::Approx(1.0));
  CHECK(c.rhs == doctest::Approx(std::sqrt(2.0 * 5.0 / spec.strong_convexity * 0.05)));
  CHECK_THROWS_AS(check_prop2(recs, spec, 2.0 * spec.strong_convexity), std::invalid_argument);
  CHECK_NOTHROW(check_prop2(recs, spec, 0.5 * spec.strong_convexity));
}

TEST_CASE("the bound holds on a short synthetic run") {
  const RunResult r = run_experiment(small(ShiftPattern::Squ, 300));
  REQUIRE(r.all_ok());
  const SeedSummary& s = r.seeds.front().summary;
  REQUIRE(s.prop2.has_value());
  CHECK(s.prop2->holds);
  REQUIRE(s.max_true_ratio.has_value());
  CHECK(std::isfinite(*s.max_true_ratio));
}

TEST_CASE("no shift keeps FIX flat") {
  ExperimentConfig cfg = small(ShiftPattern::Constant, 2000);
  cfg.methods = {Method::Fix};
  cfg.prop2_mc = 0;
  cfg.hyper.n_online = 5;
  const RunResult r = run_experiment(cfg);
  REQUIRE(r.all_ok());
  const auto& recs = r.seeds.front().records;
  double first = 0.0, second = 0.0;
  for (int i = 0; i < 1000; ++i) first += *recs[i].err[2];
  for (int i = 1000; i < 2000; ++i) second += *recs[i].err[2];
  CHECK(std::abs(first - second) / 1000.0 < 0.04);
  CHECK(!recs[0].err[0].has_value());
}

TEST_CASE("blind runs never see stream labels") {
  ExperimentConfig cfg = small(ShiftPattern::Lin, 20);
  cfg.prop2_mc = 0;
  const RunResult seen = run_experiment(cfg);
  const RunResult blind = run_experiment(cfg, RunOptions{true});
  REQUIRE(blind.all_ok());
  // Training paths are identical; only the error columns disappear.
  for (std::size_t i = 0; i < 20; ++i) {
    const RoundRecord& a = seen.seeds.front().records[i];
    const RoundRecord& b = blind.seeds.front().records[i];
    CHECK(a.theta_hat == b.theta_hat);
    for (std::size_t m = 0; m < kMethodCount; ++m) CHECK(a.classifier[m] == b.classifier[m]);
    CHECK(!b.err[0].has_value());
  }
}

TEST_CASE("settings and config files") {
  ExperimentConfig cfg = synthetic_defaults();
  apply_setting(cfg, "T", "500");
  apply_setting(cfg, "pattern", "sin");
  apply_setting(cfg, "methods", "accous,fix");
  apply_setting(cfg, "seeds", "2..3,4");
  apply_setting(cfg, "gamma", "0.5");
  CHECK(cfg.hyper.horizon == 500);
  CHECK(cfg.pattern == ShiftPattern::Sin);
  CHECK(cfg.methods == std::vector<Method>{Method::Accous, Method::Fix});
  CHECK(cfg.seeds == std::vector<std::uint64_t>{2, 3, 4});
  CHECK(cfg.hyper.gamma_ons == 0.5);
  CHECK_THROWS(apply_setting(cfg, "no_such_key", "1"));
  CHECK_THROWS(apply_setting(cfg, "T", "ten"));
  CHECK_THROWS(apply_setting(cfg, "seeds", "5..2"));

  const auto p = std::filesystem::temp_directory_path() / "covshift_cfg.txt";
  std::ofstream(p) << "# comment\nT = 64\nNt=5  # trailing\n\n";
  const auto kv = read_config_file(p);
  REQUIRE(kv.size() == 2);
  CHECK(kv[0] == std::pair<std::string, std::string>{"T", "64"});
  CHECK(kv[1].second == "5");
}

TEST_CASE("CSV runs") {
  const auto dir = std::filesystem::temp_directory_path();
  const auto off = dir / "covshift_h_off.csv";
  const auto str = dir / "covshift_h_str.csv";
  {
    std::ofstream o(off);
    o << "x1,x2,y\n";
    for (int i = 0; i < 40; ++i) o << (i % 7) * 0.3 - 1 << ',' << (i % 5) * 0.4 - 0.8 << ',' << (i % 3 ? 1 : -1) << '\n';
    std::ofstream s(str);
    s << "round,x1,x2,y\n";
    for (int t = 1; t <= 12; ++t) s << t << ',' << 0.1 * t - 0.5 << ",0.2," << (t % 2 ? 1 : -1) << '\n';
  }
  ExperimentConfig cfg = synthetic_defaults();
  cfg.source = DataSource::Csv;
  cfg.offline_csv = off.string();
  cfg.stream_csv = str.string();
  cfg.seeds = {1};
  const RunResult r = run_experiment(cfg);
  REQUIRE(r.all_ok());
  CHECK(r.hyper.horizon == 12);
  CHECK(r.hyper.dim == 2);
  CHECK(r.seeds.front().records.size() == 12);
  CHECK(std::isnan(r.seeds.front().records.front().alpha));
  CHECK(!r.seeds.front().summary.prop2.has_value());
}
