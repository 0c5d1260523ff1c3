// Runs the end-to-end criteria and prints one PASS/FAIL line per criterion.
// Exit code 0 when every criterion passes, 2 otherwise.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "covshift/checks.hpp"
#include "covshift/harness.hpp"

using namespace covshift;
namespace fs = std::filesystem;

namespace {

const std::vector<ShiftPattern> kPatterns = {ShiftPattern::Lin, ShiftPattern::Squ, ShiftPattern::Sin,
                                             ShiftPattern::Ber};

// Published Accous error (%) per pattern, for N_t = 1 and N_t = 5.
const std::map<ShiftPattern, double> kTargetNt1 = {
    {ShiftPattern::Lin, 29.98}, {ShiftPattern::Squ, 31.78}, {ShiftPattern::Sin, 30.97}, {ShiftPattern::Ber, 30.07}};
const std::map<ShiftPattern, double> kTargetNt5 = {
    {ShiftPattern::Lin, 28.06}, {ShiftPattern::Squ, 29.65}, {ShiftPattern::Sin, 29.87}, {ShiftPattern::Ber, 30.54}};

struct Line {
  int id;
  bool pass;
  std::string detail;
};

std::string fmt(double v, int prec = 2) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}

double mean_pct(const RunResult& r, Method m) {
  const auto& a = r.aggregate[static_cast<std::size_t>(m)];
  return a ? 100.0 * a->mean : std::nan("");
}

RunResult run_cell(ShiftPattern p, int nt, const std::vector<std::uint64_t>& seeds, bool all_methods,
                   const fs::path& out) {
  ExperimentConfig cfg = synthetic_defaults();
  cfg.pattern = p;
  cfg.hyper.n_online = nt;
  cfg.seeds = seeds;
  cfg.prop2_mc = 10000;
  if (!all_methods) cfg.methods = {Method::Accous};
  const auto t0 = std::chrono::steady_clock::now();
  RunResult r = run_experiment(cfg);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const fs::path dir = out / ("nt" + std::to_string(nt) + "_" + std::string(to_string(p)));
  emit_outputs(r, dir);
  std::cerr << "  " << to_string(p) << " Nt=" << nt << ": accous " << fmt(mean_pct(r, Method::Accous))
            << " (" << fmt(secs, 1) << " s) -> " << dir.string() << "\n";
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string strip_wall_time(const std::string& text) {
  auto j = nlohmann::ordered_json::parse(text);
  j.erase("wall_time");
  for (auto& s : j["seeds"]) s.erase("wall_time");
  return j.dump();
}

// Index of the bucket 2^k with 2^k <= m < 2^(k+1).
int bucket_containing(const std::vector<int>& buckets, int m) {
  for (std::size_t i = 0; i < buckets.size(); ++i) {
    if (buckets[i] <= m && m < 2 * buckets[i]) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"End-to-end acceptance run"};
  std::string out = "acceptance_runs";
  int n_seeds = 5;
  app.add_option("--out", out, "Directory for run outputs");
  app.add_option("--seeds", n_seeds, "Seeds 1..n per cell")->check(CLI::Range(1, 100));
  CLI11_PARSE(app, argc, argv);

  std::vector<std::uint64_t> seeds;
  for (int s = 1; s <= n_seeds; ++s) seeds.push_back(static_cast<std::uint64_t>(s));
  const fs::path out_dir(out);
  fs::create_directories(out_dir);

  std::cerr << "synthetic cells, N_t = 1 (all methods)\n";
  std::map<ShiftPattern, RunResult> nt1, nt5;
  for (ShiftPattern p : kPatterns) nt1.emplace(p, run_cell(p, 1, seeds, true, out_dir));
  std::cerr << "synthetic cells, N_t = 5 (accous)\n";
  for (ShiftPattern p : kPatterns) nt5.emplace(p, run_cell(p, 5, seeds, false, out_dir));

  bool runs_ok = true;
  for (const auto* cells : {&nt1, &nt5})
    for (const auto& [p, r] : *cells) runs_ok = runs_ok && r.all_ok();

  std::vector<Line> lines;

  {
    bool pass = runs_ok;
    std::ostringstream os;
    for (const auto& [nt, cells, targets] :
         {std::tuple{1, &nt1, &kTargetNt1}, std::tuple{5, &nt5, &kTargetNt5}}) {
      for (ShiftPattern p : kPatterns) {
        const double got = mean_pct(cells->at(p), Method::Accous);
        const double want = targets->at(p);
        const bool ok = std::abs(got - want) <= 3.0;
        pass = pass && ok;
        os << to_string(p) << "/" << nt << " " << fmt(got) << " vs " << fmt(want) << (ok ? "" : " (off)")
           << "; ";
      }
    }
    lines.push_back({1, pass, os.str()});
  }

  {
    bool pass = runs_ok;
    std::ostringstream os;
    for (ShiftPattern p : kPatterns) {
      const RunResult& r = nt1.at(p);
      const double acc = mean_pct(r, Method::Accous);
      const double olre = mean_pct(r, Method::Olre);
      const double one_step = std::min(mean_pct(r, Method::Ulsif), mean_pct(r, Method::Kliep));
      const bool vs_one_step = acc <= one_step + 1.0;
      const bool vs_olre = p == ShiftPattern::Lin || acc <= olre - 1.0;
      pass = pass && vs_one_step && vs_olre;
      os << to_string(p) << " accous " << fmt(acc) << " olre " << fmt(olre) << " one-step " << fmt(one_step)
         << (vs_one_step && vs_olre ? "" : " (off)") << "; ";
    }
    lines.push_back({2, pass, os.str()});
  }

  {
    const RunResult& r = nt1.at(ShiftPattern::Squ);
    const int period = r.config.period.value_or(0);
    const int want = bucket_containing(r.buckets, period);
    int hits = 0;
    std::ostringstream os;
    for (const SeedRun& s : r.seeds) {
      const std::vector<double> mass = average_bucket_mass(s.records);
      const auto top = std::max_element(mass.begin(), mass.end()) - mass.begin();
      if (top == want) ++hits;
      os << "seed " << s.summary.seed << " top " << r.buckets[static_cast<std::size_t>(top)] << " ("
         << fmt(mass[static_cast<std::size_t>(top)], 3) << ")";
      if (want >= 0) os << ", len " << r.buckets[static_cast<std::size_t>(want)] << " " << fmt(mass[want], 3);
      os << "; ";
    }
    const int needed = (3 * static_cast<int>(r.seeds.size()) + 4) / 5;
    os << hits << "/" << r.seeds.size() << " seeds favor the bucket holding M=" << period;
    lines.push_back({3, want >= 0 && hits >= needed, os.str()});
  }

  {
    bool pass = runs_ok;
    int checked = 0;
    double worst = 0.0;
    for (const auto* cells : {&nt1, &nt5}) {
      for (const auto& [p, r] : *cells) {
        for (const SeedRun& s : r.seeds) {
          const auto& c = s.summary.prop2;
          if (!c) {
            pass = false;
            continue;
          }
          ++checked;
          pass = pass && c->holds;
          if (c->rhs > 0) worst = std::max(worst, c->lhs / c->rhs);
        }
      }
    }
    lines.push_back({4, pass, std::to_string(checked) + " seed runs, max lhs/rhs " + std::to_string(worst)});
  }

  {
    const CheckResult c = check_ons_regret(seeds, 500, 4000);
    lines.push_back({5, c.passed, c.detail});
  }

  {
    bool pass = true;
    std::ostringstream os;
    for (const CheckResult& c : run_props_suite(1)) {
      pass = pass && c.passed;
      os << c.name << (c.passed ? " ok" : " FAILED: " + c.detail) << "; ";
    }
    lines.push_back({6, pass, os.str()});
  }

  {
    ExperimentConfig cfg = synthetic_defaults();
    cfg.pattern = ShiftPattern::Ber;
    cfg.hyper.horizon = 400;
    cfg.seeds = {1, 2};
    cfg.prop2_mc = 1000;
    const fs::path a = out_dir / "determinism_a";
    const fs::path b = out_dir / "determinism_b";
    fs::remove_all(a);
    fs::remove_all(b);
    emit_outputs(run_experiment(cfg), a);
    emit_outputs(run_experiment(cfg), b);
    bool pass = true;
    int compared = 0;
    for (const auto& entry : fs::directory_iterator(a)) {
      const std::string name = entry.path().filename().string();
      const fs::path other = b / name;
      if (!fs::exists(other)) {
        pass = false;
        continue;
      }
      const std::string x = slurp(entry.path());
      const std::string y = slurp(other);
      pass = pass && (name == "summary.json" ? strip_wall_time(x) == strip_wall_time(y) : x == y);
      ++compared;
    }
    lines.push_back({7, pass && compared >= 3, std::to_string(compared) + " files compared"});
  }

  int passed = 0;
  std::ofstream report(out_dir / "acceptance.txt");
  for (const Line& l : lines) {
    std::ostringstream os;
    os << "criterion " << l.id << ": " << (l.pass ? "PASS" : "FAIL") << "  " << l.detail;
    std::cout << os.str() << "\n";
    report << os.str() << "\n";
    passed += l.pass;
  }
  std::cout << "acceptance: " << passed << "/" << lines.size() << " criteria passed\n";
  report << "acceptance: " << passed << "/" << lines.size() << " criteria passed\n";
  return passed == static_cast<int>(lines.size()) ? 0 : 2;
}
