// Acceptance suite: one PASS/FAIL line per criterion.
//
//   ravg_acceptance                 run every criterion
//   ravg_acceptance -c 3 -c 5       run the listed criteria
//
// Exit status is 0 when every selected criterion passes.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oracles.hpp"
#include "ravg/presets.hpp"

using namespace ravg;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "  [miss] " << what << '\n';
    }
  }
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Running averages reproduce the raw-matrix procedures

double gap(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) return INFINITY;
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

double support_gap(const SparseModel& m, const oracle::SparseFit& ref) {
  if (m.support.size() != ref.support.size()) return INFINITY;
  for (std::size_t a = 0; a < m.support.size(); ++a) {
    if (static_cast<int>(m.support[a]) != ref.support[a]) return INFINITY;
  }
  return gap(m.beta_std, ref.beta);
}

void criterion_equivalence(Outcome& out) {
  const auto start = Clock::now();
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<int> pick_p(3, 20);
  std::map<std::string, double> worst;
  const int instances = 50;
  for (int rep = 0; rep < instances; ++rep) {
    const int p = pick_p(rng);
    const int n = std::uniform_int_distribution<int>(std::max(3 * p, 40), 200)(rng);
    const auto d = oracle::random_data(rng, n, p);
    const auto raw = oracle::standardize_raw(d.x, d.y);
    MomentSet m(static_cast<std::size_t>(p));
    for (int i = 0; i < n; ++i) {
      const Vector row = d.x.row(i).transpose();
      m.update(std::span<const double>(row.data(), static_cast<std::size_t>(p)), d.y[i]);
    }
    const StandardizedMoments sm = standardize(m);
    const int k = std::uniform_int_distribution<int>(1, p - 1)(rng);

    auto track = [&](const std::string& name, double g) { worst[name] = std::max(worst[name], g); };
    track("OLS", gap(ols(sm).beta_std, oracle::gj_solve(oracle::gram(raw), oracle::cross(raw))));
    track("OLSth", support_gap(ols_th(sm, static_cast<std::size_t>(k)), oracle::ols_th_raw(raw, k)));
    track("OFSA", support_gap(ofsa(sm, FsaSchedule{static_cast<std::size_t>(k)}), oracle::ofsa_raw(raw, k)));

    const double top = sm.s_xy.lpNorm<Eigen::Infinity>();
    const double eta = 0.9 / oracle::power_top(raw);
    const std::pair<Penalty, oracle::Pen> families[] = {{Penalty::lasso, oracle::Pen::lasso},
                                                        {Penalty::elasticnet, oracle::Pen::elnet},
                                                        {Penalty::mcp, oracle::Pen::mcp}};
    for (auto [family, pen] : families) {
      const PenaltySpec spec{family, 0.15 * top, 0.1, 3.0};
      const SparseModel model = penalized_gd(sm, spec);
      const oracle::Vec coef = oracle::penalized_raw(raw, pen, spec.lambda, 0.1, 3.0, 500, eta);
      oracle::SparseFit ref;
      for (int j = 0; j < p; ++j) {
        if (coef[j] != 0.0) ref.support.push_back(j);
      }
      ref.beta = oracle::refit_raw(raw, ref.support);
      const Vector mine = penalized_coefficients(sm.s_xx, sm.s_xy, spec, kPenalizedIterations, 0.0);
      track(std::string(to_string(family)), std::max(gap(mine, coef), support_gap(model, ref)));
    }
  }
  const double secs = seconds_since(start);
  for (const auto& [name, g] : worst) {
    out.detail << "  " << name << ": max coefficient deviation " << fmt(g) << '\n';
    out.require(g <= 1e-8, name + " deviation " + fmt(g) + " > 1e-8");
  }
  out.detail << "  " << instances << " instances in " << fmt(secs, 3) << " s\n";
  out.require(secs < 10.0, "runtime " + fmt(secs, 3) + " s >= 10 s");
}

// ---------------------------------------------------------------------------
// 2-4. Recovery tables

RecoveryConfig recovery(std::size_t p, std::size_t k, double beta, std::vector<std::uint64_t> ns,
                        std::vector<Method> methods, std::size_t seeds) {
  RecoveryConfig cfg;
  cfg.gen.p = p;
  cfg.gen.k_star = k;
  cfg.gen.beta_strength = beta;
  cfg.sample_sizes = std::move(ns);
  cfg.methods = std::move(methods);
  cfg.seeds = seeds;
  cfg.test_size = 10000;
  return cfg;
}

void report_recovery(Outcome& out, const std::vector<RecoverySummary>& rows) {
  for (const auto& r : rows) {
    out.detail << "  n=" << r.n << " " << to_string(r.method) << ": DR " << fmt(100 * r.dr.mean) << "%  RMSE "
               << fmt(r.metric.mean, 5) << " (se " << fmt(r.metric.se, 2) << ")\n";
  }
}

void check_strong(Outcome& out, const std::vector<RecoverySummary>& rows, double target, double tol) {
  for (const auto& r : rows) {
    const std::string name(to_string(r.method));
    out.require(r.dr.mean == 1.0, name + " DR " + fmt(100 * r.dr.mean) + "% != 100%");
    out.require(std::abs(r.metric.mean - target) <= tol,
                name + " RMSE " + fmt(r.metric.mean, 5) + " outside " + fmt(target) + " +- " + fmt(tol));
  }
}

void criterion_paper_row(Outcome& out) {
  const auto start = Clock::now();
  const auto rows = summarize(run_recovery(recovery(1000, 100, 1.0, {10000}, {Method::olsth, Method::ofsa}, 20)));
  const double secs = seconds_since(start);
  report_recovery(out, rows);
  check_strong(out, rows, 1.003, 0.02);
  out.detail << "  runtime " << fmt(secs, 3) << " s\n";
  out.require(secs <= 900.0, "runtime above 15 min");
}

void criterion_desk_row(Outcome& out) {
  const auto start = Clock::now();
  const auto rows =
      summarize(run_recovery(recovery(100, 10, 1.0, {10000}, {Method::olsth, Method::ofsa, Method::omcp}, 50)));
  const double secs = seconds_since(start);
  report_recovery(out, rows);
  check_strong(out, rows, 1.00, 0.03);
  out.detail << "  runtime " << fmt(secs, 3) << " s\n";
  out.require(secs < 60.0, "runtime " + fmt(secs, 3) + " s >= 60 s");
}

void criterion_weak_signal(Outcome& out) {
  const auto& preset = recovery_preset(Scale::desk);
  const std::vector<std::uint64_t> ns(std::begin(preset.weak_n), std::end(preset.weak_n));
  const auto rows =
      summarize(run_recovery(recovery(100, 10, 0.01, ns, {Method::olsth, Method::ofsa, Method::omcp}, preset.seeds)));
  report_recovery(out, rows);
  std::map<Method, std::vector<const RecoverySummary*>> by_method;
  for (const auto& r : rows) by_method[r.method].push_back(&r);
  for (const auto& [method, series] : by_method) {
    const std::string name(to_string(method));
    for (std::size_t i = 1; i < series.size(); ++i) {
      out.require(series[i]->dr.mean >= series[i - 1]->dr.mean,
                  name + " DR decreases from n=" + std::to_string(series[i - 1]->n) + " to n=" +
                      std::to_string(series[i]->n));
    }
    out.require(series.back()->dr.mean >= 0.99,
                name + " DR " + fmt(100 * series.back()->dr.mean) + "% < 99% at n=" + std::to_string(series.back()->n));
  }
}

// ---------------------------------------------------------------------------
// 5. Regret

void criterion_regret(Outcome& out) {
  const auto start = Clock::now();
  const RegretSummary s = run_regret(regret_config(Scale::desk));
  const double secs = seconds_since(start);
  out.detail << "  checkpoints " << s.checkpoints.front() << ".." << s.checkpoints.back() << ", "
             << s.traces.size() << " seeds\n";
  out.detail << "  mean regret " << fmt(s.mean_regret.front()) << " -> " << fmt(s.mean_regret.back())
             << ", log-log slope " << fmt(s.slope) << ", smallest regret " << fmt(s.min_regret) << '\n';
  out.detail << "  runtime " << fmt(secs, 3) << " s\n";
  out.require(std::abs(s.slope + 1.0) <= 0.15, "slope " + fmt(s.slope) + " outside -1 +- 0.15");
  out.require(s.min_regret >= -1e-9, "negative regret " + fmt(s.min_regret));
  out.require(secs < 120.0, "runtime " + fmt(secs, 3) + " s >= 2 min");
}

// ---------------------------------------------------------------------------
// 6. Drift adaptation

void criterion_adaptation(Outcome& out) {
  const auto start = Clock::now();
  const auto rows = run_adaptation(drift_config(Scale::paper, false));
  const double secs = seconds_since(start);
  for (const auto& r : rows) {
    out.detail << "  rate " << r.rate << ": tail RMSE " << fmt(r.tail_rmse.mean, 5) << " (se "
               << fmt(r.tail_rmse.se, 2) << ", " << r.per_seed.size() << " seeds)\n";
    if (r.rate > 0.0) {
      out.require(r.tail_rmse.mean <= 1.10, "adaptive RMSE " + fmt(r.tail_rmse.mean, 5) + " > 1.10");
    } else {
      out.require(r.tail_rmse.mean >= 1.9, "non-adaptive RMSE " + fmt(r.tail_rmse.mean, 5) + " < 1.9");
    }
  }
  out.detail << "  runtime " << fmt(secs, 3) << " s\n";
}

// ---------------------------------------------------------------------------
// 7. beta_min ordering and k* independence

void criterion_beta_min(Outcome& out) {
  const auto sweeps = bounds_configs(Scale::desk);
  const auto n_sweep = run_beta_min(sweeps[0]);
  for (const auto& pt : n_sweep) {
    out.detail << "  n=" << pt.n << " p=" << pt.p << " k*=" << pt.k_star << ": empirical " << fmt(pt.empirical)
               << "  prop2 " << fmt(pt.prop2) << "  thm1 " << fmt(pt.thm1) << '\n';
    const std::string at = " at n=" + std::to_string(pt.n);
    out.require(pt.empirical <= pt.prop2, "empirical above prop2" + at);
    out.require(pt.prop2 <= pt.thm1, "prop2 above thm1" + at);
  }
  const auto k_sweep = run_beta_min(sweeps[1]);
  double mean = 0.0;
  for (const auto& pt : k_sweep) mean += pt.empirical / static_cast<double>(k_sweep.size());
  for (const auto& pt : k_sweep) {
    const double rel = pt.empirical / mean - 1.0;
    out.detail << "  n=" << pt.n << " p=" << pt.p << " k*=" << pt.k_star << ": empirical " << fmt(pt.empirical)
               << " (" << fmt(100 * rel, 3) << "% from mean)\n";
    out.require(std::abs(rel) <= 0.20, "k*=" + std::to_string(pt.k_star) + " deviates " + fmt(100 * rel, 3) + "%");
  }
}

// ---------------------------------------------------------------------------
// 8. Property suites

void criterion_properties(Outcome& out) {
  const auto start = Clock::now();
  for (const char* binary : {RAVG_TEST_CORE, RAVG_TEST_EXTRACT, RAVG_TEST_SIMGEN_EVAL}) {
    const auto t0 = Clock::now();
    const std::string cmd = std::string(binary) + " --gtest_brief=1 > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    const bool ok = status != -1 && WIFEXITED(status) && WEXITSTATUS(status) == 0;
    const std::string name = std::filesystem::path(binary).filename().string();
    out.detail << "  " << name << ": " << (ok ? "ok" : "failed") << " in " << fmt(seconds_since(t0), 3) << " s\n";
    out.require(ok, name + " failed");
  }
  const double secs = seconds_since(start);
  out.detail << "  total " << fmt(secs, 3) << " s\n";
  out.require(secs < 300.0, "suites took " + fmt(secs, 3) + " s >= 5 min");
}

struct Criterion {
  int id;
  const char* title;
  std::function<void(Outcome&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria for the running-averages library"};
  std::vector<int> selected;
  app.add_option("-c,--criterion", selected, "Criterion number(s) to run (default: all)")->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);

  const std::vector<Criterion> criteria{
      {1, "running averages reproduce raw-data extractors within 1e-8", criterion_equivalence},
      {2, "p=1000 k=100 n=1e4: DR 100%, RMSE 1.003 +- 0.02 (OLSth, OFSA)", criterion_paper_row},
      {3, "p=100 k=10 n=1e4: DR 100%, RMSE 1.00 +- 0.03 (OLSth, OFSA, OMCP)", criterion_desk_row},
      {4, "weak signal: DR non-decreasing in n and >= 99% at n=1e5", criterion_weak_signal},
      {5, "dense OLS regret: log-log slope -1 +- 0.15, regret >= 0", criterion_regret},
      {6, "drift: adaptive RMSE <= 1.10, non-adaptive >= 1.9", criterion_adaptation},
      {7, "beta_min: empirical <= prop2 <= thm1; k* spread within 20%", criterion_beta_min},
      {8, "property suites pass in under 5 min", criterion_properties},
  };

  bool all_pass = true;
  for (const auto& c : criteria) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    Outcome out;
    const auto start = Clock::now();
    try {
      c.run(out);
    } catch (const std::exception& e) {
      out.pass = false;
      out.detail << "  [error] " << e.what() << '\n';
    }
    std::cout << (out.pass ? "PASS" : "FAIL") << "  criterion " << c.id << ": " << c.title << "  ("
              << fmt(seconds_since(start), 3) << " s)\n"
              << out.detail.str() << std::flush;
    all_pass = all_pass && out.pass;
  }
  return all_pass ? 0 : 1;
}
