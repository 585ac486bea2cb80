#pragma once

// Reproducible simulation runners shared by the CLI and the acceptance suite.
// Every run is a pure function of its config; seeds are base_seed + replicate.

#include <chrono>
#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "ravg/eval.hpp"
#include "ravg/parallel.hpp"
#include "ravg/simgen.hpp"

namespace ravg {

enum class Method { olsth, ofsa, olasso, oelnet, omcp };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::olsth: return "OLSth";
    case Method::ofsa: return "OFSA";
    case Method::olasso: return "OLasso";
    case Method::oelnet: return "OElnet";
    case Method::omcp: return "OMCP";
  }
  return "?";
}

struct ExtractSettings {
  double l2_mix = 0.1;  // elastic net quadratic weight
  double mcp_b = 3.0;
  std::size_t grid_size = 200;
  std::size_t threads = 1;  // workers for the lambda grid
};

/// Sparse model with k features by the named method; penalized methods tune
/// lambda on the grid to the largest nonzero count <= k.
inline SparseModel extract_k(const StandardizedMoments& sm, Method method, std::size_t k,
                             const ExtractSettings& s = {}) {
  switch (method) {
    case Method::olsth: return ols_th(sm, k);
    case Method::ofsa: return ofsa(sm, FsaSchedule{k});
    case Method::olasso:
    case Method::oelnet:
    case Method::omcp: {
      TuneOptions opt;
      opt.grid_size = s.grid_size;
      opt.mcp_b = s.mcp_b;
      opt.threads = s.threads;
      const Penalty family = method == Method::omcp     ? Penalty::mcp
                             : method == Method::oelnet ? Penalty::elasticnet
                                                        : Penalty::lasso;
      if (family == Penalty::elasticnet) opt.l2_mix = s.l2_mix;
      return tune_lambda_for_sparsity(sm, family, k, opt).model;
    }
  }
  throw Error(Errc::invalid_argument, "unknown method");
}

// ---------------------------------------------------------------------------
// Recovery tables (regression RMSE or classification AUC)

struct RecoveryConfig {
  GenConfig gen;                              // gen.n is ignored; see sample_sizes
  std::vector<std::uint64_t> sample_sizes;    // checkpoints of one stream per replicate
  std::vector<Method> methods;
  std::size_t seeds = 20;
  std::uint64_t base_seed = 1;
  std::size_t test_size = 10000;
  ExtractSettings extract;
  std::size_t threads = thread_budget();  // workers across replicates
  bool timing = false;
};

struct RecoveryRow {
  std::uint64_t n = 0;
  std::uint64_t seed = 0;
  Method method = Method::olsth;
  double dr = 0.0;
  double metric = 0.0;  // RMSE (regression) or AUC (classification)
  double seconds = 0.0;
};

inline std::vector<RecoveryRow> run_recovery(const RecoveryConfig& cfg) {
  if (cfg.sample_sizes.empty() || cfg.methods.empty()) {
    throw Error(Errc::invalid_argument, "recovery run needs sample sizes and methods");
  }
  for (std::size_t i = 1; i < cfg.sample_sizes.size(); ++i) {
    if (cfg.sample_sizes[i] <= cfg.sample_sizes[i - 1]) {
      throw Error(Errc::invalid_argument, "sample sizes must increase");
    }
  }
  cfg.gen.validate();
  const std::size_t per_seed = cfg.sample_sizes.size() * cfg.methods.size();
  std::vector<RecoveryRow> rows(cfg.seeds * per_seed);
  const auto truth = true_support(cfg.gen);
  const bool classify = cfg.gen.task == Task::classification;

  parallel_for(
      cfg.seeds,
      [&](std::size_t r) {
        GenConfig g = cfg.gen;
        g.seed = cfg.base_seed + r;
        SyntheticStream train(g, 0);
        SyntheticStream test(g, 1);
        Matrix xt;
        Vector yt;
        test.fill(static_cast<Index>(cfg.test_size), xt, yt);
        MomentSet m(g.p);
        Matrix x;
        Vector y;
        std::uint64_t have = 0;
        std::size_t at = r * per_seed;
        for (const auto n : cfg.sample_sizes) {
          while (have < n) {
            const auto chunk = static_cast<Index>(std::min<std::uint64_t>(n - have, 4096));
            train.fill(chunk, x, y);
            m.update_batch(x, y);
            have += static_cast<std::uint64_t>(chunk);
          }
          const StandardizedMoments sm = standardize(m);
          for (const auto method : cfg.methods) {
            const auto start = std::chrono::steady_clock::now();
            const SparseModel model = extract_k(sm, method, g.k_star, cfg.extract);
            const auto stop = std::chrono::steady_clock::now();
            RecoveryRow& row = rows[at++];
            row.n = n;
            row.seed = g.seed;
            row.method = method;
            row.dr = detection_rate(model.support, truth);
            const Vector scores = predict_rows(model, xt);
            row.metric = classify ? auc(scores, yt) : rmse(scores, yt);
            row.seconds = cfg.timing ? std::chrono::duration<double>(stop - start).count() : 0.0;
          }
        }
      },
      cfg.threads);
  return rows;
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(std::span<const double> v) {
  MeanSe out;
  if (v.empty()) return out;
  for (double x : v) out.mean += x;
  out.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - out.mean) * (x - out.mean);
    out.se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return out;
}

struct RecoverySummary {
  std::uint64_t n = 0;
  Method method = Method::olsth;
  MeanSe dr;
  MeanSe metric;
  MeanSe seconds;
  std::size_t replicates = 0;
};

/// Means over replicates, in (n, method) order of first appearance.
inline std::vector<RecoverySummary> summarize(const std::vector<RecoveryRow>& rows) {
  std::vector<RecoverySummary> out;
  std::vector<std::vector<double>> dr, metric, secs;
  for (const auto& row : rows) {
    std::size_t i = 0;
    while (i < out.size() && !(out[i].n == row.n && out[i].method == row.method)) ++i;
    if (i == out.size()) {
      out.push_back({row.n, row.method, {}, {}, {}, 0});
      dr.emplace_back();
      metric.emplace_back();
      secs.emplace_back();
    }
    dr[i].push_back(row.dr);
    metric[i].push_back(row.metric);
    secs[i].push_back(row.seconds);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].dr = mean_se(dr[i]);
    out[i].metric = mean_se(metric[i]);
    out[i].seconds = mean_se(secs[i]);
    out[i].replicates = dr[i].size();
  }
  return out;
}

inline void write_recovery_rows(std::ostream& out, const std::vector<RecoveryRow>& rows,
                                std::string_view metric_name) {
  out << "n,seed,method,dr," << metric_name << ",time_s\n";
  for (const auto& r : rows) {
    out << r.n << ',' << r.seed << ',' << to_string(r.method) << ',' << format_double(r.dr) << ','
        << format_double(r.metric) << ',' << format_double(r.seconds) << '\n';
  }
}

/// DR is reported in percent, as in the published tables.
inline void write_recovery_summary(std::ostream& out, const std::vector<RecoverySummary>& rows,
                                   std::string_view metric_name) {
  out << "n,method,dr_pct,dr_pct_se," << metric_name << ',' << metric_name
      << "_se,time_s,time_s_se,replicates\n";
  for (const auto& r : rows) {
    out << r.n << ',' << to_string(r.method) << ',' << format_double(100.0 * r.dr.mean) << ','
        << format_double(100.0 * r.dr.se) << ',' << format_double(r.metric.mean) << ','
        << format_double(r.metric.se) << ',' << format_double(r.seconds.mean) << ','
        << format_double(r.seconds.se) << ',' << r.replicates << '\n';
  }
}

// ---------------------------------------------------------------------------
// Regret

struct RegretConfig {
  GenConfig gen;  // gen.n is the stream length
  std::vector<std::uint64_t> checkpoints;
  std::optional<std::size_t> k;
  std::size_t warmup = 0;
  std::size_t seeds = 20;
  std::uint64_t base_seed = 1;
  std::size_t threads = thread_budget();
};

struct RegretSummary {
  std::vector<std::uint64_t> checkpoints;
  std::vector<double> mean_regret;
  std::vector<double> se_regret;
  double min_regret = 0.0;  // smallest regret over every replicate and checkpoint
  double slope = 0.0;       // log-log slope of the mean regret
  std::vector<RegretTrace> traces;
};

inline RegretSummary run_regret(const RegretConfig& cfg) {
  cfg.gen.validate();
  std::vector<RegretTrace> traces(cfg.seeds);
  parallel_for(
      cfg.seeds,
      [&](std::size_t r) {
        GenConfig g = cfg.gen;
        g.seed = cfg.base_seed + r;
        SyntheticStream stream(g);
        RegretOptions opt;
        opt.k = cfg.k;
        opt.warmup = cfg.warmup;
        opt.checkpoints = cfg.checkpoints;
        traces[r] = regret_harness([&] { return stream.next(); }, g.p, g.n, opt);
      },
      cfg.threads);
  RegretSummary out;
  out.checkpoints = traces.front().checkpoints;
  out.min_regret = std::numeric_limits<double>::infinity();
  std::vector<double> xs;
  for (std::size_t c = 0; c < out.checkpoints.size(); ++c) {
    std::vector<double> v;
    for (const auto& t : traces) {
      v.push_back(t.regret[c]);
      out.min_regret = std::min(out.min_regret, t.regret[c]);
    }
    const MeanSe ms = mean_se(v);
    out.mean_regret.push_back(ms.mean);
    out.se_regret.push_back(ms.se);
    xs.push_back(static_cast<double>(out.checkpoints[c]));
  }
  out.slope = loglog_slope(xs, out.mean_regret);
  out.traces = std::move(traces);
  return out;
}

inline void write_regret(std::ostream& out, const RegretSummary& s) {
  out << "n,regret,regret_se\n";
  for (std::size_t c = 0; c < s.checkpoints.size(); ++c) {
    out << s.checkpoints[c] << ',' << format_double(s.mean_regret[c]) << ','
        << format_double(s.se_regret[c]) << '\n';
  }
}

// ---------------------------------------------------------------------------
// beta_min sweeps

struct BetaMinPoint {
  std::uint64_t n = 0;
  std::size_t p = 0;
  std::size_t k_star = 0;
  double empirical = 0.0;
  double prop2 = 0.0;  // +inf when inapplicable
  double thm1 = 0.0;   // +inf when inapplicable
  double lambda_prop2 = 0.0;
  double lambda_thm1 = 0.0;
};

struct BetaMinConfig {
  std::size_t p = 256;
  std::vector<std::size_t> k_stars{32};
  std::vector<std::uint64_t> sample_sizes{1024, 2048, 4096, 8192, 16384};
  std::size_t seeds = 100;
  std::size_t required = 99;
  double alpha_corr = 1.0;
  double alpha_exp = 1.0;
  double noise = 1.0;
  std::uint64_t base_seed = 1;
  std::size_t threads = thread_budget();
};

/// Empirical and theoretical beta_min for OLS-th. One design and noise
/// stream per replicate serves every n (prefixes) and every k*; true features
/// sit at spacing min(10, p / k*).
inline std::vector<BetaMinPoint> run_beta_min(const BetaMinConfig& cfg) {
  if (cfg.sample_sizes.empty() || cfg.k_stars.empty()) throw Error(Errc::invalid_argument, "empty sweep");
  const std::size_t nn = cfg.sample_sizes.size();
  const std::size_t nk = cfg.k_stars.size();
  std::vector<std::vector<RecoveryLine>> lines(nn * nk, std::vector<RecoveryLine>(cfg.seeds));
  std::vector<std::vector<double>> eig_floor(nn, std::vector<double>(cfg.seeds));
  parallel_for(
      cfg.seeds,
      [&](std::size_t r) {
        SplitMix64 rng(cfg.base_seed + r, 0);
        MomentSet noise(cfg.p);
        const auto pp = static_cast<Index>(cfg.p);
        Matrix x;
        Vector eta;
        std::uint64_t have = 0;
        for (std::size_t a = 0; a < nn; ++a) {
          const auto n = cfg.sample_sizes[a];
          while (have < n) {
            const auto chunk = static_cast<Index>(std::min<std::uint64_t>(n - have, 2048));
            x.resize(chunk, pp);
            eta.resize(chunk);
            Vector row(pp);
            for (Index i = 0; i < chunk; ++i) {
              gen_design_row(rng, cfg.alpha_corr, row);
              x.row(i) = row.transpose();
              eta[i] = cfg.noise * rng.normal();
            }
            noise.update_batch(x, eta);
            have += static_cast<std::uint64_t>(chunk);
          }
          Eigen::SelfAdjointEigenSolver<Matrix> eig(noise.s_xx(), Eigen::EigenvaluesOnly);
          eig_floor[a][r] = eig.eigenvalues().minCoeff();
          for (std::size_t b = 0; b < nk; ++b) {
            const auto k = cfg.k_stars[b];
            lines[a * nk + b][r] = recovery_line(noise, support_positions(k, default_spacing(cfg.p, k)));
          }
        }
      },
      cfg.threads);

  std::vector<BetaMinPoint> out;
  const Matrix sigma_x = design_covariance(cfg.p, cfg.alpha_corr);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma_x, Eigen::EigenvaluesOnly);
  const double sqrt_floor = std::sqrt(std::max(eig.eigenvalues().minCoeff(), 0.0));
  const double rho = sigma_x.diagonal().maxCoeff();
  const auto p = static_cast<double>(cfg.p);
  for (std::size_t a = 0; a < nn; ++a) {
    const auto n = static_cast<double>(cfg.sample_sizes[a]);
    const double lam2 = mean_se(eig_floor[a]).mean;
    const double lam1 = thm1_lambda(sqrt_floor, rho, n, p);
    const double inf = std::numeric_limits<double>::infinity();
    const double b2 = lam2 > 0.0 ? prop2_bound(n, p, cfg.noise, lam2, cfg.alpha_exp) : inf;
    const double b1 = lam1 > 0.0 ? thm1_bound(n, p, cfg.noise, lam1, cfg.alpha_exp) : inf;
    for (std::size_t b = 0; b < nk; ++b) {
      BetaMinPoint pt;
      pt.n = cfg.sample_sizes[a];
      pt.p = cfg.p;
      pt.k_star = cfg.k_stars[b];
      const double guess = b2 < inf ? b2 : 1.0;
      pt.empirical = empirical_beta_min(lines[a * nk + b], cfg.required, guess / 64.0, guess);
      pt.prop2 = b2;
      pt.thm1 = b1;
      pt.lambda_prop2 = lam2;
      pt.lambda_thm1 = lam1;
      out.push_back(pt);
    }
  }
  return out;
}

inline void write_beta_min(std::ostream& out, const std::vector<BetaMinPoint>& pts) {
  out << "n,p,k_star,beta_min_empirical,bound_prop2,bound_thm1,lambda_prop2,lambda_thm1\n";
  for (const auto& pt : pts) {
    out << pt.n << ',' << pt.p << ',' << pt.k_star << ',' << format_double(pt.empirical) << ','
        << format_double(pt.prop2) << ',' << format_double(pt.thm1) << ','
        << format_double(pt.lambda_prop2) << ',' << format_double(pt.lambda_thm1) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Drift tracking

struct AdaptationConfig {
  DriftConfig drift;
  PricingConfig pricing_cfg;
  bool pricing = false;
  std::vector<double> rates{0.01, 0.0};
  std::size_t seeds = 20;
  std::uint64_t base_seed = 1;
  std::size_t tail = 300;
  std::size_t test_size = 200;
  std::size_t threads = thread_budget();
};

struct AdaptationSummary {
  double rate = 0.0;
  MeanSe tail_rmse;
  std::vector<double> mean_rmse;  // per step, averaged over replicates
  std::vector<double> per_seed;   // tail RMSE per replicate
};

inline std::vector<AdaptationSummary> run_adaptation(const AdaptationConfig& cfg) {
  std::vector<std::vector<AdaptationResult>> results(cfg.seeds);
  parallel_for(
      cfg.seeds,
      [&](std::size_t r) {
        AdaptationOptions opt;
        opt.rates = cfg.rates;
        opt.seed = cfg.base_seed + r;
        opt.tail = cfg.tail;
        opt.test_size = cfg.test_size;
        results[r] = cfg.pricing ? pricing_experiment(cfg.pricing_cfg, opt)
                                 : adaptation_experiment(cfg.drift, opt);
      },
      cfg.threads);
  std::vector<AdaptationSummary> out;
  for (std::size_t a = 0; a < cfg.rates.size(); ++a) {
    AdaptationSummary s;
    s.rate = cfg.rates[a];
    s.mean_rmse.assign(results.front()[a].rmse.size(), 0.0);
    for (const auto& seed_results : results) {
      const auto& res = seed_results[a];
      s.per_seed.push_back(res.tail_rmse);
      for (std::size_t t = 0; t < res.rmse.size(); ++t) {
        s.mean_rmse[t] += res.rmse[t] / static_cast<double>(cfg.seeds);
      }
    }
    s.tail_rmse = mean_se(s.per_seed);
    out.push_back(std::move(s));
  }
  return out;
}

inline void write_adaptation_summary(std::ostream& out, const std::vector<AdaptationSummary>& rows) {
  out << "rate,adaptation,rmse,rmse_se,replicates\n";
  for (const auto& s : rows) {
    out << format_double(s.rate) << ',' << (s.rate > 0.0 ? "with" : "without") << ','
        << format_double(s.tail_rmse.mean) << ',' << format_double(s.tail_rmse.se) << ','
        << s.per_seed.size() << '\n';
  }
}

inline void write_adaptation_trace(std::ostream& out, const std::vector<AdaptationSummary>& rows) {
  out << "step";
  for (const auto& s : rows) out << ",rmse_rate_" << format_double(s.rate);
  out << '\n';
  const std::size_t steps = rows.empty() ? 0 : rows.front().mean_rmse.size();
  for (std::size_t t = 0; t < steps; ++t) {
    out << t + 1;
    for (const auto& s : rows) out << ',' << format_double(s.mean_rmse[t]);
    out << '\n';
  }
}

}  // namespace ravg
