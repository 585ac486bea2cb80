#pragma once

// Metrics, the sequential regret harness, beta_min bounds and the drift
// tracking experiment.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iterator>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Eigenvalues>

#include "ravg/extract.hpp"
#include "ravg/parallel.hpp"
#include "ravg/simgen.hpp"

namespace ravg {

// ---------------------------------------------------------------------------
// Metrics

/// |selected ∩ truth| / |truth|.
inline double detection_rate(std::span<const std::size_t> selected, std::span<const std::size_t> truth) {
  if (truth.empty()) throw Error(Errc::undefined_metric, "detection rate needs a nonempty truth set");
  std::vector<std::size_t> a(selected.begin(), selected.end());
  std::vector<std::size_t> b(truth.begin(), truth.end());
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  std::vector<std::size_t> both;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
  return static_cast<double>(both.size()) / static_cast<double>(b.size());
}

inline double rmse(const Vector& yhat, const Vector& y) {
  if (yhat.size() != y.size()) throw Error(Errc::invalid_dimension, "rmse inputs differ in length");
  if (y.size() == 0) throw Error(Errc::undefined_metric, "rmse of an empty sample");
  return std::sqrt((yhat - y).squaredNorm() / static_cast<double>(y.size()));
}

/// Area under the ROC curve as the Mann-Whitney statistic; tied scores count 1/2.
/// Labels are +1 (positive) and -1 (negative).
inline double auc(const Vector& scores, const Vector& labels) {
  if (scores.size() != labels.size()) throw Error(Errc::invalid_dimension, "auc inputs differ in length");
  const auto n = static_cast<std::size_t>(scores.size());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[static_cast<Index>(a)] < scores[static_cast<Index>(b)];
  });
  double pos = 0.0;
  double neg = 0.0;
  double rank_sum = 0.0;  // sum of midranks of the positives
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[static_cast<Index>(order[j])] == scores[static_cast<Index>(order[i])]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      const double label = labels[static_cast<Index>(order[t])];
      if (label > 0.0) {
        pos += 1.0;
        rank_sum += midrank;
      } else {
        neg += 1.0;
      }
    }
    i = j;
  }
  if (pos == 0.0 || neg == 0.0) throw Error(Errc::undefined_metric, "auc needs both classes");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

/// Moments of y = x^T beta + eta given the moments of (x, eta).
/// Every statistic is linear or quadratic in y, so this is exact.
inline MomentSet with_linear_response(const MomentSet& noise, const Vector& beta) {
  if (beta.size() != static_cast<Index>(noise.p())) {
    throw Error(Errc::invalid_dimension, "coefficient length does not match p");
  }
  const Vector sxx_beta = noise.s_xx() * beta;
  return MomentSet::from_fields(noise.mode(), noise.n(), noise.mu_x(),
                                noise.mu_y() + noise.mu_x().dot(beta), noise.s_xx(),
                                noise.s_xy() + sxx_beta,
                                noise.s_yy() + 2.0 * beta.dot(noise.s_xy()) + beta.dot(sxx_beta));
}

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(Errc::invalid_argument, "slope needs >= 2 points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw Error(Errc::undefined_metric, "log of a non-positive value");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

// ---------------------------------------------------------------------------
// Regret

struct RegretTrace {
  std::vector<std::uint64_t> checkpoints;
  std::vector<double> cumulative_loss;  // sum of f(beta_i; z_i) up to the checkpoint
  std::vector<double> offline_loss;     // best fixed model on the same prefix
  std::vector<double> regret;           // (cumulative - offline) / n
  std::vector<double> step_losses;      // f(beta_i; z_i) per step, when requested
  std::size_t warmup = 0;
};

struct RegretOptions {
  std::optional<std::size_t> k;        // sparse mode when set
  std::size_t warmup = 0;              // n0; 0 selects max(p + 1, 400 ln n)
  std::vector<std::uint64_t> checkpoints;
  std::size_t refactor_interval = 1000;
  double ridge = 1.0;                  // ridge weight used before n0
  bool record_losses = false;
};

inline std::size_t default_warmup(std::size_t p, std::uint64_t n) {
  const auto log_term = static_cast<std::size_t>(std::ceil(400.0 * std::log(static_cast<double>(std::max<std::uint64_t>(n, 1)))));
  return std::max(p + 1, log_term);
}

/// Approximately log-spaced integer checkpoints in [lo, hi], inclusive.
inline std::vector<std::uint64_t> log_checkpoints(std::uint64_t lo, std::uint64_t hi, std::size_t count) {
  if (lo < 1 || hi < lo || count < 2) throw Error(Errc::invalid_argument, "bad checkpoint range");
  std::vector<std::uint64_t> out;
  const double a = std::log(static_cast<double>(lo));
  const double b = std::log(static_cast<double>(hi));
  for (std::size_t i = 0; i < count; ++i) {
    const double v = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(count - 1));
    const auto c = static_cast<std::uint64_t>(std::llround(v));
    if (out.empty() || c > out.back()) out.push_back(c);
  }
  out.back() = hi;
  return out;
}

namespace detail {

/// Half the residual sum of squares of `beta` on a prefix of length n whose
/// raw (uncentered) second moments are in m.
inline double prefix_loss(const MomentSet& m, const Vector& sxx_beta, const Vector& beta) {
  const double mean = m.s_yy() - 2.0 * beta.dot(m.s_xy()) + beta.dot(sxx_beta);
  return 0.5 * static_cast<double>(m.n()) * std::max(mean, 0.0);
}

/// Least squares through the origin on raw moments, restricted to `cols`.
inline Vector raw_fit(const MomentSet& m, const IndexList& cols) {
  return solve_spd({m.s_xx()(cols, cols), m.s_xy()(cols)});
}

inline Vector embed(const Vector& values, const IndexList& cols, Index p) {
  Vector out = Vector::Zero(p);
  out(cols) = values;
  return out;
}

/// OLS on all features, top-k by magnitude, refit: on raw moments.
inline Vector raw_ols_th(const MomentSet& m, std::size_t k, IndexList* support = nullptr) {
  const auto p = static_cast<Index>(m.p());
  IndexList all(static_cast<std::size_t>(p));
  std::iota(all.begin(), all.end(), Index{0});
  Vector dense;
  try {
    dense = raw_fit(m, all);
  } catch (const Error& e) {
    if (e.code() != Errc::singular_system) throw;
    dense = solve_ridge({m.s_xx(), m.s_xy()}, default_ridge(m.s_xx()));
  }
  const IndexList keep = select_top_k(dense, k);
  if (support) *support = keep;
  return embed(raw_fit(m, keep), keep, p);
}

}  // namespace detail

/// Sequential regret of online least squares with loss f = 1/2 (y - x^T b)^2.
///
/// `next` yields observations. Before n0 the coefficients follow recursive
/// ridge least squares; from n0 on they are exact least squares on the prefix
/// (dense mode, maintained by rank-1 inverse updates and refactorized every
/// `refactor_interval` steps) or OLS-th re-extracted at each checkpoint
/// (sparse mode). The offline comparator is least squares on the prefix
/// (restricted to the prefix's OLS-th support in sparse mode). The model has
/// no intercept and works on raw features.
inline RegretTrace regret_harness(const std::function<Observation()>& next, std::size_t p,
                                  std::uint64_t n, RegretOptions opt) {
  if (p == 0) throw Error(Errc::invalid_dimension, "p must be >= 1");
  if (opt.k && (*opt.k < 1 || *opt.k > p)) throw Error(Errc::invalid_sparsity, "sparsity outside [1, p]");
  RegretTrace trace;
  trace.warmup = opt.warmup != 0 ? opt.warmup : default_warmup(p, n);
  if (trace.warmup <= p) throw Error(Errc::invalid_argument, "warmup must exceed p");
  if (n < trace.warmup) throw Error(Errc::insufficient_data, "stream shorter than the warmup");
  if (opt.checkpoints.empty()) opt.checkpoints = {n};
  for (std::size_t i = 0; i < opt.checkpoints.size(); ++i) {
    const auto c = opt.checkpoints[i];
    if (c <= p || c > n || (i > 0 && c <= opt.checkpoints[i - 1])) {
      throw Error(Errc::invalid_argument, "checkpoints must increase within (p, n]");
    }
  }
  if (opt.refactor_interval == 0) opt.refactor_interval = 1000;

  const auto pp = static_cast<Index>(p);
  MomentSet m(p);
  Matrix inv = Matrix::Identity(pp, pp) / opt.ridge;  // (ridge I + X^T X)^{-1} or (X^T X)^{-1}
  Vector beta = Vector::Zero(pp);
  double cumulative = 0.0;
  bool exact = false;
  std::size_t next_check = 0;
  if (opt.record_losses) trace.step_losses.reserve(static_cast<std::size_t>(n));

  auto refactor = [&] {
    const Matrix gram = static_cast<double>(m.n()) * m.s_xx();
    inv = inverse_spd(gram);
    beta = inv * (static_cast<double>(m.n()) * m.s_xy());
  };

  for (std::uint64_t i = 1; i <= n; ++i) {
    const Observation z = next();
    if (z.x.size() != pp) throw Error(Errc::invalid_dimension, "observation length differs from p");
    const double residual = z.y - z.x.dot(beta);
    const double loss = 0.5 * residual * residual;
    cumulative += loss;
    if (opt.record_losses) trace.step_losses.push_back(loss);
    m.update(z);

    const bool at_warmup = i == trace.warmup;
    if (!opt.k) {
      bool refreshed = false;
      if (at_warmup || (exact && (i - trace.warmup) % opt.refactor_interval == 0)) {
        try {
          refactor();
          exact = true;
          refreshed = true;
        } catch (const Error& e) {
          if (e.code() != Errc::singular_system) throw;
        }
      }
      if (!refreshed) {
        try {
          rank1_update_inverse_inplace(inv, z.x, 1.0);
        } catch (const Error& e) {
          if (e.code() != Errc::breakdown) throw;
          refactor();
        }
        beta += inv * z.x * (z.y - z.x.dot(beta));
      }
    } else if (i < trace.warmup) {
      rank1_update_inverse_inplace(inv, z.x, 1.0);
      beta += inv * z.x * (z.y - z.x.dot(beta));
    }

    const bool checkpoint = next_check < opt.checkpoints.size() && opt.checkpoints[next_check] == i;
    if (opt.k && i >= trace.warmup && (at_warmup || checkpoint)) {
      beta = detail::raw_ols_th(m, *opt.k);
    }
    if (checkpoint) {
      Vector best;
      if (opt.k) {
        IndexList support;
        detail::raw_ols_th(m, *opt.k, &support);
        best = detail::embed(detail::raw_fit(m, support), support, pp);
      } else {
        try {
          best = solve_spd({m.s_xx(), m.s_xy()});
        } catch (const Error& e) {
          if (e.code() != Errc::singular_system) throw;
          best = solve_ridge({m.s_xx(), m.s_xy()}, 1e-12 * m.s_xx().trace() / static_cast<double>(pp));
        }
      }
      const double offline = detail::prefix_loss(m, m.s_xx() * best, best);
      trace.checkpoints.push_back(i);
      trace.cumulative_loss.push_back(cumulative);
      trace.offline_loss.push_back(offline);
      trace.regret.push_back((cumulative - offline) / static_cast<double>(i));
      ++next_check;
    }
  }
  return trace;
}

// ---------------------------------------------------------------------------
// beta_min bounds

enum class BoundKind { prop2, thm1 };

/// 4 sigma / sqrt(lambda) * sqrt(ln p / n^alpha), lambda <= lambda_min(X^T X / n).
inline double prop2_bound(double n, double p, double sigma, double lambda, double alpha_exp = 1.0) {
  if (!(n >= 1.0) || !(p >= 1.0)) throw Error(Errc::invalid_argument, "n and p must be >= 1");
  if (!(lambda > 0.0)) throw Error(Errc::bound_inapplicable, "lambda must be positive");
  return 4.0 * sigma / std::sqrt(lambda) * std::sqrt(std::log(p) / std::pow(n, alpha_exp));
}

/// 0.9 lambda_min(sqrt(Sigma)) - rho(Sigma) sqrt(p / n), rho = largest diagonal entry.
inline double thm1_lambda(double lambda_min_sqrt_sigma, double rho, double n, double p) {
  return 0.9 * lambda_min_sqrt_sigma - rho * std::sqrt(p / n);
}

inline double thm1_lambda(const Matrix& sigma_x, double n) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma_x, Eigen::EigenvaluesOnly);
  const double smallest = std::max(eig.eigenvalues().minCoeff(), 0.0);
  return thm1_lambda(std::sqrt(smallest), sigma_x.diagonal().maxCoeff(), n,
                     static_cast<double>(sigma_x.rows()));
}

/// 4 sigma / lambda * sqrt(ln p / n^alpha).
inline double thm1_bound(double n, double p, double sigma, double lambda, double alpha_exp = 1.0) {
  if (!(n >= 1.0) || !(p >= 1.0)) throw Error(Errc::invalid_argument, "n and p must be >= 1");
  if (!(lambda > 0.0)) {
    throw Error(Errc::bound_inapplicable, "lambda = " + format_double(lambda) + " is not positive");
  }
  return 4.0 * sigma / lambda * std::sqrt(std::log(p) / std::pow(n, alpha_exp));
}

inline double thm1_bound(double n, const Matrix& sigma_x, double sigma, double alpha_exp = 1.0) {
  return thm1_bound(n, static_cast<double>(sigma_x.rows()), sigma, thm1_lambda(sigma_x, n), alpha_exp);
}

/// Right-hand side of the chosen bound. For prop2 `lambda` is the eigenvalue
/// floor; for thm1 it is the already computed 0.9 lambda_min - rho sqrt(p/n).
inline double beta_min_bound(BoundKind kind, double n, double p, double sigma, double lambda,
                             double alpha_exp = 1.0) {
  return kind == BoundKind::prop2 ? prop2_bound(n, p, sigma, lambda, alpha_exp)
                                  : thm1_bound(n, p, sigma, lambda, alpha_exp);
}

/// Covariance of the equicorrelated design: I + alpha^2 J.
inline Matrix design_covariance(std::size_t p, double alpha_corr) {
  const auto d = static_cast<Index>(p);
  return Matrix::Identity(d, d) + Matrix::Constant(d, d, alpha_corr * alpha_corr);
}

// ---------------------------------------------------------------------------
// Empirical beta_min

/// OLS-th support recovery as a function of the signal strength b, for one
/// replicate. The dense first-stage estimate is linear in the response, so
/// with y = b x^T 1_S + eta it equals b * slope + offset; the selected
/// support is the top-|S| set of that vector.
struct RecoveryLine {
  Vector slope;
  Vector offset;
  std::vector<std::size_t> truth;  // retained positions of the true support

  bool recovers(double strength) const {
    const Vector dense = strength * slope + offset;
    const IndexList top = select_top_k(dense, truth.size());
    for (std::size_t a = 0; a < truth.size(); ++a) {
      if (static_cast<std::size_t>(top[a]) != truth[a]) return false;
    }
    return true;
  }
};

/// `noise` holds the moments of (x, eta); the true support is `truth`.
inline RecoveryLine recovery_line(const MomentSet& noise, const std::vector<std::size_t>& truth) {
  Vector indicator = Vector::Zero(static_cast<Index>(noise.p()));
  for (auto j : truth) indicator[static_cast<Index>(j)] = 1.0;
  const StandardizedMoments base = standardize(noise);
  const StandardizedMoments unit = standardize(with_linear_response(noise, indicator));
  if (base.dropped.size() != 0) throw Error(Errc::degenerate_moments, "constant feature in design");
  RecoveryLine line;
  line.offset = dense_estimate(base, std::nullopt);
  line.slope = dense_estimate(unit, std::nullopt) - line.offset;
  line.truth = truth;
  std::sort(line.truth.begin(), line.truth.end());
  return line;
}

inline std::size_t recoveries(std::span<const RecoveryLine> lines, double strength) {
  std::size_t hits = 0;
  for (const auto& line : lines) hits += line.recovers(strength) ? 1 : 0;
  return hits;
}

/// Smallest strength with at least `required` recoveries, by bisection on a
/// log scale between lo and hi (hi is widened until it succeeds).
inline double empirical_beta_min(std::span<const RecoveryLine> lines, std::size_t required, double lo,
                                 double hi, std::size_t steps = 30) {
  if (!(lo > 0.0) || !(hi > lo)) throw Error(Errc::invalid_argument, "bisection needs 0 < lo < hi");
  for (int widen = 0; recoveries(lines, hi) < required; ++widen) {
    if (widen > 60) throw Error(Errc::diverged, "no signal strength reaches the recovery target");
    hi *= 2.0;
  }
  while (recoveries(lines, lo) >= required) lo /= 2.0;
  for (std::size_t s = 0; s < steps; ++s) {
    const double mid = std::sqrt(lo * hi);
    (recoveries(lines, mid) >= required ? hi : lo) = mid;
  }
  return hi;
}

// ---------------------------------------------------------------------------
// Drift tracking

struct AdaptationResult {
  double rate = 0.0;
  std::vector<double> rmse;  // per time step, on a fresh test batch
  Matrix coefficients;       // steps x k, original-scale estimates on the drifting support
  Matrix truth;              // steps x k, true coefficients
  double tail_rmse = 0.0;    // sqrt of mean squared error over the last `tail` steps
};

struct AdaptationOptions {
  std::vector<double> rates{0.01, 0.0};  // 0 disables forgetting
  std::size_t tail = 300;
  std::size_t test_size = 200;
  std::uint64_t seed = 1;
};

/// Shared driver: `truth_at(t)` gives the coefficient vector at step t,
/// `draw(rng, beta)` one observation, and `support` the tracked features.
/// Every rate sees the same training and test stream.
inline std::vector<AdaptationResult> track_drift(
    std::size_t p, std::size_t k, std::size_t steps, std::size_t batch,
    const std::vector<std::size_t>& support, const std::function<Vector(double)>& truth_at,
    const std::function<Observation(SplitMix64&, const Vector&)>& draw, const AdaptationOptions& opt) {
  if (steps == 0 || batch == 0 || opt.test_size == 0) {
    throw Error(Errc::invalid_argument, "steps, batch and test size must be >= 1");
  }
  std::vector<MomentSet> moments;
  std::vector<AdaptationResult> out(opt.rates.size());
  const auto kk = static_cast<Index>(support.size());
  for (std::size_t r = 0; r < opt.rates.size(); ++r) {
    const double rate = opt.rates[r];
    if (!(rate >= 0.0 && rate < 1.0)) throw Error(Errc::invalid_argument, "rate must lie in [0, 1)");
    moments.emplace_back(p, rate > 0.0 ? WeightingMode::exponential(rate) : WeightingMode::uniform());
    out[r].rate = rate;
    out[r].rmse.reserve(steps);
    out[r].coefficients = Matrix::Zero(static_cast<Index>(steps), kk);
    out[r].truth = Matrix::Zero(static_cast<Index>(steps), kk);
  }
  SplitMix64 train_rng(opt.seed, 0);
  SplitMix64 test_rng(opt.seed, 1);
  const auto pp = static_cast<Index>(p);
  Matrix x(static_cast<Index>(batch), pp);
  Vector y(static_cast<Index>(batch));
  Matrix xt(static_cast<Index>(opt.test_size), pp);
  Vector yt(static_cast<Index>(opt.test_size));
  const std::size_t tail = std::min(opt.tail, steps);
  std::vector<double> tail_sse(opt.rates.size(), 0.0);

  for (std::size_t t = 1; t <= steps; ++t) {
    const Vector beta = truth_at(static_cast<double>(t));
    for (Index i = 0; i < x.rows(); ++i) {
      Observation z = draw(train_rng, beta);
      x.row(i) = z.x.transpose();
      y[i] = z.y;
    }
    for (Index i = 0; i < xt.rows(); ++i) {
      Observation z = draw(test_rng, beta);
      xt.row(i) = z.x.transpose();
      yt[i] = z.y;
    }
    const auto row = static_cast<Index>(t - 1);
    for (std::size_t r = 0; r < moments.size(); ++r) {
      moments[r].update_batch(x, y);
      const SparseModel model = ols_th(standardize(moments[r]), k);
      const double err = rmse(predict_rows(model, xt), yt);
      out[r].rmse.push_back(err);
      if (t > steps - tail) tail_sse[r] += err * err;
      for (Index a = 0; a < kk; ++a) {
        const auto j = support[static_cast<std::size_t>(a)];
        out[r].truth(row, a) = beta[static_cast<Index>(j)];
        const auto it = std::find(model.support.begin(), model.support.end(), j);
        if (it != model.support.end()) {
          out[r].coefficients(row, a) = model.beta_orig[static_cast<Index>(it - model.support.begin())];
        }
      }
    }
  }
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r].tail_rmse = std::sqrt(tail_sse[r] / static_cast<double>(tail));
  }
  return out;
}

/// Sinusoidally drifting regression coefficients, OLS-th with k = cfg.k
/// extracted after every batch.
inline std::vector<AdaptationResult> adaptation_experiment(const DriftConfig& cfg,
                                                           const AdaptationOptions& opt) {
  cfg.validate();
  const auto support = support_positions(cfg.k, cfg.spacing);
  return track_drift(
      cfg.p, cfg.k, cfg.steps, cfg.batch, support, [&](double t) { return gen_drift_coeffs(cfg, t); },
      [&](SplitMix64& rng, const Vector& beta) {
        Observation z;
        z.x = gen_design_row(rng, cfg.p, cfg.alpha_corr);
        z.y = gen_response(rng, z.x, beta, Task::regression);
        return z;
      },
      opt);
}

/// Dynamic pricing demand with drifting covariate effects.
inline std::vector<AdaptationResult> pricing_experiment(const PricingConfig& cfg,
                                                        const AdaptationOptions& opt) {
  cfg.validate();
  std::vector<std::size_t> support{0};
  for (std::size_t j = 2; j <= cfg.k; ++j) support.push_back(cfg.spacing * (j - 1));
  return track_drift(
      cfg.p, cfg.k, cfg.steps, cfg.batch, support, [&](double t) { return pricing_coeffs(cfg, t); },
      [&](SplitMix64& rng, const Vector& beta) { return gen_pricing_obs(rng, cfg, beta); }, opt);
}

}  // namespace ravg
