#pragma once

// Model extraction from standardized running averages.
//
// Every extractor works on the pair (S_xx, S_xy) of a StandardizedMoments
// snapshot, i.e. on the quadratic loss 1/2 b^T S_xx b - b^T S_xy, which is
// the offline least-squares loss of the standardized data up to a constant.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ravg/linsolve.hpp"
#include "ravg/parallel.hpp"
#include "ravg/standardize.hpp"

namespace ravg {

using Index = Eigen::Index;
using IndexList = std::vector<Index>;

struct SparseModel {
  std::size_t p = 0;  // feature count of the source stream, 0 if unknown
  std::size_t k = 0;  // requested sparsity
  std::vector<std::size_t> support;  // original feature indices, ascending
  Vector beta_std;                   // aligned with support
  Vector beta_orig;                  // beta_std / sigma_x
  Vector mu_x;                       // feature means of the support
  Vector sigma_x;                    // feature deviations of the support
  double mu_y = 0.0;
  double intercept = 0.0;  // mu_y - sum beta_orig * mu_x

  std::size_t nonzeros() const { return support.size(); }
};

enum class Penalty { lasso, elasticnet, mcp };

inline std::string_view to_string(Penalty p) {
  switch (p) {
    case Penalty::lasso: return "lasso";
    case Penalty::elasticnet: return "elasticnet";
    case Penalty::mcp: return "mcp";
  }
  return "?";
}

struct PenaltySpec {
  Penalty family = Penalty::lasso;
  double lambda = 0.0;
  double l2_mix = 0.0;  // elastic net quadratic weight
  double b = 3.0;       // MCP concavity constant

  void validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) {
      throw Error(Errc::invalid_argument, "penalty lambda must be positive");
    }
    if (!(l2_mix >= 0.0)) throw Error(Errc::invalid_argument, "l2 mix must be >= 0");
    if (family == Penalty::mcp && !(b > 1.0)) {
      throw Error(Errc::invalid_argument, "MCP constant b must exceed 1");
    }
  }
};

struct FsaSchedule {
  std::size_t k = 1;
  std::size_t iterations = 100;  // T
  double mu = 10.0;              // annealing parameter
  double eta = 0.0;              // learning rate; <= 0 selects 0.9 / lambda_max
};

inline constexpr std::size_t kPenalizedIterations = 500;
inline constexpr double kPenalizedTolerance = 1e-9;
inline constexpr std::size_t kPowerIterations = 20;

// ---------------------------------------------------------------------------
// Building blocks

/// Positions of the k largest |values|; ties go to the lower position.
/// The result is sorted ascending.
inline IndexList select_top_k(const Vector& values, std::size_t k) {
  const auto count = static_cast<std::size_t>(values.size());
  IndexList order(count);
  std::iota(order.begin(), order.end(), Index{0});
  k = std::min(k, count);
  auto ranks_before = [&](Index a, Index b) {
    const double fa = std::abs(values[a]);
    const double fb = std::abs(values[b]);
    return fa != fb ? fa > fb : a < b;
  };
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                   ranks_before);
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

/// Number of survivors after annealing step t (1-based) of T.
inline std::size_t annealing_count(std::size_t t, std::size_t p, std::size_t k, std::size_t T,
                                   double mu) {
  const double spread = static_cast<double>(p - k);
  const double remaining = static_cast<double>(T) - static_cast<double>(t);
  const double denom = static_cast<double>(t) * mu + static_cast<double>(T);
  const double extra = remaining > 0.0 ? std::floor(spread * remaining / denom) : 0.0;
  return k + static_cast<std::size_t>(extra);
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration from 1/sqrt(d).
inline double lambda_max_estimate(const Matrix& s, std::size_t iterations = kPowerIterations) {
  const auto d = s.rows();
  Vector v = Vector::Constant(d, 1.0 / std::sqrt(static_cast<double>(d)));
  double rayleigh = 0.0;
  for (std::size_t it = 0; it < iterations; ++it) {
    const Vector w = s * v;
    rayleigh = v.dot(w);
    const double norm = w.norm();
    if (!(norm > 0.0)) break;
    v = w / norm;
  }
  return rayleigh;
}

/// Default learning rate 0.9 / lambda_max for gradient schemes on `s`.
inline double default_step(const Matrix& s) {
  const double top = lambda_max_estimate(s);
  return top > 0.0 ? 0.9 / top : 1.0;
}

inline double default_ridge(const Matrix& s) {
  return 1e-3 * s.trace() / static_cast<double>(s.rows());
}

/// Scalar thresholding map applied after each gradient step.
inline double threshold_operator(double t, double thr, const PenaltySpec& spec) {
  const double mag = std::abs(t);
  const double sign = t < 0.0 ? -1.0 : 1.0;
  switch (spec.family) {
    case Penalty::lasso:
    case Penalty::elasticnet:
      return mag > thr ? sign * (mag - thr) : 0.0;
    case Penalty::mcp:
      if (mag <= thr) return 0.0;
      if (mag <= spec.b * thr) return (t - thr * sign) / (1.0 - 1.0 / spec.b);
      return t;
  }
  return t;
}

/// Quadratic loss 1/2 b^T S b - b^T s of the standardized problem.
inline double quadratic_loss(const Matrix& s, const Vector& sxy, const Vector& beta) {
  return 0.5 * beta.dot(s * beta) - beta.dot(sxy);
}

inline Vector quadratic_gradient(const Matrix& s, const Vector& sxy, const Vector& beta) {
  return s * beta - sxy;
}

namespace detail {

inline void check_sparsity(std::size_t k, std::size_t retained) {
  if (k < 1 || k > retained) {
    throw Error(Errc::invalid_sparsity, "sparsity " + std::to_string(k) + " outside [1, " +
                                            std::to_string(retained) + "]");
  }
}

inline void check_finite(const Vector& beta, double eta, std::size_t iteration) {
  if (!beta.allFinite()) {
    throw Error(Errc::diverged, "non-finite coefficients at iteration " + std::to_string(iteration) +
                                    " with eta = " + std::to_string(eta));
  }
}

/// Least-squares refit of the standardized problem restricted to `positions`.
inline Vector refit(const StandardizedMoments& sm, const IndexList& positions) {
  if (positions.empty()) return Vector();
  return solve_spd({sm.s_xx(positions, positions), sm.s_xy(positions)});
}

}  // namespace detail

/// Maps retained-feature positions and standardized coefficients to a model.
inline SparseModel make_model(const StandardizedMoments& sm, const IndexList& positions,
                              const Vector& beta_std, std::size_t k) {
  SparseModel model;
  model.p = sm.p;
  model.k = k;
  model.mu_y = sm.mu_y;
  const auto m = static_cast<Index>(positions.size());
  model.beta_std = beta_std;
  model.beta_orig.resize(m);
  model.mu_x.resize(m);
  model.sigma_x.resize(m);
  model.intercept = sm.mu_y;
  for (Index a = 0; a < m; ++a) {
    const auto j = sm.kept[static_cast<std::size_t>(positions[static_cast<std::size_t>(a)])];
    model.support.push_back(j);
    const auto jj = static_cast<Index>(j);
    model.mu_x[a] = sm.mu_x[jj];
    model.sigma_x[a] = sm.sigma_x[jj];
    model.beta_orig[a] = beta_std[a] / sm.sigma_x[jj];
    model.intercept -= model.beta_orig[a] * sm.mu_x[jj];
  }
  return model;
}

inline IndexList all_positions(const StandardizedMoments& sm) {
  IndexList all(sm.retained());
  std::iota(all.begin(), all.end(), Index{0});
  return all;
}

// ---------------------------------------------------------------------------
// Extractors

/// Dense least squares on every retained feature.
inline SparseModel ols(const StandardizedMoments& sm) {
  const Vector beta = solve_spd({sm.s_xx, sm.s_xy});
  return make_model(sm, all_positions(sm), beta, sm.retained());
}

/// Dense first-stage estimate used by OLS-th: OLS, or ridge when requested,
/// when there are no more observations than features, or when S_xx is singular.
inline Vector dense_estimate(const StandardizedMoments& sm, std::optional<double> ridge_lambda) {
  if (ridge_lambda) return solve_ridge({sm.s_xx, sm.s_xy}, *ridge_lambda);
  if (sm.effective_n <= static_cast<double>(sm.retained())) {
    return solve_ridge({sm.s_xx, sm.s_xy}, default_ridge(sm.s_xx));
  }
  try {
    return solve_spd({sm.s_xx, sm.s_xy});
  } catch (const Error& e) {
    if (e.code() != Errc::singular_system) throw;
    return solve_ridge({sm.s_xx, sm.s_xy}, default_ridge(sm.s_xx));
  }
}

/// Least squares, keep the k largest |beta|, refit on the survivors.
inline SparseModel ols_th(const StandardizedMoments& sm, std::size_t k,
                          std::optional<double> ridge_lambda = std::nullopt) {
  detail::check_sparsity(k, sm.retained());
  const Vector dense = dense_estimate(sm, ridge_lambda);
  const IndexList keep = select_top_k(dense, k);
  return make_model(sm, keep, detail::refit(sm, keep), k);
}

/// Result of the annealed selection before the final refit.
struct FsaState {
  IndexList survivors;  // retained-feature positions, ascending
  Vector beta;          // aligned with survivors
  double eta = 0.0;
};

/// Gradient steps on the surviving coordinates interleaved with pruning to
/// the annealing schedule M_t.
inline FsaState ofsa_select(const Matrix& s, const Vector& sxy, const FsaSchedule& sched) {
  const auto r = static_cast<std::size_t>(s.rows());
  detail::check_sparsity(sched.k, r);
  if (sched.iterations < 1) throw Error(Errc::invalid_argument, "OFSA needs T >= 1");
  FsaState st;
  st.eta = sched.eta > 0.0 ? sched.eta : default_step(s);
  st.survivors.resize(r);
  std::iota(st.survivors.begin(), st.survivors.end(), Index{0});
  st.beta = Vector::Zero(static_cast<Index>(r));
  Matrix sub = s;
  Vector rhs = sxy;
  for (std::size_t t = 1; t <= sched.iterations; ++t) {
    st.beta -= st.eta * (sub * st.beta - rhs);
    detail::check_finite(st.beta, st.eta, t);
    const std::size_t target = annealing_count(t, r, sched.k, sched.iterations, sched.mu);
    if (target < st.survivors.size()) {
      const IndexList keep = select_top_k(st.beta, target);
      IndexList next(keep.size());
      for (std::size_t a = 0; a < keep.size(); ++a) next[a] = st.survivors[static_cast<std::size_t>(keep[a])];
      st.beta = Vector(st.beta(keep));
      st.survivors = std::move(next);
      sub = s(st.survivors, st.survivors);
      rhs = sxy(st.survivors);
    }
  }
  return st;
}

inline SparseModel ofsa(const StandardizedMoments& sm, const FsaSchedule& sched) {
  const FsaState st = ofsa_select(sm.s_xx, sm.s_xy, sched);
  return make_model(sm, st.survivors, detail::refit(sm, st.survivors), sched.k);
}

/// Thresholded gradient descent from beta = 0; returns the coefficients
/// before the final refit.
inline Vector penalized_coefficients(const Matrix& s, const Vector& sxy, const PenaltySpec& spec,
                                     std::size_t iterations, double eta) {
  spec.validate();
  if (iterations < 1) throw Error(Errc::invalid_argument, "need at least one iteration");
  if (!(eta > 0.0)) eta = default_step(s);
  const double thr = eta * spec.lambda;
  const double ridge = spec.family == Penalty::elasticnet ? spec.l2_mix : 0.0;
  Vector beta = Vector::Zero(s.rows());
  Vector next(s.rows());
  for (std::size_t t = 1; t <= iterations; ++t) {
    next = beta - eta * (s * beta - sxy + ridge * beta);
    for (Index j = 0; j < next.size(); ++j) next[j] = threshold_operator(next[j], thr, spec);
    detail::check_finite(next, eta, t);
    const double change = (next - beta).lpNorm<Eigen::Infinity>();
    beta.swap(next);
    if (change < kPenalizedTolerance) break;
  }
  return beta;
}

inline IndexList nonzero_positions(const Vector& beta) {
  IndexList nz;
  for (Index j = 0; j < beta.size(); ++j) {
    if (beta[j] != 0.0) nz.push_back(j);
  }
  return nz;
}

/// Penalized regression by thresholded gradient descent, then OLS on the
/// selected features. The model's k is the number of selected features.
inline SparseModel penalized_gd(const StandardizedMoments& sm, const PenaltySpec& spec,
                                std::size_t iterations = kPenalizedIterations, double eta = 0.0) {
  const Vector beta = penalized_coefficients(sm.s_xx, sm.s_xy, spec, iterations, eta);
  const IndexList nz = nonzero_positions(beta);
  return make_model(sm, nz, detail::refit(sm, nz), nz.size());
}

struct TuneOptions {
  std::size_t grid_size = 200;
  double ratio = 1e-3;  // lambda_min / lambda_max
  double l2_mix = 0.0;
  double mcp_b = 3.0;
  std::size_t iterations = kPenalizedIterations;
  double eta = 0.0;
  std::size_t threads = 1;
};

struct TunedModel {
  double lambda = 0.0;
  SparseModel model;
  std::vector<double> grid;
  std::vector<std::size_t> nonzeros;  // pre-refit nonzero count per grid point
  bool warning = false;               // no grid point produced 1..k nonzeros
};

/// Exponential grid from lambda_max = ||S_xy||_inf down by `ratio`.
inline std::vector<double> lambda_grid(const StandardizedMoments& sm, std::size_t grid_size,
                                       double ratio) {
  if (grid_size < 2) throw Error(Errc::invalid_argument, "lambda grid needs at least 2 points");
  const double top = sm.s_xy.lpNorm<Eigen::Infinity>();
  std::vector<double> grid(grid_size);
  for (std::size_t i = 0; i < grid_size; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(grid_size - 1);
    grid[i] = top * std::pow(ratio, frac);
  }
  return grid;
}

/// Picks the grid lambda whose nonzero count is the largest value <= k
/// (earliest grid point on ties).
inline TunedModel tune_lambda_for_sparsity(const StandardizedMoments& sm, Penalty family,
                                           std::size_t k, const TuneOptions& opt = {}) {
  detail::check_sparsity(k, sm.retained());
  TunedModel out;
  out.grid = lambda_grid(sm, opt.grid_size, opt.ratio);
  if (!(out.grid.front() > 0.0)) {
    out.warning = true;
    out.model = make_model(sm, {}, Vector(), k);
    return out;
  }
  const double eta = opt.eta > 0.0 ? opt.eta : default_step(sm.s_xx);
  std::vector<Vector> coefs(out.grid.size());
  parallel_for(
      out.grid.size(),
      [&](std::size_t i) {
        const PenaltySpec spec{family, out.grid[i], opt.l2_mix, opt.mcp_b};
        coefs[i] = penalized_coefficients(sm.s_xx, sm.s_xy, spec, opt.iterations, eta);
      },
      opt.threads);
  out.nonzeros.resize(out.grid.size());
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < out.grid.size(); ++i) {
    const auto count = static_cast<std::size_t>((coefs[i].array() != 0.0).count());
    out.nonzeros[i] = count;
    if (count <= k && (!best || count > out.nonzeros[*best])) best = i;
  }
  if (!best) {
    out.warning = true;
    out.model = make_model(sm, {}, Vector(), k);
    return out;
  }
  out.lambda = out.grid[*best];
  out.warning = out.nonzeros[*best] == 0;
  const IndexList nz = nonzero_positions(coefs[*best]);
  out.model = make_model(sm, nz, detail::refit(sm, nz), k);
  return out;
}

// ---------------------------------------------------------------------------
// Prediction

inline double predict(const SparseModel& model, std::span<const double> x) {
  if (model.p != 0 ? x.size() != model.p
                   : (!model.support.empty() && x.size() <= model.support.back())) {
    throw Error(Errc::invalid_dimension, "prediction input has " + std::to_string(x.size()) +
                                             " features, model expects " + std::to_string(model.p));
  }
  double yhat = model.intercept;
  for (std::size_t a = 0; a < model.support.size(); ++a) {
    yhat += model.beta_orig[static_cast<Index>(a)] * x[model.support[a]];
  }
  return yhat;
}

inline double predict(const SparseModel& model, const Vector& x) {
  return predict(model, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
}

/// Same prediction written in terms of the standardized coefficients.
inline double predict_standardized(const SparseModel& model, const Vector& x) {
  double yhat = model.mu_y;
  for (std::size_t a = 0; a < model.support.size(); ++a) {
    const auto i = static_cast<Index>(a);
    yhat += model.beta_std[i] * (x[static_cast<Index>(model.support[a])] - model.mu_x[i]) /
            model.sigma_x[i];
  }
  return yhat;
}

/// Predictions for every row of `x`.
inline Vector predict_rows(const SparseModel& model, const Matrix& x) {
  Vector out = Vector::Constant(x.rows(), model.intercept);
  for (std::size_t a = 0; a < model.support.size(); ++a) {
    out += model.beta_orig[static_cast<Index>(a)] * x.col(static_cast<Index>(model.support[a]));
  }
  return out;
}

inline int predict_class(const SparseModel& model, const Vector& x) {
  return predict(model, x) >= 0.0 ? 1 : -1;
}

// ---------------------------------------------------------------------------
// Model file: "ravg-model v1", "k <k>", "intercept <v>", then one line per
// support member "index beta_orig beta_std mu_x sigma_x".

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_model(std::ostream& out, const SparseModel& model) {
  out << "ravg-model v1\n";
  out << "k " << model.k << '\n';
  out << "intercept " << format_double(model.intercept) << '\n';
  for (std::size_t a = 0; a < model.support.size(); ++a) {
    const auto i = static_cast<Index>(a);
    out << model.support[a] << ' ' << format_double(model.beta_orig[i]) << ' '
        << format_double(model.beta_std[i]) << ' ' << format_double(model.mu_x[i]) << ' '
        << format_double(model.sigma_x[i]) << '\n';
  }
}

inline SparseModel read_model(std::istream& in) {
  auto fail = [](const std::string& what) { throw Error(Errc::parse_error, "model file: " + what); };
  std::string line;
  if (!std::getline(in, line) || line != "ravg-model v1") fail("missing 'ravg-model v1' header");
  SparseModel model;
  std::string key;
  if (!std::getline(in, line)) fail("missing k");
  {
    std::istringstream ls(line);
    if (!(ls >> key >> model.k) || key != "k") fail("bad k line");
  }
  if (!std::getline(in, line)) fail("missing intercept");
  {
    std::istringstream ls(line);
    if (!(ls >> key >> model.intercept) || key != "intercept") fail("bad intercept line");
  }
  std::vector<double> bo, bs, mu, sd;
  std::size_t line_no = 3;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t idx = 0;
    double v[4];
    if (!(ls >> idx >> v[0] >> v[1] >> v[2] >> v[3])) fail("bad support line " + std::to_string(line_no));
    if (!model.support.empty() && idx <= model.support.back()) fail("support indices must ascend");
    model.support.push_back(idx);
    bo.push_back(v[0]);
    bs.push_back(v[1]);
    mu.push_back(v[2]);
    sd.push_back(v[3]);
  }
  const auto m = static_cast<Index>(model.support.size());
  model.beta_orig = Eigen::Map<Vector>(bo.data(), m);
  model.beta_std = Eigen::Map<Vector>(bs.data(), m);
  model.mu_x = Eigen::Map<Vector>(mu.data(), m);
  model.sigma_x = Eigen::Map<Vector>(sd.data(), m);
  model.mu_y = model.intercept + model.beta_orig.dot(model.mu_x);
  return model;
}

}  // namespace ravg
