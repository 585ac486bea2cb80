#pragma once

// Seedable synthetic data for the simulation experiments.
//
// Random numbers come from SplitMix64 (Steele, Lea & Flood): the k-th output
// of a stream is mix(state0 + k * 0x9E3779B97F4A7C15) with the mix constants
// below. Normals use the Box-Muller transform on 53-bit uniforms, so a
// (seed, shard) pair yields the same stream on every platform.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ravg/moments.hpp"

namespace ravg {

class SplitMix64 {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
  static constexpr std::uint64_t kShardGamma = 0xD1B54A32D192ED03ULL;

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  explicit SplitMix64(std::uint64_t seed, std::uint64_t shard = 0)
      : state_(mix(seed + mix(shard * kShardGamma + kGamma))) {}

  std::uint64_t next() {
    state_ += kGamma;
    return mix(state_);
  }

  /// Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>(next() >> 11) + 0.5) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double radius = std::sqrt(-2.0 * std::log(uniform()));
    const double angle = 2.0 * std::numbers::pi * uniform();
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

enum class Task { regression, classification };

/// Synthetic regression/classification setup with equally correlated features.
struct GenConfig {
  std::size_t p = 100;
  std::size_t n = 1000;
  std::size_t k_star = 10;
  double beta_strength = 1.0;
  double alpha_corr = 1.0;  // pairwise feature correlation alpha^2 / (1 + alpha^2)
  Task task = Task::regression;
  std::uint64_t seed = 1;
  std::size_t spacing = 10;  // true features sit at 1-based indices spacing * j
  double noise = 1.0;        // standard deviation of the additive noise

  void validate() const {
    if (p == 0) throw Error(Errc::invalid_dimension, "p must be >= 1");
    if (spacing == 0 || k_star * spacing > p) {
      throw Error(Errc::invalid_argument, "true support does not fit: k* * spacing > p");
    }
    if (!(beta_strength > 0.0)) throw Error(Errc::invalid_argument, "signal strength must be > 0");
  }
};

/// 0-based positions spacing*j - 1 for j = 1..k.
inline std::vector<std::size_t> support_positions(std::size_t k, std::size_t spacing) {
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t j = 1; j <= k; ++j) out.push_back(spacing * j - 1);
  return out;
}

/// Spacing 10 when it fits, otherwise the widest even spacing floor(p / k).
inline std::size_t default_spacing(std::size_t p, std::size_t k) {
  return 10 * k <= p ? 10 : std::max<std::size_t>(1, p / std::max<std::size_t>(k, 1));
}

inline std::vector<std::size_t> true_support(const GenConfig& cfg) {
  return support_positions(cfg.k_star, cfg.spacing);
}

inline Vector beta_star(const GenConfig& cfg) {
  Vector beta = Vector::Zero(static_cast<Eigen::Index>(cfg.p));
  for (auto j : true_support(cfg)) beta[static_cast<Eigen::Index>(j)] = cfg.beta_strength;
  return beta;
}

/// x = alpha * z * 1 + u with z ~ N(0, 1), u ~ N(0, I).
template <class Out>
void gen_design_row(SplitMix64& rng, double alpha_corr, Out&& x) {
  const double common = alpha_corr * rng.normal();
  for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = common + rng.normal();
}

inline Vector gen_design_row(SplitMix64& rng, std::size_t p, double alpha_corr) {
  Vector x(static_cast<Eigen::Index>(p));
  gen_design_row(rng, alpha_corr, x);
  return x;
}

inline double sign_label(double v) { return v >= 0.0 ? 1.0 : -1.0; }

/// y = x^T beta* + eta (regression) or sign(x^T beta* + eta) (classification).
/// `noise` scales eta; 0 gives the noiseless variant without consuming randomness.
inline double gen_response(SplitMix64& rng, const Vector& x, const Vector& beta, Task task,
                           double noise = 1.0) {
  const double eta = noise != 0.0 ? noise * rng.normal() : 0.0;
  const double signal = x.dot(beta) + eta;
  return task == Task::classification ? sign_label(signal) : signal;
}

/// Stream of observations for a GenConfig. Rows are produced in a fixed
/// order (z, u_1..u_p, eta), so batched and row-wise draws coincide.
class SyntheticStream {
 public:
  explicit SyntheticStream(const GenConfig& cfg, std::uint64_t shard = 0)
      : cfg_(cfg), rng_(cfg.seed, shard), beta_(beta_star(cfg)) {
    cfg_.validate();
  }

  const GenConfig& config() const { return cfg_; }
  const Vector& beta() const { return beta_; }

  Observation next() {
    Observation obs;
    obs.x.resize(static_cast<Eigen::Index>(cfg_.p));
    gen_design_row(rng_, cfg_.alpha_corr, obs.x);
    obs.y = gen_response(rng_, obs.x, beta_, cfg_.task, cfg_.noise);
    return obs;
  }

  /// Fills `rows` observations into x (rows x p) and y.
  void fill(Eigen::Index rows, Matrix& x, Vector& y) {
    x.resize(rows, static_cast<Eigen::Index>(cfg_.p));
    y.resize(rows);
    Vector row(static_cast<Eigen::Index>(cfg_.p));
    for (Eigen::Index i = 0; i < rows; ++i) {
      gen_design_row(rng_, cfg_.alpha_corr, row);
      x.row(i) = row.transpose();
      y[i] = gen_response(rng_, row, beta_, cfg_.task, cfg_.noise);
    }
  }

 private:
  GenConfig cfg_;
  SplitMix64 rng_;
  Vector beta_;
};

// ---------------------------------------------------------------------------
// Drifting coefficients: beta_tj = a sin(2 pi (t - phase_step * j) / T) + b

struct DriftConfig {
  double a = 0.4;
  double b = 0.6;
  double period = 1000.0;  // T
  std::size_t k = 10;
  std::size_t p = 100;
  std::size_t spacing = 10;
  double phase_step = 100.0;
  std::size_t batch = 1000;  // observations per time step
  std::size_t steps = 1000;
  double alpha_corr = 1.0;

  void validate() const {
    if (!(period > 0.0)) throw Error(Errc::invalid_argument, "drift period must be > 0");
    if (!std::isfinite(a) || !std::isfinite(b)) throw Error(Errc::invalid_argument, "a, b must be finite");
    if (k * spacing > p) throw Error(Errc::invalid_argument, "drifting support does not fit in p");
  }
};

inline double drift_value(double a, double b, double period, double phase_step, double t,
                          std::size_t j) {
  return a * std::sin(2.0 * std::numbers::pi * (t - phase_step * static_cast<double>(j)) / period) + b;
}

/// Coefficient vector at time step t (t >= 1).
inline Vector gen_drift_coeffs(const DriftConfig& cfg, double t) {
  Vector beta = Vector::Zero(static_cast<Eigen::Index>(cfg.p));
  for (std::size_t j = 1; j <= cfg.k; ++j) {
    beta[static_cast<Eigen::Index>(cfg.spacing * j - 1)] =
        drift_value(cfg.a, cfg.b, cfg.period, cfg.phase_step, t, j);
  }
  return beta;
}

// ---------------------------------------------------------------------------
// Dynamic pricing: D_t = beta_0 + gamma p_t + x_t beta_t + eps_t

struct PricingConfig {
  std::size_t p = 100;  // total features; feature 0 is the price
  std::size_t k = 10;   // price plus k - 1 drifting covariates
  double gamma = -0.5;
  double intercept = 0.0;
  double price_lo = 10.0;
  double price_hi = 20.0;
  double a = 0.2;
  double b = 0.4;
  double period = 2000.0;
  double phase_step = 100.0;
  std::size_t spacing = 10;
  std::size_t batch = 200;
  std::size_t steps = 2000;
  double alpha_corr = 1.0;
  double noise = 1.0;

  void validate() const {
    if (p < 2) throw Error(Errc::invalid_dimension, "pricing needs p >= 2");
    if (k < 1 || spacing * (k - 1) >= p) throw Error(Errc::invalid_argument, "pricing support does not fit");
    if (!(price_hi >= price_lo)) throw Error(Errc::invalid_argument, "empty price range");
  }
};

/// Full coefficient vector (price first) at time t. Covariate j = 2..k of the
/// drifting model sits at feature index spacing * (j - 1).
inline Vector pricing_coeffs(const PricingConfig& cfg, double t) {
  Vector beta = Vector::Zero(static_cast<Eigen::Index>(cfg.p));
  beta[0] = cfg.gamma;
  for (std::size_t j = 2; j <= cfg.k; ++j) {
    beta[static_cast<Eigen::Index>(cfg.spacing * (j - 1))] =
        drift_value(cfg.a, cfg.b, cfg.period, cfg.phase_step, t, j);
  }
  return beta;
}

/// One demand observation under the coefficient vector `beta` (price first).
inline Observation gen_pricing_obs(SplitMix64& rng, const PricingConfig& cfg, const Vector& beta) {
  Observation obs;
  obs.x.resize(static_cast<Eigen::Index>(cfg.p));
  obs.x[0] = rng.uniform(cfg.price_lo, cfg.price_hi);
  gen_design_row(rng, cfg.alpha_corr, obs.x.tail(obs.x.size() - 1));
  const double eps = cfg.noise != 0.0 ? cfg.noise * rng.normal() : 0.0;
  obs.y = cfg.intercept + obs.x.dot(beta) + eps;
  return obs;
}

inline Observation gen_pricing_obs(SplitMix64& rng, const PricingConfig& cfg, double t) {
  return gen_pricing_obs(rng, cfg, pricing_coeffs(cfg, t));
}

// ---------------------------------------------------------------------------

/// Layout: x_1..x_p, x_1^2..x_p^2, then x_i x_j for i < j in lexicographic order.
inline Vector expand_interactions(const Vector& x) {
  const auto p = x.size();
  if (p < 2) throw Error(Errc::invalid_dimension, "interaction expansion needs p >= 2");
  Vector out(2 * p + p * (p - 1) / 2);
  out.head(p) = x;
  out.segment(p, p) = x.array().square().matrix();
  Eigen::Index at = 2 * p;
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = i + 1; j < p; ++j) out[at++] = x[i] * x[j];
  }
  return out;
}

inline void write_csv_header(std::ostream& out, std::size_t p) {
  for (std::size_t j = 1; j <= p; ++j) out << 'x' << j << ',';
  out << "y\n";
}

inline void write_csv_row(std::ostream& out, std::span<const double> x, double y) {
  char buf[32];
  for (double v : x) {
    std::snprintf(buf, sizeof buf, "%.17g,", v);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%.17g\n", y);
  out << buf;
}

}  // namespace ravg
