#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ravg/moments.hpp"

namespace ravg {

/// Moments of the centered, unit-variance features and the centered response.
///
/// Features whose standard deviation is negligible are excluded: `kept` lists
/// the original indices of the retained features, and all matrices/vectors
/// below are indexed by position in `kept`. `mu_x`/`sigma_x` keep the full
/// length p so models can be mapped back to the original feature scale.
struct StandardizedMoments {
  std::size_t p = 0;
  std::uint64_t n = 0;
  double effective_n = 0.0;
  Matrix s_xx;  // Pi (S_xx - mu_x mu_x^T) Pi, retained features only
  Vector s_xy;  // Pi (S_xy - mu_y mu_x), retained features only
  double var_y = 0.0;
  Vector sigma_x;  // length p, 0 for dropped features
  Vector mu_x;     // length p
  double mu_y = 0.0;
  std::vector<std::size_t> kept;
  std::vector<std::size_t> dropped;

  std::size_t retained() const { return kept.size(); }
};

inline constexpr double kDefaultMinSigma = 1e-12;

inline StandardizedMoments standardize(const MomentSet& m, double min_sigma = kDefaultMinSigma) {
  if (m.n() < 2) {
    throw Error(Errc::insufficient_data,
                "standardization needs at least 2 observations, have " + std::to_string(m.n()));
  }
  const auto p = static_cast<Eigen::Index>(m.p());
  StandardizedMoments out;
  out.p = m.p();
  out.n = m.n();
  out.effective_n = m.effective_n();
  out.mu_x = m.mu_x();
  out.mu_y = m.mu_y();
  out.var_y = m.s_yy() - m.mu_y() * m.mu_y();

  Vector sigma(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double var = m.s_xx()(j, j) - m.mu_x()[j] * m.mu_x()[j];
    sigma[j] = var > 0.0 ? std::sqrt(var) : 0.0;
  }
  const double cutoff = min_sigma * sigma.maxCoeff();
  for (Eigen::Index j = 0; j < p; ++j) {
    if (sigma[j] > cutoff && sigma[j] > 0.0) {
      out.kept.push_back(static_cast<std::size_t>(j));
    } else {
      out.dropped.push_back(static_cast<std::size_t>(j));
      sigma[j] = 0.0;
    }
  }
  out.sigma_x = sigma;
  if (out.kept.empty()) {
    throw Error(Errc::degenerate_moments, "every feature has zero variance");
  }

  const auto r = static_cast<Eigen::Index>(out.kept.size());
  out.s_xx.resize(r, r);
  out.s_xy.resize(r);
  for (Eigen::Index a = 0; a < r; ++a) {
    const auto i = static_cast<Eigen::Index>(out.kept[static_cast<std::size_t>(a)]);
    const double inv_i = 1.0 / sigma[i];
    out.s_xy[a] = inv_i * (m.s_xy()[i] - m.mu_y() * m.mu_x()[i]);
    for (Eigen::Index b = 0; b <= a; ++b) {
      const auto j = static_cast<Eigen::Index>(out.kept[static_cast<std::size_t>(b)]);
      const double cov = m.s_xx()(i, j) - m.mu_x()[i] * m.mu_x()[j];
      const double v = inv_i * cov / sigma[j];
      out.s_xx(a, b) = v;
      out.s_xx(b, a) = v;
    }
  }
  return out;
}

}  // namespace ravg
