#pragma once

#include <cmath>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "ravg/error.hpp"

namespace ravg {

/// Normal-equations system A beta = b with symmetric A.
struct SpdSystem {
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
};

inline constexpr double kPivotTolerance = 1e-12;

namespace detail {

// Cholesky factor of `a`; every pivot (squared diagonal of L) must exceed
// kPivotTolerance * trace(a) / d.
inline Eigen::LLT<Eigen::MatrixXd> factor_spd(const Eigen::MatrixXd& a) {
  const auto d = a.rows();
  if (d == 0 || a.cols() != d) throw Error(Errc::invalid_dimension, "system matrix must be square, d >= 1");
  const double trace = a.trace();
  if (!(trace > 0.0) || !std::isfinite(trace)) {
    throw Error(Errc::singular_system, "matrix trace is not positive");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  const double floor = kPivotTolerance * trace / static_cast<double>(d);
  if (llt.info() != Eigen::Success) {
    throw Error(Errc::singular_system, "non-positive pivot in Cholesky factorization");
  }
  const auto& l = llt.matrixLLT();
  for (Eigen::Index j = 0; j < d; ++j) {
    const double pivot = l(j, j) * l(j, j);
    if (!(pivot > floor)) {
      throw Error(Errc::singular_system, "pivot " + std::to_string(j) + " below tolerance");
    }
  }
  return llt;
}

}  // namespace detail

inline Eigen::VectorXd solve_spd(const SpdSystem& sys) {
  if (sys.b.size() != sys.a.rows()) throw Error(Errc::invalid_dimension, "rhs length mismatch");
  return detail::factor_spd(sys.a).solve(sys.b);
}

/// Solves (A + lambda I) beta = b.
inline Eigen::VectorXd solve_ridge(const SpdSystem& sys, double lambda_ridge) {
  if (!(lambda_ridge >= 0.0)) throw Error(Errc::invalid_argument, "ridge lambda must be >= 0");
  if (lambda_ridge == 0.0) return solve_spd(sys);
  SpdSystem reg{sys.a, sys.b};
  reg.a.diagonal().array() += lambda_ridge;
  return solve_spd(reg);
}

/// Inverse of an SPD matrix via its Cholesky factor.
inline Eigen::MatrixXd inverse_spd(const Eigen::MatrixXd& a) {
  const auto llt = detail::factor_spd(a);
  return llt.solve(Eigen::MatrixXd::Identity(a.rows(), a.cols()));
}

/// Sherman-Morrison: given Ainv = A^{-1} (symmetric), returns (A + w v v^T)^{-1}.
inline Eigen::MatrixXd rank1_update_inverse(const Eigen::MatrixXd& a_inv, const Eigen::VectorXd& v,
                                            double weight) {
  if (a_inv.rows() != v.size() || a_inv.cols() != v.size()) {
    throw Error(Errc::invalid_dimension, "rank-1 update dimension mismatch");
  }
  if (weight == 0.0) return a_inv;
  const Eigen::VectorXd u = a_inv * v;
  const double denom = 1.0 + weight * v.dot(u);
  if (!(denom > 1e-12)) {
    throw Error(Errc::breakdown, "Sherman-Morrison denominator " + std::to_string(denom));
  }
  Eigen::MatrixXd out = a_inv;
  out.noalias() -= (weight / denom) * u * u.transpose();
  return out;
}

/// In-place variant used on hot paths; keeps the result exactly symmetric.
inline void rank1_update_inverse_inplace(Eigen::MatrixXd& a_inv, const Eigen::VectorXd& v,
                                         double weight) {
  if (weight == 0.0) return;
  const Eigen::VectorXd u = a_inv * v;
  const double denom = 1.0 + weight * v.dot(u);
  if (!(denom > 1e-12)) {
    throw Error(Errc::breakdown, "Sherman-Morrison denominator " + std::to_string(denom));
  }
  a_inv.template selfadjointView<Eigen::Lower>().rankUpdate(u, -weight / denom);
  for (Eigen::Index j = 1; j < a_inv.cols(); ++j) {
    for (Eigen::Index i = 0; i < j; ++i) a_inv(i, j) = a_inv(j, i);
  }
}

}  // namespace ravg
