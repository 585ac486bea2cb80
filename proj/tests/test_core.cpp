// Moments, standardization and dense solvers.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "ravg/linsolve.hpp"
#include "ravg/moments.hpp"
#include "ravg/standardize.hpp"

using namespace ravg;

namespace {

MomentSet accumulate_rows(const oracle::Mat& x, const oracle::Vec& y,
                          WeightingMode mode = WeightingMode::uniform()) {
  MomentSet m(static_cast<std::size_t>(x.cols()), mode);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Vector row = x.row(i).transpose();
    m.update(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())), y[i]);
  }
  return m;
}

double max_field_gap(const MomentSet& a, const MomentSet& b) {
  double gap = std::abs(a.mu_y() - b.mu_y()) + std::abs(a.s_yy() - b.s_yy());
  gap = std::max(gap, (a.mu_x() - b.mu_x()).cwiseAbs().maxCoeff());
  gap = std::max(gap, (a.s_xy() - b.s_xy()).cwiseAbs().maxCoeff());
  gap = std::max(gap, (a.s_xx() - b.s_xx()).cwiseAbs().maxCoeff());
  return gap;
}

template <class F>
Errc code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no ravg::Error thrown";
  return Errc::io_error;
}

std::span<const std::byte> as_span(const std::vector<std::byte>& v) { return {v.data(), v.size()}; }

}  // namespace

// ---------------------------------------------------------------------------
// moments

TEST(Moments, TwoRowsByHand) {
  MomentSet m(2);
  const double r1[] = {1.0, 2.0};
  const double r2[] = {3.0, 4.0};
  m.update(r1, 5.0);
  m.update(r2, 6.0);
  EXPECT_EQ(m.n(), 2u);
  EXPECT_DOUBLE_EQ(m.mu_x()[0], 2.0);
  EXPECT_DOUBLE_EQ(m.mu_x()[1], 3.0);
  EXPECT_DOUBLE_EQ(m.mu_y(), 5.5);
  EXPECT_DOUBLE_EQ(m.s_xx()(0, 0), 5.0);
  EXPECT_DOUBLE_EQ(m.s_xx()(0, 1), 7.0);
  EXPECT_DOUBLE_EQ(m.s_xx()(1, 0), 7.0);
  EXPECT_DOUBLE_EQ(m.s_xx()(1, 1), 10.0);
  EXPECT_DOUBLE_EQ(m.s_xy()[0], 11.5);
  EXPECT_DOUBLE_EQ(m.s_xy()[1], 17.0);
  EXPECT_DOUBLE_EQ(m.s_yy(), 30.5);
}

TEST(Moments, FirstUpdateCopiesObservation) {
  MomentSet m(3, WeightingMode::exponential(0.05));
  const double x[] = {1.5, -2.0, 4.0};
  m.update(x, 3.0);
  EXPECT_DOUBLE_EQ(m.mu_x()[2], 4.0);
  EXPECT_DOUBLE_EQ(m.s_xx()(0, 2), 6.0);
  EXPECT_DOUBLE_EQ(m.s_yy(), 9.0);
}

TEST(Moments, MatchesBruteForceAverages) {
  std::mt19937_64 rng(11);
  const auto d = oracle::random_data(rng, 500, 7);
  const auto ref = oracle::brute_moments(d.x, d.y);
  const MomentSet m = accumulate_rows(d.x, d.y);
  EXPECT_EQ(m.n(), 500u);
  const double scale = ref.s_xx.cwiseAbs().maxCoeff();
  EXPECT_LT((m.s_xx() - ref.s_xx).cwiseAbs().maxCoeff(), 1e-12 * scale);
  EXPECT_LT((m.s_xy() - ref.s_xy).cwiseAbs().maxCoeff(), 1e-12 * ref.s_xy.cwiseAbs().maxCoeff() + 1e-12);
  EXPECT_LT((m.mu_x() - ref.mu_x).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(m.mu_y(), ref.mu_y, 1e-12);
  EXPECT_NEAR(m.s_yy(), ref.s_yy, 1e-12 * ref.s_yy);
}

TEST(Moments, BatchUpdateMatchesRowUpdates) {
  std::mt19937_64 rng(12);
  const auto d = oracle::random_data(rng, 300, 5);
  for (auto mode : {WeightingMode::uniform(), WeightingMode::exponential(0.02)}) {
    const MomentSet rows = accumulate_rows(d.x, d.y, mode);
    MomentSet batch(5, mode);
    batch.update_batch(d.x.topRows(37), Vector(d.y.head(37)));
    batch.update_batch(d.x.middleRows(37, 200), Vector(d.y.segment(37, 200)));
    batch.update_batch(d.x.bottomRows(63), Vector(d.y.tail(63)));
    EXPECT_EQ(batch.n(), rows.n());
    EXPECT_LT(max_field_gap(batch, rows), 1e-11);
  }
}

TEST(Moments, ExponentialWeightsMatchClosedForm) {
  std::mt19937_64 rng(13);
  const auto d = oracle::random_data(rng, 400, 3);
  const double alpha = 0.01;
  const MomentSet m = accumulate_rows(d.x, d.y, WeightingMode::exponential(alpha));
  // Weight of row i: a_i * prod_{l > i} (1 - a_l), a_i = max(alpha, 1 / (i + 1)).
  const int n = static_cast<int>(d.x.rows());
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) {
    double wi = std::max(alpha, 1.0 / (i + 1));
    for (int l = i + 1; l < n; ++l) wi *= 1.0 - std::max(alpha, 1.0 / (l + 1));
    w[i] = wi;
  }
  EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-12);
  oracle::Vec mu = oracle::Vec::Zero(3);
  for (int i = 0; i < n; ++i) mu += w[i] * d.x.row(i).transpose();
  EXPECT_LT((m.mu_x() - mu).cwiseAbs().maxCoeff(), 1e-11);
  EXPECT_DOUBLE_EQ(m.effective_n(), 100.0);
  EXPECT_DOUBLE_EQ(m.step_size(10), 1.0 / 11.0);
  EXPECT_DOUBLE_EQ(m.step_size(500), alpha);
}

TEST(Moments, EffectiveCountBeforeWindowFills) {
  MomentSet m(1, WeightingMode::exponential(0.1));
  const double x[] = {1.0};
  for (int i = 0; i < 4; ++i) m.update(x, 1.0);
  EXPECT_DOUBLE_EQ(m.effective_n(), 4.0);
}

TEST(MomentsProperty, OrderInvariantUnderUniformWeights) {
  std::mt19937_64 rng(14);
  for (int rep = 0; rep < 5; ++rep) {
    const auto d = oracle::random_data(rng, 120, 6);
    std::vector<int> perm(120);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    oracle::Mat xp(120, 6);
    oracle::Vec yp(120);
    for (int i = 0; i < 120; ++i) {
      xp.row(i) = d.x.row(perm[i]);
      yp[i] = d.y[perm[i]];
    }
    EXPECT_LT(max_field_gap(accumulate_rows(d.x, d.y), accumulate_rows(xp, yp)), 1e-12 * 50);
  }
}

TEST(MomentsProperty, MergeEqualsSinglePass) {
  std::mt19937_64 rng(15);
  const auto d = oracle::random_data(rng, 301, 4);
  const MomentSet whole = accumulate_rows(d.x, d.y);
  const MomentSet a = accumulate_rows(d.x.topRows(100), d.y.head(100));
  const MomentSet b = accumulate_rows(d.x.middleRows(100, 150), d.y.segment(100, 150));
  const MomentSet c = accumulate_rows(d.x.bottomRows(51), d.y.tail(51));
  const MomentSet left = merge(merge(a, b), c);
  const MomentSet right = merge(a, merge(b, c));
  EXPECT_EQ(left.n(), 301u);
  EXPECT_LT(max_field_gap(left, whole), 1e-12 * 50);
  EXPECT_LT(max_field_gap(left, right), 1e-12 * 50);
  EXPECT_TRUE(identical(merge(a, MomentSet(4)), a));
  EXPECT_TRUE(identical(merge(MomentSet(4), a), a));
}

TEST(MomentsProperty, MergeRejectsForgettingAndWidthMismatch) {
  const MomentSet e(3, WeightingMode::exponential(0.1));
  EXPECT_EQ(code_of([&] { (void)merge(e, MomentSet(3)); }), Errc::unsupported_merge);
  EXPECT_EQ(code_of([&] { (void)merge(MomentSet(2), MomentSet(3)); }), Errc::invalid_dimension);
}

TEST(MomentsProperty, SnapshotRoundTripIsBitExact) {
  std::mt19937_64 rng(16);
  const auto d = oracle::random_data(rng, 90, 5);
  for (auto mode : {WeightingMode::uniform(), WeightingMode::exponential(0.03)}) {
    const MomentSet m = accumulate_rows(d.x, d.y, mode);
    const auto bytes = snapshot_write(m);
    EXPECT_EQ(bytes.size(), kSnapshotHeaderBytes + 8 * (5 * 5 + 2 * 5 + 2));
    EXPECT_TRUE(identical(snapshot_read(as_span(bytes)), m));
  }
}

TEST(MomentsProperty, SnapshotFileRoundTrip) {
  std::mt19937_64 rng(17);
  const auto d = oracle::random_data(rng, 40, 3);
  const MomentSet m = accumulate_rows(d.x, d.y);
  const auto path = std::filesystem::temp_directory_path() / "ravg_core_roundtrip.snap";
  write_snapshot_file(path, m);
  EXPECT_FALSE(std::filesystem::exists(path.string() + ".tmp"));
  EXPECT_TRUE(identical(read_snapshot_file(path), m));
  std::filesystem::remove(path);
}

TEST(Moments, SnapshotHeaderLayout) {
  MomentSet m(2, WeightingMode::exponential(0.25));
  const double x[] = {1.0, 2.0};
  m.update(x, 3.0);
  const auto bytes = snapshot_write(m);
  EXPECT_EQ(kSnapshotHeaderBytes, 33u);
  EXPECT_EQ(static_cast<char>(bytes[0]), 'R');
  EXPECT_EQ(static_cast<char>(bytes[3]), 'G');
  EXPECT_EQ(std::to_integer<int>(bytes[4]), 1);  // version, little-endian
  EXPECT_EQ(std::to_integer<int>(bytes[8]), 1);  // exponential mode
  EXPECT_EQ(std::to_integer<int>(bytes[17]), 2);  // p
  EXPECT_EQ(std::to_integer<int>(bytes[25]), 1);  // n
}

TEST(Moments, TruncatedSnapshotReportsOffset) {
  MomentSet m(3);
  const double x[] = {1.0, 2.0, 3.0};
  m.update(x, 1.0);
  const auto bytes = snapshot_write(m);
  for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
    try {
      (void)snapshot_read(std::span<const std::byte>(bytes.data(), cut));
      FAIL() << "accepted a snapshot truncated to " << cut << " bytes";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::corrupt_snapshot);
      EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos) << e.what();
    }
  }
}

TEST(Moments, CorruptSnapshotsRejected) {
  MomentSet m(2);
  const double x[] = {1.0, 2.0};
  m.update(x, 1.0);
  auto bytes = snapshot_write(m);

  auto bad_magic = bytes;
  bad_magic[0] = std::byte{'X'};
  EXPECT_EQ(code_of([&] { (void)snapshot_read(as_span(bad_magic)); }), Errc::corrupt_snapshot);

  auto bad_version = bytes;
  bad_version[4] = std::byte{7};
  EXPECT_EQ(code_of([&] { (void)snapshot_read(as_span(bad_version)); }), Errc::corrupt_snapshot);

  auto trailing = bytes;
  trailing.push_back(std::byte{0});
  EXPECT_EQ(code_of([&] { (void)snapshot_read(as_span(trailing)); }), Errc::corrupt_snapshot);

  auto huge_p = bytes;
  for (int i = 17; i < 25; ++i) huge_p[static_cast<std::size_t>(i)] = std::byte{0xff};
  EXPECT_EQ(code_of([&] { (void)snapshot_read(as_span(huge_p)); }), Errc::corrupt_snapshot);

  auto asym = bytes;
  asym[asym.size() - 9] ^= std::byte{1};  // flips a bit of S_xx(1, 0)
  EXPECT_EQ(code_of([&] { (void)snapshot_read(as_span(asym)); }), Errc::corrupt_snapshot);
}

TEST(Moments, MemoryDoesNotGrowWithObservations) {
  MomentSet m(20);
  const std::size_t before = m.memory_bytes();
  std::mt19937_64 rng(18);
  const auto d = oracle::random_data(rng, 5000, 20);
  m.update_batch(d.x, d.y);
  EXPECT_EQ(m.memory_bytes(), before);
}

TEST(Moments, InvalidInputRejected) {
  EXPECT_EQ(code_of([] { MomentSet m(0); }), Errc::invalid_dimension);
  EXPECT_EQ(code_of([] { (void)WeightingMode::exponential(1.0); }), Errc::invalid_argument);
  EXPECT_EQ(code_of([] { (void)WeightingMode::exponential(0.0); }), Errc::invalid_argument);
  MomentSet m(2);
  const double short_row[] = {1.0};
  EXPECT_EQ(code_of([&] { m.update(short_row, 1.0); }), Errc::invalid_dimension);
  const double nan_row[] = {1.0, std::nan("")};
  EXPECT_EQ(code_of([&] { m.update(nan_row, 1.0); }), Errc::invalid_observation);
  const double ok[] = {1.0, 2.0};
  EXPECT_EQ(code_of([&] { m.update(ok, INFINITY); }), Errc::invalid_observation);
  EXPECT_EQ(m.n(), 0u);
}

// ---------------------------------------------------------------------------
// standardize

TEST(Standardize, MatchesRawMatrixStandardization) {
  std::mt19937_64 rng(21);
  const auto d = oracle::random_data(rng, 250, 8);
  const auto ref = oracle::standardize_raw(d.x, d.y);
  const StandardizedMoments sm = standardize(accumulate_rows(d.x, d.y));
  EXPECT_EQ(sm.retained(), 8u);
  EXPECT_LT((sm.s_xx - oracle::gram(ref)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((sm.s_xy - oracle::cross(ref)).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((sm.sigma_x - ref.sd).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_NEAR(sm.var_y, ref.yc.squaredNorm() / 250.0, 1e-9);
  for (Eigen::Index j = 0; j < 8; ++j) EXPECT_NEAR(sm.s_xx(j, j), 1.0, 1e-12);
}

TEST(StandardizeProperty, ScaleAndShiftInvariance) {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> scale(0.01, 100.0), shift(-50.0, 50.0);
  for (int rep = 0; rep < 5; ++rep) {
    const auto d = oracle::random_data(rng, 200, 6);
    oracle::Mat x2 = d.x;
    for (int j = 0; j < 6; ++j) x2.col(j) = scale(rng) * x2.col(j).array() + shift(rng);
    const oracle::Vec y2 = d.y.array() + shift(rng);
    const auto a = standardize(accumulate_rows(d.x, d.y));
    const auto b = standardize(accumulate_rows(x2, y2));
    EXPECT_LT((a.s_xx - b.s_xx).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_LT((a.s_xy - b.s_xy).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Standardize, ConstantFeatureDropped) {
  std::mt19937_64 rng(23);
  auto d = oracle::random_data(rng, 100, 5);
  d.x.col(2).setConstant(3.25);
  const auto sm = standardize(accumulate_rows(d.x, d.y));
  EXPECT_EQ(sm.kept, (std::vector<std::size_t>{0, 1, 3, 4}));
  EXPECT_EQ(sm.dropped, (std::vector<std::size_t>{2}));
  EXPECT_EQ(sm.s_xx.rows(), 4);
  EXPECT_EQ(sm.sigma_x[2], 0.0);
}

TEST(Standardize, DegenerateInputs) {
  MomentSet one(2);
  const double x[] = {1.0, 2.0};
  one.update(x, 1.0);
  EXPECT_EQ(code_of([&] { (void)standardize(one); }), Errc::insufficient_data);
  one.update(x, 2.0);
  EXPECT_EQ(code_of([&] { (void)standardize(one); }), Errc::degenerate_moments);
}

// ---------------------------------------------------------------------------
// linsolve

TEST(Linsolve, CholeskyMatchesGaussJordan) {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> g;
  for (int d : {1, 2, 5, 20}) {
    oracle::Mat b(d + 5, d);
    for (int i = 0; i < b.size(); ++i) b.data()[i] = g(rng);
    const oracle::Mat a = b.transpose() * b;
    oracle::Vec rhs(d);
    for (int i = 0; i < d; ++i) rhs[i] = g(rng);
    const Vector mine = solve_spd({a, rhs});
    EXPECT_LT((mine - oracle::gj_solve(a, rhs)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((inverse_spd(a) - oracle::gauss_jordan_inverse(a)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Linsolve, RidgeByHand) {
  const Matrix a = 2.0 * Matrix::Identity(2, 2);
  const Vector b = Vector::LinSpaced(2, 2.0, 4.0);
  const Vector beta = solve_ridge({a, b}, 2.0);
  EXPECT_DOUBLE_EQ(beta[0], 0.5);
  EXPECT_DOUBLE_EQ(beta[1], 1.0);
  EXPECT_EQ(solve_ridge({a, b}, 0.0), solve_spd({a, b}));
  EXPECT_EQ(code_of([&] { (void)solve_ridge({a, b}, -1.0); }), Errc::invalid_argument);
}

TEST(Linsolve, SingularSystemsDetected) {
  Matrix a(2, 2);
  a << 1.0, 1.0, 1.0, 1.0;
  EXPECT_EQ(code_of([&] { (void)solve_spd({a, Vector::Ones(2)}); }), Errc::singular_system);
  EXPECT_EQ(code_of([&] { (void)solve_spd({Matrix::Zero(3, 3), Vector::Ones(3)}); }), Errc::singular_system);
  Matrix tiny = Matrix::Identity(2, 2);
  tiny(1, 1) = 1e-14;
  EXPECT_EQ(code_of([&] { (void)solve_spd({tiny, Vector::Ones(2)}); }), Errc::singular_system);
  // Ridge restores solvability.
  EXPECT_NO_THROW((void)solve_ridge({a, Vector::Ones(2)}, 1e-3));
}

TEST(Linsolve, ShermanMorrisonByHand) {
  const Vector v = Vector::Ones(2);
  const Matrix out = rank1_update_inverse(Matrix::Identity(2, 2), v, 1.0);
  // (I + 1 1^T)^{-1} = I - 1 1^T / 3
  EXPECT_NEAR(out(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(out(0, 1), -1.0 / 3.0, 1e-15);
  const Vector e1 = Vector::Unit(2, 0);
  EXPECT_EQ(code_of([&] { (void)rank1_update_inverse(Matrix::Identity(2, 2), e1, -1.0); }), Errc::breakdown);
}

TEST(Linsolve, ShermanMorrisonSequenceMatchesDirectInverse) {
  std::mt19937_64 rng(32);
  std::normal_distribution<double> g;
  const int d = 6;
  oracle::Mat a = 3.0 * oracle::Mat::Identity(d, d);
  Matrix inv = a.inverse();
  Matrix inv_inplace = inv;
  for (int step = 0; step < 10; ++step) {
    Vector v(d);
    for (int i = 0; i < d; ++i) v[i] = g(rng);
    const double w = step % 3 == 2 ? -0.1 : 1.0;
    a += w * v * v.transpose();
    inv = rank1_update_inverse(inv, v, w);
    rank1_update_inverse_inplace(inv_inplace, v, w);
    EXPECT_LT((inv - oracle::gauss_jordan_inverse(a)).cwiseAbs().maxCoeff(), 1e-10) << "step " << step;
    EXPECT_LT((inv_inplace - inv).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_TRUE(inv_inplace.isApprox(inv_inplace.transpose(), 0.0));
  }
}

TEST(Errors, CodeNamesAndExitClasses) {
  const Error e(Errc::corrupt_snapshot, "x");
  EXPECT_EQ(std::string(e.what()), "corrupt-snapshot: x");
  EXPECT_TRUE(is_numeric_failure(Errc::singular_system));
  EXPECT_TRUE(is_numeric_failure(Errc::diverged));
  EXPECT_FALSE(is_numeric_failure(Errc::parse_error));
  EXPECT_FALSE(is_numeric_failure(Errc::invalid_sparsity));
}
