#pragma once

// Running-average sufficient statistics for streaming least squares.
//
// A MomentSet holds the averages mu_x, mu_y, S_xx = avg(x x^T), S_xy = avg(y x)
// and S_yy = avg(y^2) together with the number of observations seen. Every
// update is a convex combination s <- (1 - a_n) s + a_n s(obs), so storage is
// O(p^2) regardless of how many observations have been absorbed.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ravg/error.hpp"

namespace ravg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct WeightingMode {
  enum class Kind : std::uint8_t { uniform = 0, exponential = 1 };

  Kind kind = Kind::uniform;
  double rate = 0.0;  // forgetting rate alpha, 0 for uniform

  static WeightingMode uniform() { return {}; }

  static WeightingMode exponential(double rate) {
    if (!(rate > 0.0 && rate < 1.0)) {
      throw Error(Errc::invalid_argument,
                  "exponential rate must lie in (0, 1), got " + std::to_string(rate));
    }
    return {Kind::exponential, rate};
  }

  bool is_uniform() const { return kind == Kind::uniform; }

  friend bool operator==(const WeightingMode&, const WeightingMode&) = default;
};

struct Observation {
  Vector x;
  double y = 0.0;
};

class MomentSet {
 public:
  explicit MomentSet(std::size_t p, WeightingMode mode = WeightingMode::uniform())
      : p_(p), mode_(mode) {
    if (p == 0) throw Error(Errc::invalid_dimension, "feature count must be >= 1");
    if (!mode.is_uniform()) mode_ = WeightingMode::exponential(mode.rate);
    mu_x_ = Vector::Zero(static_cast<Eigen::Index>(p));
    s_xy_ = Vector::Zero(static_cast<Eigen::Index>(p));
    s_xx_ = Matrix::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  }

  /// Rebuilds a moment set from stored fields (snapshot reader, tests).
  static MomentSet from_fields(WeightingMode mode, std::uint64_t n, Vector mu_x, double mu_y,
                               Matrix s_xx, Vector s_xy, double s_yy) {
    const auto p = static_cast<std::size_t>(mu_x.size());
    if (p == 0 || s_xy.size() != mu_x.size() || s_xx.rows() != mu_x.size() ||
        s_xx.cols() != mu_x.size()) {
      throw Error(Errc::invalid_dimension, "inconsistent moment field sizes");
    }
    MomentSet m(p, mode);
    m.n_ = n;
    m.mu_x_ = std::move(mu_x);
    m.mu_y_ = mu_y;
    m.s_xx_ = std::move(s_xx);
    m.s_xy_ = std::move(s_xy);
    m.s_yy_ = s_yy;
    return m;
  }

  std::size_t p() const { return p_; }
  std::uint64_t n() const { return n_; }
  const WeightingMode& mode() const { return mode_; }
  const Vector& mu_x() const { return mu_x_; }
  double mu_y() const { return mu_y_; }
  const Matrix& s_xx() const { return s_xx_; }
  const Vector& s_xy() const { return s_xy_; }
  double s_yy() const { return s_yy_; }

  /// Raw count under uniform weighting; min(n, 1/alpha) under forgetting.
  double effective_n() const {
    const auto n = static_cast<double>(n_);
    return mode_.is_uniform() ? n : std::min(n, 1.0 / mode_.rate);
  }

  /// Weight a_n given to observation number n+1 (0-based index n).
  double step_size(std::uint64_t index) const {
    const double uniform = 1.0 / (static_cast<double>(index) + 1.0);
    return mode_.is_uniform() ? uniform : std::max(mode_.rate, uniform);
  }

  void update(std::span<const double> x, double y) {
    check_observation(x, y);
    const double a = step_size(n_);
    const double keep = 1.0 - a;
    const auto p = static_cast<Eigen::Index>(p_);
    for (Eigen::Index j = 0; j < p; ++j) {
      const double xj = x[static_cast<std::size_t>(j)];
      mu_x_[j] = keep * mu_x_[j] + a * xj;
      s_xy_[j] = keep * s_xy_[j] + a * (y * xj);
      for (Eigen::Index i = j; i < p; ++i) {
        s_xx_(i, j) = keep * s_xx_(i, j) + a * (x[static_cast<std::size_t>(i)] * xj);
      }
    }
    mu_y_ = keep * mu_y_ + a * y;
    s_yy_ = keep * s_yy_ + a * (y * y);
    mirror_lower();
    ++n_;
  }

  void update(const Observation& obs) {
    update(std::span<const double>(obs.x.data(), static_cast<std::size_t>(obs.x.size())), obs.y);
  }

  /// Absorbs a block of observations (one per row of `x`). Equivalent to
  /// calling update() row by row, but uses a weighted rank-b update.
  template <class Derived>
  void update_batch(const Eigen::MatrixBase<Derived>& x, const Vector& y) {
    if (static_cast<std::size_t>(x.cols()) != p_ || x.rows() != y.size()) {
      throw Error(Errc::invalid_dimension, "batch shape does not match feature count");
    }
    if (!x.allFinite() || !y.allFinite()) {
      throw Error(Errc::invalid_observation, "batch contains non-finite entries");
    }
    const Eigen::Index b = x.rows();
    if (b == 0) return;

    Vector w(b);
    double old_weight = 1.0;
    if (mode_.is_uniform()) {
      const double total = static_cast<double>(n_) + static_cast<double>(b);
      w.setConstant(1.0 / total);
      old_weight = static_cast<double>(n_) / total;
    } else {
      // w_i = a_i * prod_{l > i} (1 - a_l); the old state keeps prod_l (1 - a_l).
      double suffix = 1.0;
      for (Eigen::Index i = b - 1; i >= 0; --i) {
        const double a = step_size(n_ + static_cast<std::uint64_t>(i));
        w[i] = a * suffix;
        suffix *= 1.0 - a;
      }
      old_weight = suffix;
    }

    mu_x_ = old_weight * mu_x_ + x.transpose() * w;
    mu_y_ = old_weight * mu_y_ + w.dot(y);
    const Vector wy = w.cwiseProduct(y);
    s_xy_ = old_weight * s_xy_ + x.transpose() * wy;
    s_yy_ = old_weight * s_yy_ + wy.dot(y);

    const Matrix xw = w.cwiseSqrt().asDiagonal() * x;
    s_xx_.template triangularView<Eigen::Lower>() *= old_weight;
    s_xx_.template selfadjointView<Eigen::Lower>().rankUpdate(xw.transpose(), 1.0);
    mirror_lower();
    n_ += static_cast<std::uint64_t>(b);
  }

  /// Exact merge of two uniform-weight accumulators over disjoint streams.
  friend MomentSet merge(const MomentSet& a, const MomentSet& b) {
    if (!a.mode_.is_uniform() || !b.mode_.is_uniform()) {
      throw Error(Errc::unsupported_merge, "only uniform-weight moment sets can be merged");
    }
    if (a.p_ != b.p_) {
      throw Error(Errc::invalid_dimension, "cannot merge moment sets with different p");
    }
    if (b.n_ == 0) return a;
    if (a.n_ == 0) return b;
    const double total = static_cast<double>(a.n_) + static_cast<double>(b.n_);
    const double wa = static_cast<double>(a.n_) / total;
    const double wb = static_cast<double>(b.n_) / total;
    MomentSet out(a.p_);
    out.n_ = a.n_ + b.n_;
    out.mu_x_ = wa * a.mu_x_ + wb * b.mu_x_;
    out.mu_y_ = wa * a.mu_y_ + wb * b.mu_y_;
    out.s_xx_ = wa * a.s_xx_ + wb * b.s_xx_;
    out.s_xy_ = wa * a.s_xy_ + wb * b.s_xy_;
    out.s_yy_ = wa * a.s_yy_ + wb * b.s_yy_;
    return out;
  }

  /// Bytes held by the statistics; depends on p only.
  std::size_t memory_bytes() const {
    return sizeof(double) * static_cast<std::size_t>(s_xx_.size() + mu_x_.size() + s_xy_.size()) +
           sizeof(*this);
  }

  /// Field-for-field bitwise equality.
  friend bool identical(const MomentSet& a, const MomentSet& b) {
    return a.p_ == b.p_ && a.n_ == b.n_ && a.mode_ == b.mode_ &&
           std::bit_cast<std::uint64_t>(a.mu_y_) == std::bit_cast<std::uint64_t>(b.mu_y_) &&
           std::bit_cast<std::uint64_t>(a.s_yy_) == std::bit_cast<std::uint64_t>(b.s_yy_) &&
           same_bits(a.mu_x_.data(), b.mu_x_.data(), a.mu_x_.size()) &&
           same_bits(a.s_xy_.data(), b.s_xy_.data(), a.s_xy_.size()) &&
           same_bits(a.s_xx_.data(), b.s_xx_.data(), a.s_xx_.size());
  }

 private:
  static bool same_bits(const double* a, const double* b, Eigen::Index count) {
    return std::memcmp(a, b, sizeof(double) * static_cast<std::size_t>(count)) == 0;
  }

  void check_observation(std::span<const double> x, double y) const {
    if (x.size() != p_) {
      throw Error(Errc::invalid_dimension, "observation has " + std::to_string(x.size()) +
                                               " features, expected " + std::to_string(p_));
    }
    if (!std::isfinite(y) ||
        !std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); })) {
      throw Error(Errc::invalid_observation, "observation contains non-finite entries");
    }
  }

  void mirror_lower() {
    const auto p = s_xx_.rows();
    for (Eigen::Index j = 1; j < p; ++j) {
      for (Eigen::Index i = 0; i < j; ++i) s_xx_(i, j) = s_xx_(j, i);
    }
  }

  std::size_t p_;
  std::uint64_t n_ = 0;
  WeightingMode mode_;
  Vector mu_x_;
  double mu_y_ = 0.0;
  Matrix s_xx_;
  Vector s_xy_;
  double s_yy_ = 0.0;
};

inline MomentSet new_moments(std::size_t p, WeightingMode mode = WeightingMode::uniform()) {
  return MomentSet(p, mode);
}

// ---------------------------------------------------------------------------
// Snapshot format (little-endian, no padding):
//   "RAVG" | u32 version=1 | u8 mode | f64 alpha | u64 p | u64 n |
//   f64 mu_x[p] | f64 mu_y | f64 s_xy[p] | f64 s_yy | f64 s_xx[p*p] (row-major)

inline constexpr std::uint32_t kSnapshotVersion = 1;
inline constexpr std::size_t kSnapshotHeaderBytes = 4 + 4 + 1 + 8 + 8 + 8;

namespace detail {

class ByteWriter {
 public:
  void put_u8(std::uint8_t v) { bytes_.push_back(std::byte{v}); }
  void put_u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(std::byte(static_cast<std::uint8_t>(v >> (8 * i))));
  }
  void put_u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(std::byte(static_cast<std::uint8_t>(v >> (8 * i))));
  }
  void put_f64(double v) { put_u64(std::bit_cast<std::uint64_t>(v)); }
  void reserve(std::size_t n) { bytes_.reserve(n); }
  std::vector<std::byte> take() { return std::move(bytes_); }

 private:
  std::vector<std::byte> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::byte> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void require(std::size_t count, const char* what) const {
    if (remaining() < count) {
      throw Error(Errc::corrupt_snapshot, std::string("truncated ") + what + " at byte offset " +
                                              std::to_string(pos_));
    }
  }
  std::uint8_t u8(const char* what) {
    require(1, what);
    return std::to_integer<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint32_t u32(const char* what) {
    require(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{std::to_integer<std::uint8_t>(bytes_[pos_++])} << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    require(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{std::to_integer<std::uint8_t>(bytes_[pos_++])} << (8 * i);
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

 private:
  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::byte> snapshot_write(const MomentSet& m) {
  const auto p = static_cast<Eigen::Index>(m.p());
  detail::ByteWriter out;
  out.reserve(kSnapshotHeaderBytes + 8 * static_cast<std::size_t>(p * p + 2 * p + 2));
  for (char c : {'R', 'A', 'V', 'G'}) out.put_u8(static_cast<std::uint8_t>(c));
  out.put_u32(kSnapshotVersion);
  out.put_u8(static_cast<std::uint8_t>(m.mode().kind));
  out.put_f64(m.mode().is_uniform() ? 0.0 : m.mode().rate);
  out.put_u64(m.p());
  out.put_u64(m.n());
  for (Eigen::Index j = 0; j < p; ++j) out.put_f64(m.mu_x()[j]);
  out.put_f64(m.mu_y());
  for (Eigen::Index j = 0; j < p; ++j) out.put_f64(m.s_xy()[j]);
  out.put_f64(m.s_yy());
  for (Eigen::Index i = 0; i < p; ++i) {
    for (Eigen::Index j = 0; j < p; ++j) out.put_f64(m.s_xx()(i, j));
  }
  return out.take();
}

inline MomentSet snapshot_read(std::span<const std::byte> bytes) {
  detail::ByteReader in(bytes);
  in.require(4, "magic");
  const char magic[4] = {'R', 'A', 'V', 'G'};
  for (char c : magic) {
    if (in.u8("magic") != static_cast<std::uint8_t>(c)) {
      throw Error(Errc::corrupt_snapshot, "bad magic, expected \"RAVG\"");
    }
  }
  const auto version = in.u32("version");
  if (version != kSnapshotVersion) {
    throw Error(Errc::corrupt_snapshot, "unsupported snapshot version " + std::to_string(version));
  }
  const auto mode_byte = in.u8("mode");
  const double alpha = in.f64("alpha");
  WeightingMode mode;
  if (mode_byte == 0) {
    if (alpha != 0.0) throw Error(Errc::corrupt_snapshot, "uniform snapshot with nonzero alpha");
  } else if (mode_byte == 1) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(Errc::corrupt_snapshot, "alpha outside (0, 1)");
    mode = WeightingMode::exponential(alpha);
  } else {
    throw Error(Errc::corrupt_snapshot, "unknown weighting mode " + std::to_string(mode_byte));
  }
  const std::uint64_t p = in.u64("p");
  const std::uint64_t n = in.u64("n");
  if (p == 0) throw Error(Errc::corrupt_snapshot, "feature count is zero");

  // Reject sizes whose payload cannot be represented before allocating anything.
  std::uint64_t pp = 0;
  std::uint64_t cells = 0;
  std::uint64_t payload = 0;
  if (__builtin_mul_overflow(p, p, &pp) || __builtin_add_overflow(pp, 2 * p + 2, &cells) ||
      __builtin_mul_overflow(cells, std::uint64_t{8}, &payload) || p > (std::uint64_t{1} << 31)) {
    throw Error(Errc::corrupt_snapshot, "feature count " + std::to_string(p) + " overflows p*p");
  }

  const auto dim = static_cast<Eigen::Index>(p);
  in.require(8 * p, "mu_x block");
  Vector mu_x(dim);
  for (Eigen::Index j = 0; j < dim; ++j) mu_x[j] = in.f64("mu_x block");
  const double mu_y = in.f64("mu_y");
  in.require(8 * p, "S_xy block");
  Vector s_xy(dim);
  for (Eigen::Index j = 0; j < dim; ++j) s_xy[j] = in.f64("S_xy block");
  const double s_yy = in.f64("S_yy");
  in.require(8 * pp, "S_xx block");
  Matrix s_xx(dim, dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) s_xx(i, j) = in.f64("S_xx block");
  }
  if (in.remaining() != 0) {
    throw Error(Errc::corrupt_snapshot,
                "trailing bytes after S_xx block at byte offset " + std::to_string(in.offset()));
  }
  for (Eigen::Index i = 0; i < dim; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      if (std::bit_cast<std::uint64_t>(s_xx(i, j)) != std::bit_cast<std::uint64_t>(s_xx(j, i))) {
        throw Error(Errc::corrupt_snapshot, "S_xx is not symmetric");
      }
    }
  }
  return MomentSet::from_fields(mode, n, std::move(mu_x), mu_y, std::move(s_xx), std::move(s_xy),
                                s_yy);
}

inline MomentSet read_snapshot_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open snapshot " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return snapshot_read(std::as_bytes(std::span<const char>(raw.data(), raw.size())));
}

/// Writes to a sibling temporary file and renames it into place.
inline void write_snapshot_file(const std::filesystem::path& path, const MomentSet& m) {
  const auto bytes = snapshot_write(m);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io_error, "cannot write snapshot " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::io_error, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace ravg
