// Dense matrices, stable probability transforms and a portable RNG.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace labelforge {

/// Thrown when operand shapes do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a numeric precondition (finite input, valid distribution) fails.
class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline std::string shape_str(std::size_t r, std::size_t c) {
  return "(" + std::to_string(r) + "x" + std::to_string(c) + ")";
}

/// Row-major dense matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(rows_, cols_));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      if (row.size() != cols_) throw ShapeError("ragged matrix initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Dense product op(a) * op(b), where op optionally transposes.
inline Matrix gemm(const Matrix& a, const Matrix& b, bool transpose_a = false,
                   bool transpose_b = false) {
  const std::size_t m = transpose_a ? a.cols() : a.rows();
  const std::size_t k = transpose_a ? a.rows() : a.cols();
  const std::size_t kb = transpose_b ? b.cols() : b.rows();
  const std::size_t n = transpose_b ? b.rows() : b.cols();
  if (k != kb) {
    throw ShapeError("gemm inner dimension mismatch: op(a) is " + shape_str(m, k) +
                     ", op(b) is " + shape_str(kb, n));
  }
  Matrix out(m, n);
  if (!transpose_a && transpose_b) {
    for (std::size_t i = 0; i < m; ++i) {
      const auto a_row = a.row(i);
      for (std::size_t j = 0; j < n; ++j) {
        const auto b_row = b.row(j);
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += a_row[p] * b_row[p];
        out(i, j) = acc;
      }
    }
    return out;
  }
  for (std::size_t i = 0; i < m; ++i) {
    auto out_row = out.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = transpose_a ? a(p, i) : a(i, p);
      if (av == 0.0) continue;
      if (!transpose_b) {
        const auto b_row = b.row(p);
        for (std::size_t j = 0; j < n; ++j) out_row[j] += av * b_row[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) out_row[j] += av * b(j, p);
      }
    }
  }
  return out;
}

namespace detail {

inline void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite input");
  }
}

}  // namespace detail

/// log(sum(exp(v))) with max subtraction.
inline double log_sum_exp(std::span<const double> v) {
  if (v.empty()) return -std::numeric_limits<double>::infinity();
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - mx);
  return mx + std::log(sum);
}

inline void softmax_inplace(std::span<double> v) {
  detail::require_finite(v, "softmax");
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

inline std::vector<double> softmax(std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  if (!out.empty()) softmax_inplace(out);
  return out;
}

inline Matrix softmax_rows(const Matrix& m) {
  Matrix out = m;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    if (out.cols()) softmax_inplace(out.row(r));
  }
  return out;
}

inline Matrix log_softmax_rows(const Matrix& m) {
  Matrix out = m;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    if (row.empty()) continue;
    detail::require_finite(row, "log_softmax");
    const double lse = log_sum_exp(row);
    for (double& x : row) x -= lse;
  }
  return out;
}

/// -sum_i target_i * log_probs_i.
inline double cross_entropy(std::span<const double> target, std::span<const double> log_probs) {
  if (target.size() != log_probs.size()) {
    throw ShapeError("cross_entropy: target length " + std::to_string(target.size()) +
                     " vs log_probs length " + std::to_string(log_probs.size()));
  }
  double sum = 0.0;
  for (double t : target) sum += t;
  if (std::abs(sum - 1.0) > 1e-9) throw NumericError("cross_entropy: target does not sum to 1");
  double h = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] != 0.0) h -= target[i] * log_probs[i];
  }
  return h;
}

/// Shannon entropy in nats; 0*log 0 is taken as 0.
inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

/// ||a - b|| / (||a|| + ||b||); 0 when both are zero.
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("relative_error: lengths " + std::to_string(a.size()) + " and " +
                                             std::to_string(b.size()));
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(na) + std::sqrt(nb);
  return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

/// Seedable 64-bit generator. The stream is fully specified so other ports can
/// reproduce it:
///
///   seeding:  state = splitmix64(seed); if state == 0 then state = 0x9E3779B97F4A7C15
///   next():   x ^= x >> 12; x ^= x << 25; x ^= x >> 27; return x * 0x2545F4914F6CDD1D
///   uniform():  (next() >> 11) * 2^-53                       in [0, 1)
///   normal():   Box-Muller, u1 = 1 - uniform(), u2 = uniform(),
///               sqrt(-2 ln u1) * cos(2 pi u2); one draw pair per value
///   below(n):   rejection sampling on next() % n with threshold (2^64 - n) % n
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) {
    std::uint64_t s = seed;
    state_ = splitmix64(s);
    if (state_ == 0) state_ = 0x9E3779B97F4A7C15ULL;
  }

  static std::uint64_t splitmix64(std::uint64_t& s) {
    std::uint64_t z = (s += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Derives an independent seed for a sub-stream (per-epoch shuffles, per-layer init).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t s = seed ^ (stream * 0xD1B54A32D192ED03ULL);
    return splitmix64(s);
  }

  std::uint64_t next() noexcept {
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545F4914F6CDD1DULL;
  }

  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  double normal() noexcept {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next();
      if (r >= threshold) return r % n;
    }
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

}  // namespace labelforge
