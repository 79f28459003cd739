#pragma once

// Dense linear algebra, activations, seeded sampling and the symmetric PSD
// square root used by the rest of the library. Everything is double precision.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ensad {

// Bad input, shape or configuration. CLI maps this to exit code 2.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Numerical failure at runtime (NaN loss, non-PSD matrix, no convergence).
// CLI maps this to exit code 3.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Vec {
 public:
  Vec() = default;
  explicit Vec(std::size_t n, double fill = 0.0) : data_(n, fill) {}
  Vec(std::initializer_list<double> xs) : data_(xs) {}
  explicit Vec(std::vector<double> xs) : data_(std::move(xs)) {}

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  const std::vector<double>& values() const { return data_; }
  std::vector<double>& values() { return data_; }
  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  bool operator==(const Vec&) const = default;

 private:
  std::vector<double> data_;
};

// Row-major dense matrix.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  static Mat diag(std::span<const double> d) {
    Mat m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }
  // Builds a matrix whose columns are the given vectors.
  static Mat from_columns(std::span<const Vec> cols) {
    if (cols.empty()) throw ValidationError("from_columns: no columns");
    Mat m(cols[0].size(), cols.size());
    for (std::size_t j = 0; j < cols.size(); ++j) {
      if (cols[j].size() != m.rows_) throw ValidationError("from_columns: ragged columns");
      for (std::size_t i = 0; i < m.rows_; ++i) m(i, j) = cols[j][i];
    }
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  Vec col(std::size_t c) const {
    Vec v(rows_);
    for (std::size_t i = 0; i < rows_; ++i) v[i] = (*this)(i, c);
    return v;
  }
  void set_col(std::size_t c, const Vec& v) {
    for (std::size_t i = 0; i < rows_; ++i) (*this)(i, c) = v[i];
  }

  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool operator==(const Mat&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Checks

inline bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

inline void require_finite(std::span<const double> xs, const char* what) {
  if (!all_finite(xs)) throw NumericalError(std::string(what) + ": non-finite value");
}

// ---------------------------------------------------------------------------
// Vector kernels

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// y += s * x
inline void axpy(double s, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw ValidationError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

inline Vec operator+(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw ValidationError("vec add: length mismatch");
  Vec r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i];
  return r;
}

inline Vec operator-(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw ValidationError("vec sub: length mismatch");
  Vec r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
  return r;
}

inline Vec operator*(double s, const Vec& a) {
  Vec r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = s * a[i];
  return r;
}

// Norms below this are treated as the zero vector by l2_normalize.
inline constexpr double kZeroNorm = 1e-12;

// Unit-norm copy of v. Vectors with norm < 1e-12 come back unchanged (the zero
// convention), which keeps the adapter total when a translation equals h0.
inline Vec l2_normalize(const Vec& v) {
  require_finite(v.span(), "l2_normalize");
  const double n = norm(v.span());
  if (n < kZeroNorm) return v;
  Vec r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) r[i] = v[i] / n;
  return r;
}

// Vector-Jacobian product of l2_normalize at v: (I - y y^T) g / |v|, with y the
// normalized output. Zero at the zero-vector point.
inline Vec l2_normalize_backward(const Vec& v, const Vec& y, const Vec& g) {
  const double n = norm(v.span());
  Vec r(v.size());
  if (n < kZeroNorm) return r;
  const double yg = dot(y.span(), g.span());
  for (std::size_t i = 0; i < v.size(); ++i) r[i] = (g[i] - y[i] * yg) / n;
  return r;
}

inline Vec softmax(const Vec& v) {
  if (v.empty()) throw ValidationError("softmax: empty input");
  require_finite(v.span(), "softmax");
  const double mx = *std::max_element(v.begin(), v.end());
  Vec r(v.size());
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    r[i] = std::exp(v[i] - mx);
    s += r[i];
  }
  for (auto& x : r) x /= s;
  return r;
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Cosine similarity with 0/0 defined as 0.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a), nb = norm(b);
  if (na < kZeroNorm || nb < kZeroNorm) return 0.0;
  return dot(a, b) / (na * nb);
}

// ---------------------------------------------------------------------------
// Matrix kernels

inline Vec matvec(const Mat& m, std::span<const double> x) {
  if (m.cols() != x.size()) throw ValidationError("matvec: shape mismatch");
  Vec r(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) r[i] = dot(m.row(i), x);
  return r;
}

// m^T x
inline Vec matvec_t(const Mat& m, std::span<const double> x) {
  if (m.rows() != x.size()) throw ValidationError("matvec_t: shape mismatch");
  Vec r(m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) axpy(x[i], m.row(i), r.span());
  return r;
}

// m += s * a b^T
inline void add_outer(Mat& m, double s, std::span<const double> a, std::span<const double> b) {
  if (m.rows() != a.size() || m.cols() != b.size()) throw ValidationError("add_outer: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) axpy(s * a[i], b, m.row(i));
}

inline Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) throw ValidationError("matmul: shape mismatch");
  Mat r(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) axpy(a(i, k), b.row(k), r.row(i));
  return r;
}

inline Mat transpose(const Mat& a) {
  Mat r(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) r(j, i) = a(i, j);
  return r;
}

inline Mat operator+(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ValidationError("mat add: shape mismatch");
  Mat r = a;
  axpy(1.0, b.span(), r.span());
  return r;
}

inline Mat operator-(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ValidationError("mat sub: shape mismatch");
  Mat r = a;
  axpy(-1.0, b.span(), r.span());
  return r;
}

inline double frobenius(const Mat& a) { return norm(a.span()); }

inline double trace(const Mat& a) {
  if (a.rows() != a.cols()) throw ValidationError("trace: non-square");
  double t = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) t += a(i, i);
  return t;
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition and PSD square root

struct SymEigen {
  Vec values;
  Mat vectors;  // columns are eigenvectors
};

// Cyclic Jacobi rotations. Converged when the off-diagonal Frobenius norm drops
// below 1e-12 * max(1, |a|_F).
inline SymEigen jacobi_eigen(const Mat& a_in, int max_sweeps = 100) {
  if (a_in.rows() != a_in.cols()) throw ValidationError("jacobi_eigen: non-square matrix");
  require_finite(a_in.span(), "jacobi_eigen");
  const std::size_t n = a_in.rows();
  Mat a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (a_in(i, j) + a_in(j, i));
  Mat v = Mat::identity(n);

  const double tol = 1e-12 * std::max(1.0, frobenius(a));
  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  int sweep = 0;
  while (off_norm() >= tol) {
    if (sweep++ >= max_sweeps) throw NumericalError("jacobi_eigen: no convergence");
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        // A <- J^T A J with J the (p,q) rotation.
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  Vec vals(n);
  for (std::size_t i = 0; i < n; ++i) vals[i] = a(i, i);
  return {std::move(vals), std::move(v)};
}

// Square root of a symmetric PSD matrix. The input is symmetrized first.
// Eigenvalues in [-1e-8 * scale, 0) are clamped to zero, anything more
// negative is rejected. scale = max(1, largest |eigenvalue|).
inline Mat sym_sqrt_psd(const Mat& a) {
  if (a.rows() != a.cols()) throw ValidationError("sym_sqrt_psd: non-square matrix");
  const auto [vals, vecs] = jacobi_eigen(a);
  const std::size_t n = a.rows();
  double scale = 1.0;
  for (double x : vals) scale = std::max(scale, std::abs(x));
  Vec root(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (vals[i] < -1e-8 * scale) throw NumericalError("sym_sqrt_psd: matrix is not PSD");
    root[i] = std::sqrt(std::max(vals[i], 0.0));
  }
  Mat s(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    if (root[k] == 0.0) continue;
    for (std::size_t i = 0; i < n; ++i) {
      const double vik = vecs(i, k) * root[k];
      for (std::size_t j = 0; j < n; ++j) s(i, j) += vik * vecs(j, k);
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Seeded RNG

// SplitMix64 (Steele, Lea & Flood 2014). The state after p draws is
// seed + p * golden_gamma, so a stream is fully described by (seed, position)
// and can be resumed exactly from a checkpoint.
class SeededRng {
 public:
  static constexpr const char* kAlgorithm = "splitmix64";
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

  explicit SeededRng(std::uint64_t seed = 0, std::uint64_t position = 0)
      : seed_(seed), position_(position), state_(seed + position * kGamma) {}

  std::uint64_t next_u64() {
    ++position_;
    std::uint64_t z = (state_ += kGamma);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, k), rejection sampled.
  std::uint64_t uniform_index(std::uint64_t k) {
    if (k == 0) throw ValidationError("uniform_index: empty range");
    constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
    const std::uint64_t bound = kMax - kMax % k;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= bound);
    return x % k;
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t position() const { return position_; }

 private:
  std::uint64_t seed_;
  std::uint64_t position_;
  std::uint64_t state_;
};

// n standard normal samples by Box-Muller. Pairs are consumed whole; for odd n
// the final sine branch is discarded.
inline Vec gaussian(SeededRng& rng, std::size_t n) {
  if (n == 0) throw ValidationError("gaussian: n must be >= 1");
  Vec out(n);
  for (std::size_t i = 0; i < n; i += 2) {
    const double u1 = 1.0 - rng.uniform();  // (0, 1]
    const double u2 = rng.uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double phi = 2.0 * std::numbers::pi * u2;
    out[i] = r * std::cos(phi);
    if (i + 1 < n) out[i + 1] = r * std::sin(phi);
  }
  return out;
}

// rows x cols matrix of N(0, stddev^2) entries.
inline Mat gaussian_mat(SeededRng& rng, std::size_t rows, std::size_t cols, double stddev) {
  Mat m(rows, cols);
  const Vec g = gaussian(rng, rows * cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.span()[i] = stddev * g[i];
  return m;
}

}  // namespace ensad
