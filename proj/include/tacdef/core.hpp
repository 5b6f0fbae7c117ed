#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace tacdef {

using Vector = std::vector<double>;

/// Dense row-major matrix. Desk-scale only: no views, no BLAS, no sparsity.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0 || cols_ == 0; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(data_.data() + i * cols_, cols_);
  }
  std::span<double> row(std::size_t i) {
    return std::span<double>(data_.data() + i * cols_, cols_);
  }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Accumulation order in every product below is fixed left-to-right over the
// contraction index, so identical inputs give bit-identical outputs.

/// y = A x. Throws std::invalid_argument on dimension mismatch.
Vector matvec(const Matrix& a, const Vector& x);

/// y = A^T x, accumulated column-by-column in index order.
Vector matvec_t(const Matrix& a, const Vector& x);

double dot(std::span<const double> x, std::span<const double> y);
double norm2_sq(std::span<const double> x);
double norm2(std::span<const double> x);
double linf_norm(std::span<const double> x);

bool all_finite(std::span<const double> x);

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted
/// descending. Input is copied; sizes here never exceed a few hundred.
Vector symmetric_eigenvalues(Matrix s, std::size_t max_sweeps = 64, double tol = 1e-14);

struct SpectralEstimate {
  double value = 0.0;  // estimate of ||A||_2^2
  bool converged = false;
  std::size_t iters = 0;
};

/// ||A||_2^2 via power iteration on the smaller of A^T A and A A^T.
/// The Rayleigh quotient climbs from below, so on exit the estimate is a
/// lower bound up to the convergence tolerance (best effort: >= truth *
/// (1 - 10*tol)). Callers using it as a Lipschitz constant should multiply
/// by 1.01.
SpectralEstimate spectral_norm_sq(const Matrix& a, std::size_t max_iters = 1000,
                                  double tol = 1e-12);

/// Rank of the row space: count of singular values above tol * sigma_max,
/// singular values taken from the symmetric eigendecomposition of A A^T.
std::size_t row_rank(const Matrix& a, double tol = 1e-10);

/// Counter-based PRNG (SplitMix64): the state is a counter advanced by the
/// golden-ratio increment and the output is a bijective mix of it, so streams
/// are reproducible from the seed alone. One generator per thread of work.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// Standard normal via Box-Muller; the pair's second value is cached.
  double normal();

  /// Uniform integer in [0, n). Modulo reduction; the bias is far below
  /// anything observable at desk-scale n.
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Decorrelated child seed for a named stream of a master seed.
std::uint64_t mix_seed(std::uint64_t master, std::uint64_t stream);

}  // namespace tacdef
