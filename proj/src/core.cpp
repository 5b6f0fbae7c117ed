#include "tacdef/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tacdef {

Vector matvec(const Matrix& a, const Vector& x) {
  if (a.cols() != x.size()) throw std::invalid_argument("matvec: dimension mismatch");
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double acc = 0.0;
    const auto r = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) acc += r[j] * x[j];
    y[i] = acc;
  }
  return y;
}

Vector matvec_t(const Matrix& a, const Vector& x) {
  if (a.rows() != x.size()) throw std::invalid_argument("matvec_t: dimension mismatch");
  Vector y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    const double xi = x[i];
    for (std::size_t j = 0; j < a.cols(); ++j) y[j] += r[j] * xi;
  }
  return y;
}

double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("dot: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * y[i];
  return acc;
}

double norm2_sq(std::span<const double> x) { return dot(x, x); }

double norm2(std::span<const double> x) { return std::sqrt(norm2_sq(x)); }

double linf_norm(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

bool all_finite(std::span<const double> x) {
  for (double v : x)
    if (!std::isfinite(v)) return false;
  return true;
}

Vector symmetric_eigenvalues(Matrix s, std::size_t max_sweeps, double tol) {
  const std::size_t n = s.rows();
  if (n == 0 || s.cols() != n)
    throw std::invalid_argument("symmetric_eigenvalues: square nonempty matrix required");

  double frob = 0.0;
  for (double v : s.data()) frob += v * v;
  frob = std::sqrt(frob);

  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += 2.0 * s(p, q) * s(p, q);
    if (std::sqrt(off) <= tol * std::max(frob, 1e-300)) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = s(p, q);
        if (std::abs(apq) <= tol * std::max(frob, 1e-300)) continue;
        const double theta = (s(q, q) - s(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double skp = s(k, p);
          const double skq = s(k, q);
          s(k, p) = c * skp - sn * skq;
          s(k, q) = sn * skp + c * skq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double spk = s(p, k);
          const double sqk = s(q, k);
          s(p, k) = c * spk - sn * sqk;
          s(q, k) = sn * spk + c * sqk;
        }
      }
    }
  }

  Vector eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = s(i, i);
  std::sort(eig.begin(), eig.end(), std::greater<double>());
  return eig;
}

namespace {

// Gram matrix of the smaller dimension: A^T A if cols <= rows, else A A^T.
Matrix small_gram(const Matrix& a) {
  if (a.cols() <= a.rows()) {
    Matrix g(a.cols(), a.cols());
    for (std::size_t i = 0; i < a.cols(); ++i)
      for (std::size_t j = 0; j < a.cols(); ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < a.rows(); ++k) acc += a(k, i) * a(k, j);
        g(i, j) = acc;
      }
    return g;
  }
  Matrix g(a.rows(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.rows(); ++j) g(i, j) = dot(a.row(i), a.row(j));
  return g;
}

}  // namespace

SpectralEstimate spectral_norm_sq(const Matrix& a, std::size_t max_iters, double tol) {
  if (a.empty()) throw std::invalid_argument("spectral_norm_sq: empty matrix");
  const Matrix g = small_gram(a);
  const std::size_t n = g.rows();

  // Fixed-seed start vector keeps the estimate reproducible across runs.
  Rng rng(0x5EEDull);
  Vector v(n);
  for (double& vi : v) vi = rng.normal();
  double nv = norm2(v);
  if (nv == 0.0) nv = 1.0;
  for (double& vi : v) vi /= nv;

  SpectralEstimate est;
  double prev = 0.0;
  for (std::size_t it = 0; it < max_iters; ++it) {
    Vector w = matvec(g, v);
    const double rq = dot(v, w);  // Rayleigh quotient, climbs from below
    const double wn = norm2(w);
    est.value = rq;
    est.iters = it + 1;
    if (wn <= 1e-300) {  // zero matrix
      est.value = 0.0;
      est.converged = true;
      return est;
    }
    for (std::size_t i = 0; i < n; ++i) v[i] = w[i] / wn;
    if (it > 0 && std::abs(rq - prev) <= tol * std::max(std::abs(rq), 1e-300)) {
      est.converged = true;
      return est;
    }
    prev = rq;
  }
  return est;
}

std::size_t row_rank(const Matrix& a, double tol) {
  if (a.empty()) throw std::invalid_argument("row_rank: empty matrix");
  Matrix g(a.rows(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.rows(); ++j) g(i, j) = dot(a.row(i), a.row(j));
  Vector eig = symmetric_eigenvalues(std::move(g));
  const double lmax = std::max(eig.front(), 0.0);
  if (lmax == 0.0) return 0;
  // Zero eigenvalues of the Gram matrix surface as ~eps * lmax round-off,
  // i.e. ~1e-8 * smax after the square root, so anything below that floor
  // reads as a zero singular value regardless of tol.
  const double eps = std::numeric_limits<double>::epsilon();
  const double floor = static_cast<double>(a.rows()) * eps * lmax;
  const double smax = std::sqrt(lmax);
  std::size_t rank = 0;
  for (double e : eig) {
    if (e <= floor) continue;
    if (std::sqrt(e) > tol * smax) ++rank;
  }
  return rank;
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = next_double();
  const double u2 = next_double();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

std::uint64_t mix_seed(std::uint64_t master, std::uint64_t stream) {
  Rng r(master ^ (0xA24BAED4963EE407ull * (stream + 1)));
  return r.next_u64();
}

}  // namespace tacdef
