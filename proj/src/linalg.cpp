#include "probdr/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

#include "probdr/error.hpp"
#include "probdr/rng.hpp"

namespace probdr {

Matrix row_softmax(const Matrix& m) {
  if (!all_finite(m)) throw InvalidInput("row_softmax: non-finite input");
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto in = m.row(i);
    auto o = out.row(i);
    if (in.empty()) continue;
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    const double inv = 1.0 / sum;
    for (double& v : o) v *= inv;
  }
  return out;
}

namespace {

double off_diagonal_norm(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (i != j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

// Applies the rotation in the (p, q) plane that zeroes a(p, q).
void jacobi_rotate(Matrix& a, Matrix& v, std::size_t p, std::size_t q) {
  const double apq = a(p, q);
  if (apq == 0.0) return;
  const std::size_t n = a.rows();
  const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
  const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
  const double c = 1.0 / std::sqrt(t * t + 1.0);
  const double s = t * c;

  for (std::size_t k = 0; k < n; ++k) {
    const double akp = a(k, p);
    const double akq = a(k, q);
    a(k, p) = c * akp - s * akq;
    a(k, q) = s * akp + c * akq;
  }
  for (std::size_t k = 0; k < n; ++k) {
    const double apk = a(p, k);
    const double aqk = a(q, k);
    a(p, k) = c * apk - s * aqk;
    a(q, k) = s * apk + c * aqk;
  }
  a(p, q) = 0.0;
  a(q, p) = 0.0;

  for (std::size_t k = 0; k < n; ++k) {
    const double vkp = v(k, p);
    const double vkq = v(k, q);
    v(k, p) = c * vkp - s * vkq;
    v(k, q) = s * vkp + c * vkq;
  }
}

}  // namespace

EigenPair sym_eig(const Matrix& s, const JacobiOptions& options) {
  require_square(s, "sym_eig");
  if (!all_finite(s)) throw InvalidInput("sym_eig: non-finite input");
  const std::size_t n = s.rows();

  double asym = 0.0;
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      asym = std::max(asym, std::abs(s(i, j) - s(j, i)));
      a(i, j) = 0.5 * (s(i, j) + s(j, i));
    }
  }
  if (asym > 1e-9) {
    throw InvalidInput("sym_eig: matrix is not symmetric (max asymmetry " + std::to_string(asym) + ")");
  }

  Matrix v = Matrix::identity(n);
  const double threshold = options.tolerance * std::max(1.0, frobenius_norm(a));
  double residual = off_diagonal_norm(a);
  int sweep = 0;
  while (residual > threshold) {
    if (sweep == options.max_sweeps) {
      std::ostringstream msg;
      msg << "sym_eig: no convergence after " << options.max_sweeps << " sweeps, off-diagonal norm "
          << residual;
      throw ConvergenceError(msg.str(), residual);
    }
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) jacobi_rotate(a, v, p, q);
    residual = off_diagonal_norm(a);
    ++sweep;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });

  EigenPair out;
  out.eigenvalues.resize(n);
  out.eigenvectors = Matrix(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    out.eigenvalues[c] = a(order[c], order[c]);
    for (std::size_t r = 0; r < n; ++r) out.eigenvectors(r, c) = v(r, order[c]);
  }
  return out;
}

double log_det_psd(const Matrix& s) {
  const EigenPair eig = sym_eig(s);
  double total = 0.0;
  for (double lambda : eig.eigenvalues) {
    if (lambda < -1e-10) {
      throw NotPsdError("log_det_psd: eigenvalue " + std::to_string(lambda) + " below -1e-10");
    }
    total += std::log(std::max(lambda, 1e-300));
  }
  return total;
}

Matrix solve_spd(const Matrix& a, const Matrix& b) {
  require_square(a, "solve_spd");
  const std::size_t n = a.rows();
  if (b.rows() != n) throw ShapeError("solve_spd: right-hand side row count mismatch");

  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) throw NotPsdError("solve_spd: matrix is not positive definite");
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double v = a(i, j);
      for (std::size_t k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
      l(i, j) = v / l(j, j);
    }
  }

  Matrix x = b;
  for (std::size_t c = 0; c < b.cols(); ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double v = x(i, c);
      for (std::size_t k = 0; k < i; ++k) v -= l(i, k) * x(k, c);
      x(i, c) = v / l(i, i);
    }
    for (std::size_t i = n; i-- > 0;) {
      double v = x(i, c);
      for (std::size_t k = i + 1; k < n; ++k) v -= l(k, i) * x(k, c);
      x(i, c) = v / l(i, i);
    }
  }
  return x;
}

double determinant(const Matrix& a) {
  require_square(a, "determinant");
  Matrix lu = a;
  const std::size_t n = a.rows();
  double det = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(lu(i, k)) > std::abs(lu(pivot, k))) pivot = i;
    if (lu(pivot, k) == 0.0) return 0.0;
    if (pivot != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu(k, j), lu(pivot, j));
      det = -det;
    }
    det *= lu(k, k);
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = lu(i, k) / lu(k, k);
      for (std::size_t j = k; j < n; ++j) lu(i, j) -= f * lu(k, j);
    }
  }
  return det;
}

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double std, std::uint64_t seed) {
  if (rows == 0 || cols == 0) {
    throw ShapeError("gaussian_matrix: degenerate shape " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  if (!(std > 0.0) || !std::isfinite(std)) throw InvalidParameter("gaussian_matrix: std must be positive");
  Rng rng(seed);
  Matrix out(rows, cols);
  for (double& v : out.values()) v = std * rng.gaussian();
  return out;
}

}  // namespace probdr
