#include "probdr/objective.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "probdr/error.hpp"
#include "probdr/linalg.hpp"

namespace probdr {

namespace {

void require_beta(double beta, const char* context) {
  if (!(beta > 0.0)) throw InvalidParameter(std::string(context) + ": beta must be positive");
}

void require_laplacian_for(const Matrix& x, const Matrix& ltilde, const char* context) {
  require_square(ltilde, context);
  if (ltilde.rows() != x.rows()) {
    throw ShapeError(std::string(context) + ": laplacian is " + std::to_string(ltilde.rows()) +
                     "x" + std::to_string(ltilde.cols()) + " but x has " + std::to_string(x.rows()) + " rows");
  }
}

}  // namespace

void ObjectiveParams::validate() const {
  require_beta(beta, "ObjectiveParams");
  if (!(kappa > 0.0)) throw InvalidParameter("ObjectiveParams: kappa must be positive");
  if (q < 1) throw InvalidParameter("ObjectiveParams: q must be at least 1");
}

bool rows_are_projected(const Matrix& x, double tol) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double sum = 0.0;
    double sq = 0.0;
    for (double v : x.row(i)) {
      sum += v;
      sq += v * v;
    }
    if (std::abs(sum) / static_cast<double>(x.cols()) > tol) return false;
    if (std::abs(std::sqrt(sq) - 1.0) > tol) return false;
  }
  return true;
}

double data_term(const Matrix& x, const Matrix& ltilde, double beta) {
  require_laplacian_for(x, ltilde, "data_term");
  const Matrix lx = matmul(ltilde, x);
  double quad = 0.0;
  auto a = lx.values();
  auto b = x.values();
  for (std::size_t i = 0; i < a.size(); ++i) quad += a[i] * b[i];
  return quad + beta * trace(ltilde);
}

double reg_term(const Matrix& x, double beta) {
  require_beta(beta, "reg_term");
  const std::size_t n = x.rows();
  const std::size_t q = x.cols();
  Matrix gram = matmul_tn(x, x);
  for (std::size_t i = 0; i < q; ++i) gram(i, i) += beta;
  return log_det_psd(gram) + (static_cast<double>(n) - static_cast<double>(q)) * std::log(beta);
}

double kl_objective(const Matrix& x, const Matrix& ltilde, const ObjectiveParams& params) {
  params.validate();
  return data_term(x, ltilde, params.beta) - reg_term(x, params.beta);
}

Matrix grad_data(const Matrix& x, const Matrix& ltilde) {
  require_laplacian_for(x, ltilde, "grad_data");
  return matmul(ltilde, x) * 2.0;
}

Matrix grad_data_exact(const Matrix& x, const Matrix& ltilde) {
  require_laplacian_for(x, ltilde, "grad_data_exact");
  return matmul(ltilde + transpose(ltilde), x);
}

Matrix grad_reg_exact(const Matrix& x, double beta) {
  require_beta(beta, "grad_reg_exact");
  Matrix gram = matmul_tn(x, x);
  for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) += beta;
  // X·G⁻¹ = (G⁻¹·Xᵀ)ᵀ since G is symmetric.
  return transpose(solve_spd(gram, transpose(x))) * 2.0;
}

Matrix grad_reg_approx(const Matrix& x, double beta, std::size_t q) {
  require_beta(beta, "grad_reg_approx");
  return x * (2.0 / (static_cast<double>(q) + beta));
}

Matrix grad_reg_isotropic(const Matrix& x, double beta) {
  require_beta(beta, "grad_reg_isotropic");
  const double n = static_cast<double>(x.rows());
  const double q = static_cast<double>(x.cols());
  return x * (2.0 * q / (n + beta * q));
}

LaplacianSpectrum laplacian_spectrum(const Matrix& l, std::size_t q) {
  require_square(l, "laplacian_spectrum");
  const std::size_t n = l.rows();
  if (q < 1 || q >= n) {
    throw InvalidParameter("laplacian_spectrum: need 1 <= q < n (q=" + std::to_string(q) +
                           ", n=" + std::to_string(n) + ")");
  }
  const EigenPair eig = sym_eig(l);

  LaplacianSpectrum out;
  out.all_eigenvalues = eig.eigenvalues;
  std::vector<std::size_t> picked;
  for (std::size_t i = 0; i < n && picked.size() < q; ++i)
    if (eig.eigenvalues[i] >= kZeroEigenvalueThreshold) picked.push_back(i);

  if (picked.size() < q) {
    std::ostringstream msg;
    msg << "insufficient rank: requested q=" << q << " non-zero eigenvalues, found " << picked.size()
        << "; spectrum:";
    for (double v : eig.eigenvalues) msg << ' ' << v;
    throw InsufficientRank(msg.str());
  }

  out.vectors = Matrix(n, q);
  for (std::size_t c = 0; c < q; ++c) {
    const std::size_t src = picked[c];
    out.selected.push_back(eig.eigenvalues[src]);
    double sign = 1.0;
    for (std::size_t r = 0; r < n; ++r) {
      if (std::abs(eig.eigenvectors(r, src)) > 1e-9) {
        sign = eig.eigenvectors(r, src) < 0.0 ? -1.0 : 1.0;
        break;
      }
    }
    for (std::size_t r = 0; r < n; ++r) out.vectors(r, c) = sign * eig.eigenvectors(r, src);
  }
  return out;
}

Matrix closed_form_embedding(const Matrix& l, std::size_t q, double beta) {
  if (beta < 0.0) throw InvalidParameter("closed_form_embedding: beta must be non-negative");
  LaplacianSpectrum spec = laplacian_spectrum(l, q);
  Matrix x = std::move(spec.vectors);
  for (std::size_t c = 0; c < q; ++c) {
    const double scale = std::sqrt(std::max(1.0 / spec.selected[c] - beta, 0.0));
    for (std::size_t r = 0; r < x.rows(); ++r) x(r, c) *= scale;
  }
  return x;
}

Matrix constrained_embedding(const Matrix& l, std::size_t q) {
  return laplacian_spectrum(l, q).vectors;
}

}  // namespace probdr
