#pragma once

#include <cstddef>
#include <vector>

#include "probdr/matrix.hpp"

namespace probdr {

struct ObjectiveParams {
  double beta = 1.0;   // ridge term of the Wishart scale XXᵀ + βI
  double kappa = 1.0;  // concentration of the soft adjacency
  std::size_t q = 1;   // latent dimension
  std::size_t d = 1;   // Wishart degrees of freedom; bookkeeping only

  void validate() const;
};

struct EmbeddingState {
  Matrix x;
  bool projected = false;
};

// True when every row has |mean| <= tol and |norm - 1| <= tol.
bool rows_are_projected(const Matrix& x, double tol = 1e-10);

// tr(L̃(XXᵀ + βI)) = tr(XᵀL̃X) + β·tr(L̃).
double data_term(const Matrix& x, const Matrix& ltilde, double beta);
// log det(XXᵀ + βI_n) via the q×q identity log det(XᵀX + βI_q) + (n-q) log β.
double reg_term(const Matrix& x, double beta);
// data_term - reg_term, additive constant dropped.
double kl_objective(const Matrix& x, const Matrix& ltilde, const ObjectiveParams& params);

// Stop-grad data gradient 2·L̃·X, the direction a (Ã - I) attention step
// follows. It is the derivative of data_term only when L̃ is symmetric.
Matrix grad_data(const Matrix& x, const Matrix& ltilde);
// (L̃ + L̃ᵀ)·X, the derivative of data_term for any frozen L̃.
Matrix grad_data_exact(const Matrix& x, const Matrix& ltilde);
// Gradient of reg_term: 2·X·(XᵀX + βI)⁻¹.
Matrix grad_reg_exact(const Matrix& x, double beta);
// Linearised regulariser gradient (2/(q+β))·X.
Matrix grad_reg_approx(const Matrix& x, double beta, std::size_t q);
// (2q/(n+βq))·X, what grad_reg_exact reduces to when XᵀX = (n/q)·I.
// Comparison only.
Matrix grad_reg_isotropic(const Matrix& x, double beta);

struct LaplacianSpectrum {
  std::vector<double> all_eigenvalues;  // ascending
  std::vector<double> selected;         // q smallest above the zero threshold
  Matrix vectors;                       // n×q, paired with selected
};

inline constexpr double kZeroEigenvalueThreshold = 1e-9;

// Eigenvectors for the q smallest eigenvalues >= 1e-9. Each column's sign
// is fixed so its first entry with |v| > 1e-9 is positive.
LaplacianSpectrum laplacian_spectrum(const Matrix& l, std::size_t q);

// U_q·diag(max(1/λ - β, 0))^{1/2}, rotation R = I.
Matrix closed_form_embedding(const Matrix& l, std::size_t q, double beta);
// U_q, the solution under XᵀX = I.
Matrix constrained_embedding(const Matrix& l, std::size_t q);

}  // namespace probdr
