#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "probdr/matrix.hpp"

namespace probdr {

// σ applied row-wise, stabilised by subtracting each row maximum.
Matrix row_softmax(const Matrix& m);

struct EigenPair {
  std::vector<double> eigenvalues;  // ascending
  Matrix eigenvectors;              // column i pairs with eigenvalues[i]
};

struct JacobiOptions {
  int max_sweeps = 100;
  // Convergence when ‖offdiag‖_F <= tolerance * max(1, ‖S‖_F).
  double tolerance = 1e-12;
};

// Cyclic Jacobi eigensolver. Input is symmetrised as (s + sᵀ)/2; inputs
// with asymmetry above 1e-9 are rejected.
EigenPair sym_eig(const Matrix& s, const JacobiOptions& options = {});

// Σ log λᵢ over the spectrum, eigenvalues clamped below at 1e-300.
double log_det_psd(const Matrix& s);

// Solves a·x = b for symmetric positive-definite a (Cholesky).
Matrix solve_spd(const Matrix& a, const Matrix& b);

// Determinant of a general square matrix (partial-pivot LU).
double determinant(const Matrix& a);

// i.i.d. N(0, std²) entries, row-major from Rng(seed).
Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double std, std::uint64_t seed);

}  // namespace probdr
