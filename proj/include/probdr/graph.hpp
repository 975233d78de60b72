#pragma once

#include <cstddef>

#include "probdr/matrix.hpp"

namespace probdr {

// Finite stand-in for an infinite mask entry; exp(-1e9) is exactly 0.
inline constexpr double kDefaultIota = 1e9;

// Masks are subtracted from attention logits.
Matrix mask_none(std::size_t n);
Matrix mask_self_exclusion(std::size_t n, double iota = kDefaultIota);
// iota above the diagonal: row i sees columns 0..i.
Matrix mask_causal(std::size_t n, double iota = kDefaultIota);
// mask + beta·I, for the variant with a -βI logit offset.
Matrix mask_with_beta(const Matrix& mask, double beta);

struct GraphSpec {
  Matrix adjacency;  // row-stochastic
  Matrix laplacian;  // I - adjacency
  double kappa = 1.0;
  Matrix mask;
};

// row_softmax(kappa·ZZᵀ - mask).
Matrix soft_adjacency(const Matrix& z, double kappa, const Matrix& mask);
// I - adjacency; adjacency must be row-stochastic within 1e-9.
Matrix soft_laplacian(const Matrix& adjacency);
GraphSpec make_graph_spec(const Matrix& z, double kappa, const Matrix& mask);

struct KnnGraph {
  Matrix adjacency;  // symmetric 0/1, zero diagonal
  Matrix degree;     // diagonal
  Matrix laplacian;  // degree - adjacency
  std::size_t k = 0;
};

// Directed k-nearest neighbours by Euclidean distance (ties to the lower
// index), symmetrised with A = max(A, Aᵀ).
KnnGraph knn_graph(const Matrix& y, std::size_t k);

// Mean over rows of the soft mass that falls on reference edges.
double adjacency_match_score(const Matrix& soft, const KnnGraph& ref);

}  // namespace probdr
