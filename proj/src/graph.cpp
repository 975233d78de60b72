#include "probdr/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "probdr/error.hpp"
#include "probdr/linalg.hpp"

namespace probdr {

namespace {

void require_positive_size(std::size_t n, const char* context) {
  if (n == 0) throw ShapeError(std::string(context) + ": n must be at least 1");
}

void require_iota(double iota, const char* context) {
  if (!(iota > 0.0)) throw InvalidParameter(std::string(context) + ": iota must be positive");
}

}  // namespace

Matrix mask_none(std::size_t n) {
  require_positive_size(n, "mask_none");
  return Matrix(n, n);
}

Matrix mask_self_exclusion(std::size_t n, double iota) {
  require_positive_size(n, "mask_self_exclusion");
  require_iota(iota, "mask_self_exclusion");
  return Matrix::identity(n) * iota;
}

Matrix mask_causal(std::size_t n, double iota) {
  require_positive_size(n, "mask_causal");
  require_iota(iota, "mask_causal");
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m(i, j) = iota;
  return m;
}

Matrix mask_with_beta(const Matrix& mask, double beta) {
  require_square(mask, "mask_with_beta");
  Matrix out = mask;
  for (std::size_t i = 0; i < out.rows(); ++i) out(i, i) += beta;
  return out;
}

Matrix soft_adjacency(const Matrix& z, double kappa, const Matrix& mask) {
  if (!(kappa > 0.0)) throw InvalidParameter("soft_adjacency: kappa must be positive");
  if (mask.rows() != z.rows() || mask.cols() != z.rows()) {
    throw ShapeError("soft_adjacency: mask must be " + std::to_string(z.rows()) + "x" + std::to_string(z.rows()));
  }
  Matrix logits = matmul_nt(z, z);
  logits *= kappa;
  logits -= mask;
  return row_softmax(logits);
}

Matrix soft_laplacian(const Matrix& adjacency) {
  require_square(adjacency, "soft_laplacian");
  const std::size_t n = adjacency.rows();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : adjacency.row(i)) s += v;
    if (std::abs(s - 1.0) > 1e-9) {
      throw InvalidInput("soft_laplacian: row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
  }
  Matrix l = adjacency * -1.0;
  for (std::size_t i = 0; i < n; ++i) l(i, i) += 1.0;
  return l;
}

GraphSpec make_graph_spec(const Matrix& z, double kappa, const Matrix& mask) {
  GraphSpec g;
  g.adjacency = soft_adjacency(z, kappa, mask);
  g.laplacian = soft_laplacian(g.adjacency);
  g.kappa = kappa;
  g.mask = mask;
  return g;
}

KnnGraph knn_graph(const Matrix& y, std::size_t k) {
  const std::size_t n = y.rows();
  if (k < 1 || k >= n) {
    throw InvalidParameter("knn_graph: need 1 <= k < n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
  }

  Matrix dist(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double d = 0.0;
      auto a = y.row(i);
      auto b = y.row(j);
      for (std::size_t c = 0; c < a.size(); ++c) d += (a[c] - b[c]) * (a[c] - b[c]);
      dist(i, j) = dist(j, i) = d;
    }
  }

  KnnGraph g;
  g.k = k;
  g.adjacency = Matrix(n, n);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) order.push_back(j);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        if (dist(i, a) != dist(i, b)) return dist(i, a) < dist(i, b);
                        return a < b;
                      });
    for (std::size_t r = 0; r < k; ++r) {
      g.adjacency(i, order[r]) = 1.0;
      g.adjacency(order[r], i) = 1.0;
    }
  }

  g.degree = Matrix(n, n);
  g.laplacian = g.adjacency * -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (double v : g.adjacency.row(i)) d += v;
    g.degree(i, i) = d;
    g.laplacian(i, i) += d;
  }
  return g;
}

double adjacency_match_score(const Matrix& soft, const KnnGraph& ref) {
  require_same_shape(soft, ref.adjacency, "adjacency_match_score");
  const std::size_t n = soft.rows();
  if (n == 0) throw ShapeError("adjacency_match_score: empty matrix");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mass = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (ref.adjacency(i, j) > 0.0) mass += soft(i, j);
    total += mass;
  }
  return total / static_cast<double>(n);
}

}  // namespace probdr
