#include <doctest.h>

#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "probdr/error.hpp"
#include "probdr/linalg.hpp"
#include "probdr/rng.hpp"

using namespace probdr;

TEST_CASE("matmul variants agree with the oracle") {
  oracle::Gen gen(1);
  const Matrix a = gen.gaussian(4, 3);
  const Matrix b = gen.gaussian(3, 5);
  const Matrix c = gen.gaussian(4, 5);
  CHECK(max_abs_diff(matmul(a, b), oracle::from_eigen(oracle::to_eigen(a) * oracle::to_eigen(b))) < 1e-14);
  CHECK(max_abs_diff(matmul_tn(a, c), matmul(transpose(a), c)) < 1e-14);
  CHECK(max_abs_diff(matmul_nt(a, transpose(b)), matmul(a, b)) < 1e-14);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  CHECK(trace(Matrix::identity(4)) == 4.0);
}

TEST_CASE("row_softmax closed forms") {
  const Matrix s = row_softmax(Matrix{{0, 0}, {0, 0}});
  CHECK(s == Matrix{{0.5, 0.5}, {0.5, 0.5}});
  const Matrix t = row_softmax(Matrix{{0.0, std::log(3.0)}});
  CHECK(t(0, 0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(t(0, 1) == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("row_softmax matches naive exp/sum") {
  oracle::Gen gen(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix m = gen.gaussian(3, 3);
    CHECK(max_abs_diff(row_softmax(m), oracle::naive_softmax(m)) < 1e-14);
  }
}

TEST_CASE("row_softmax is stable and rejects non-finite input") {
  const Matrix big = row_softmax(Matrix{{1000.0, 999.0}, {-1e9, 0.0}});
  CHECK(all_finite(big));
  CHECK(big(1, 0) == 0.0);
  CHECK(big(1, 1) == 1.0);
  CHECK_THROWS_AS(row_softmax(Matrix{{0.0, NAN}}), InvalidInput);
  CHECK_THROWS_AS(row_softmax(Matrix{{INFINITY, 0.0}}), InvalidInput);
}

TEST_CASE("sym_eig on small closed forms") {
  const EigenPair id = sym_eig(Matrix::identity(3));
  for (double v : id.eigenvalues) CHECK(v == doctest::Approx(1.0));

  const EigenPair d = sym_eig(Matrix{{3, 0}, {0, 1}});
  CHECK(d.eigenvalues[0] == doctest::Approx(1.0));
  CHECK(d.eigenvalues[1] == doctest::Approx(3.0));
  CHECK(std::abs(d.eigenvectors(1, 0)) == doctest::Approx(1.0));
  CHECK(std::abs(d.eigenvectors(0, 1)) == doctest::Approx(1.0));

  // Frozen from the Eigen oracle: P3 spectrum is 0, 1, 3.
  const Matrix p3{{1, -1, 0}, {-1, 2, -1}, {0, -1, 1}};
  const auto expect = oracle::eigenvalues(p3);
  const EigenPair e = sym_eig(p3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(e.eigenvalues[i] - expect[i]) < 1e-12);
  CHECK(std::abs(e.eigenvalues[0]) < 1e-12);
  CHECK(std::abs(e.eigenvalues[1] - 1.0) < 1e-12);
  CHECK(std::abs(e.eigenvalues[2] - 3.0) < 1e-12);
}

TEST_CASE("sym_eig property: reconstruction and orthonormality up to 64x64") {
  oracle::Gen gen(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = gen.index(1, 64);
    const Matrix a = gen.gaussian(n, n);
    const Matrix s = (a + transpose(a)) * 0.5;
    const EigenPair e = sym_eig(s);
    const Matrix& u = e.eigenvectors;
    REQUIRE(std::is_sorted(e.eigenvalues.begin(), e.eigenvalues.end()));
    CHECK(max_abs_diff(matmul_tn(u, u), Matrix::identity(n)) < 1e-10);
    CHECK(max_abs_diff(matmul_nt(matmul(u, Matrix::diagonal(e.eigenvalues)), u), s) < 1e-9);
    const auto expect = oracle::eigenvalues(s);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(e.eigenvalues[i] - expect[i]) < 1e-9);
  }
}

TEST_CASE("sym_eig rejects asymmetric and non-finite input, reports non-convergence") {
  CHECK_THROWS_AS(sym_eig(Matrix{{1, 2}, {0, 1}}), InvalidInput);
  CHECK_THROWS_AS(sym_eig(Matrix{{1, NAN}, {NAN, 1}}), InvalidInput);
  CHECK_THROWS_AS(sym_eig(Matrix(2, 3)), ShapeError);
  oracle::Gen gen(4);
  const Matrix a = gen.gaussian(12, 12);
  JacobiOptions one_sweep{1, 1e-15};
  CHECK_THROWS_AS(sym_eig(a + transpose(a), one_sweep), ConvergenceError);
}

TEST_CASE("log_det_psd") {
  CHECK(log_det_psd(Matrix::identity(4)) == 0.0);
  CHECK(log_det_psd(Matrix{{2, 0}, {0, 2}}) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-14));
  oracle::Gen gen(5);
  const Matrix x = gen.gaussian(5, 2);
  const Matrix s = matmul_nt(x, x) + Matrix::identity(5);
  CHECK(std::abs(log_det_psd(s) - std::log(oracle::to_eigen(s).determinant())) < 1e-9);
  CHECK(std::abs(log_det_psd(s) - oracle::logdet_eig(s)) < 1e-9);
  CHECK_THROWS_AS(log_det_psd(Matrix{{1, 0}, {0, -1}}), NotPsdError);
}

TEST_CASE("solve_spd and determinant") {
  oracle::Gen gen(6);
  const Matrix x = gen.gaussian(6, 4);
  const Matrix a = matmul_tn(x, x) + Matrix::identity(4);
  const Matrix b = gen.gaussian(4, 3);
  const Matrix sol = solve_spd(a, b);
  CHECK(max_abs_diff(matmul(a, sol), b) < 1e-12);
  CHECK(determinant(a) == doctest::Approx(oracle::to_eigen(a).determinant()).epsilon(1e-12));
  CHECK(determinant(Matrix{{0, 1}, {1, 0}}) == doctest::Approx(-1.0));
}

TEST_CASE("gaussian_matrix determinism, variance and shape errors") {
  CHECK(gaussian_matrix(2, 2, 1.0, 7) == gaussian_matrix(2, 2, 1.0, 7));
  CHECK_FALSE(gaussian_matrix(2, 2, 1.0, 7) == gaussian_matrix(2, 2, 1.0, 8));
  CHECK_THROWS_AS(gaussian_matrix(3, 0, 1.0, 0), ShapeError);
  CHECK_THROWS_AS(gaussian_matrix(0, 3, 1.0, 0), ShapeError);
  CHECK_THROWS_AS(gaussian_matrix(3, 3, 0.0, 0), InvalidParameter);

  const std::size_t d = 784;
  const Matrix w = gaussian_matrix(100, 1000, 1.0 / std::sqrt(double(d)), 11);
  const double mean = std::accumulate(w.values().begin(), w.values().end(), 0.0) / double(w.size());
  double var = 0.0;
  for (double v : w.values()) var += (v - mean) * (v - mean);
  var /= double(w.size() - 1);
  CHECK(std::abs(var - 1.0 / d) / (1.0 / d) < 0.05);
}

TEST_CASE("rng streams") {
  // Published first output of SplitMix64 from state 0.
  std::uint64_t state = 0;
  CHECK(splitmix64(state) == 0xE220A8397B1DCDAFull);

  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) CHECK(a.next() == b.next());
  CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  CHECK(stream_key("train") != stream_key("val"));
  // FNV-1a 64 of the empty string is the offset basis.
  CHECK(stream_key("") == 0xcbf29ce484222325ull);

  Rng r(9);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    const double g = r.gaussian();
    sum += g;
    sq += g * g;
    REQUIRE(r.below(7) < 7);
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
}
