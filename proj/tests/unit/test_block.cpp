#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "probdr/block.hpp"
#include "probdr/error.hpp"
#include "probdr/graph.hpp"
#include "probdr/objective.hpp"

using namespace probdr;

namespace {

double row_std(std::span<const double> row) {
  double mean = 0.0;
  for (double v : row) mean += v;
  mean /= double(row.size());
  double var = 0.0;
  for (double v : row) var += (v - mean) * (v - mean);
  return std::sqrt(var / double(row.size()));
}

}  // namespace

TEST_CASE("experiment_init values") {
  const BlockWeights w = experiment_init(100, 128, 30.0, 0.4);
  CHECK(w.w_q(0, 0) == doctest::Approx(54.7723).epsilon(1e-6));
  CHECK(w.w_k(0, 0) == doctest::Approx(4.84123).epsilon(1e-6));
  CHECK(w.w_q(0, 0) == doctest::Approx(std::sqrt(3000.0)).epsilon(1e-15));
  CHECK(w.w_k(0, 0) == doctest::Approx(std::sqrt(3000.0 / 128.0)).epsilon(1e-15));
  CHECK(w.w_q(0, 1) == 0.0);
  CHECK(w.w_v(5, 5) == doctest::Approx(0.8));
  CHECK(w.w_lin(5, 5) == doctest::Approx(-0.8));
  CHECK(w.ln_gain_1.size() == 128);
  CHECK(w.ln_gain_1[0] == doctest::Approx(0.1));
  CHECK(w.ln_gain_2[127] == doctest::Approx(0.1));
  CHECK(w.mode == AttentionMode::diffusion);
  CHECK(w.logit_scale == LogitScale::scaled_dot);
  CHECK(w.dim() == 128);
  CHECK_THROWS_AS(experiment_init(100, 128, 30.0, 0.6), InvalidParameter);
  CHECK_THROWS_AS(experiment_init(100, 128, 30.0, 0.0), InvalidParameter);
  CHECK_NOTHROW(experiment_init(100, 128, 30.0, 0.5));
}

TEST_CASE("derivation_init values") {
  const BlockWeights w = derivation_init(3, 2.0, 0.4, 1.0);
  CHECK(w.w_q(1, 1) == doctest::Approx(std::sqrt(2.0)));
  CHECK(w.w_lin(0, 0) == doctest::Approx(-0.2));
  CHECK(w.ln_gain_1[0] == doctest::Approx(1.0 / std::sqrt(3.0)));
  CHECK(w.logit_scale == LogitScale::raw);
}

TEST_CASE("mode names round-trip") {
  CHECK(parse_attention_mode(to_string(AttentionMode::standard)) == AttentionMode::standard);
  CHECK(parse_attention_mode("diffusion") == AttentionMode::diffusion);
  CHECK_THROWS_AS(parse_attention_mode("other"), InvalidParameter);
}

TEST_CASE("project_rows") {
  const Matrix p = project_rows(Matrix{{1, 2, 3}});
  const double s = 1.0 / std::sqrt(2.0);
  CHECK(max_abs_diff(p, Matrix{{-s, 0, s}}) < 1e-15);
  oracle::Gen gen(30);
  const Matrix x = gen.gaussian(20, 7);
  const Matrix px = project_rows(x);
  CHECK(max_abs_diff(project_rows(px), px) < 1e-12);
  CHECK(max_abs_diff(px, oracle::project(x)) < 1e-14);
  CHECK(rows_are_projected(px, 1e-12));
  CHECK_THROWS_AS(project_rows(Matrix{{1, 2}, {3, 3}}), DegenerateRow);
  try {
    project_rows(Matrix{{1, 2}, {3, 3}});
  } catch (const DegenerateRow& e) {
    CHECK(e.row() == 1);
  }
}

TEST_CASE("layer_norm_rows") {
  const double s = 1.0 / std::sqrt(2.0);
  const Matrix ln = layer_norm_rows(Matrix{{1, 2, 3}}, std::vector<double>(3, 1.0 / std::sqrt(3.0)));
  CHECK(max_abs_diff(ln, Matrix{{-s, 0, s}}) < 1e-15);

  oracle::Gen gen(31);
  const Matrix x = gen.gaussian(5, 16);
  const Matrix unit = layer_norm_rows(x, std::vector<double>(16, 1.0));
  for (std::size_t i = 0; i < 5; ++i) {
    double mean = 0.0;
    for (double v : unit.row(i)) mean += v;
    CHECK(std::abs(mean) < 1e-12);
    CHECK(row_std(unit.row(i)) == doctest::Approx(1.0));
  }
  const Matrix tenth = layer_norm_rows(x, std::vector<double>(16, 1.0 / std::sqrt(100.0)));
  for (std::size_t i = 0; i < 5; ++i) CHECK(row_std(tenth.row(i)) == doctest::Approx(0.1));
  CHECK_THROWS_AS(layer_norm_rows(x, std::vector<double>(3, 1.0)), ShapeError);
  CHECK_THROWS_AS(layer_norm_rows(Matrix{{2, 2, 2}}, std::vector<double>(3, 1.0)), DegenerateRow);
}

TEST_CASE("ffn_step") {
  oracle::Gen gen(32);
  const Matrix x = gen.gaussian(4, 3);
  CHECK(max_abs_diff(ffn_step(x, Matrix::identity(3) * -0.8), x * 0.2) < 1e-15);
  CHECK(max_abs_diff(ffn_step(x, Matrix::identity(3) * -(0.8 / 4.0)), x * 0.8) < 1e-15);
  CHECK(ffn_step(x, Matrix(3, 3)) == x);
}

TEST_CASE("logit diagonal equals kappa for LayerNorm-ed rows") {
  oracle::Gen gen(33);
  for (std::size_t n : {10u, 100u, 1000u}) {
    for (std::size_t q : {4u, 128u}) {
      const double kappa = gen.uniform(1.0, 50.0);
      const BlockWeights w = experiment_init(n, q, kappa, 0.4);
      const Matrix x = layer_norm_rows(gen.gaussian(std::min<std::size_t>(n, 40), q), w.ln_gain_1);
      const Matrix logits = attention_logits(x, w);
      for (std::size_t i = 0; i < x.rows(); ++i) CHECK(std::abs(logits(i, i) - kappa) < 1e-9);
    }
  }
}

TEST_CASE("attention_step identities") {
  oracle::Gen gen(34);
  const std::size_t n = 6, q = 4;
  BlockWeights w = experiment_init(n, q, 5.0, 0.3);
  const Matrix x = layer_norm_rows(gen.gaussian(n, q), w.ln_gain_1);

  // A = I under self-only masking: diffusion leaves X unchanged.
  Matrix self_only(n, n, kDefaultIota);
  for (std::size_t i = 0; i < n; ++i) self_only(i, i) = 0.0;
  CHECK(attention_step(x, w, self_only) == x);

  const Matrix causal = attention_step(x, w, mask_causal(n));
  for (std::size_t j = 0; j < q; ++j) CHECK(causal(0, j) == x(0, j));

  // Direct formula: X + 2η(σ(κ·PPᵀ - M) - I)X with P the projected rows.
  const Matrix p = oracle::project(x);
  const Matrix a = oracle::naive_softmax(matmul_nt(p, p) * 5.0);
  const Matrix expect = x + matmul(a - Matrix::identity(n), x) * (2.0 * 0.3);
  CHECK(max_abs_diff(attention_step(x, w, mask_none(n)), expect) < 1e-10);

  // Standard minus diffusion is exactly X·W_v.
  const Matrix diff = attention_step(x, w, mask_none(n));
  w.mode = AttentionMode::standard;
  CHECK(max_abs_diff(attention_step(x, w, mask_none(n)) - diff, matmul(x, w.w_v)) < 1e-14);
}

TEST_CASE("block_forward is the composition of its four operations") {
  oracle::Gen gen(35);
  const std::size_t n = 9, q = 5;
  const BlockWeights w = experiment_init(n, q, 3.0, 0.4);
  const Matrix x = layer_norm_rows(gen.gaussian(n, q), w.ln_gain_1);
  const Matrix mask = mask_causal(n);
  const Matrix manual =
      layer_norm_rows(ffn_step(layer_norm_rows(attention_step(x, w, mask), w.ln_gain_1), w.w_lin), w.ln_gain_2);
  CHECK(block_forward(x, w, mask) == manual);
  CHECK_THROWS_AS(block_forward(Matrix(n, q, 1.0), w, mask), DegenerateRow);
}

TEST_CASE("block_forward equals gd_reference_step under derivation_init") {
  oracle::Gen gen(36);
  for (int t = 0; t < 30; ++t) {
    const std::size_t n = gen.index(2, 32);
    const std::size_t q = gen.index(2, 8);
    const double kappa = gen.uniform(0.5, 10.0);
    const double eta = gen.uniform(0.01, 0.5);
    const double beta = gen.uniform(0.1, 2.0);
    const Matrix x = oracle::project(gen.gaussian(n, q));
    const Matrix mask = t % 2 ? mask_causal(n) : mask_none(n);
    const BlockWeights w = derivation_init(q, kappa, eta, beta);
    const Matrix lt = soft_laplacian(soft_adjacency(x, kappa, mask));
    CHECK(max_abs_diff(block_forward(x, w, mask), gd_reference_step(x, lt, eta, beta, q)) <= 1e-10);
  }
}

TEST_CASE("gd_reference_step limits") {
  oracle::Gen gen(37);
  const Matrix x = gen.gaussian(5, 4);
  const Matrix lt = soft_laplacian(soft_adjacency(oracle::project(x), 1.0, mask_none(5)));
  CHECK(max_abs_diff(gd_reference_step(x, lt, 0.0, 1.0, 4), project_rows(project_rows(x))) < 1e-15);
  CHECK(max_abs_diff(gd_reference_step(x, Matrix(5, 5), 0.4, 1e12, 4), project_rows(x)) < 1e-9);
}

TEST_CASE("a derivation-faithful attention step lowers data_term before re-projection") {
  oracle::Gen gen(38);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = gen.index(2, 24);
    const std::size_t q = gen.index(3, 8);
    const double kappa = gen.uniform(0.5, 4.0);
    const double eta = gen.uniform(0.01, 0.5);
    const Matrix x = oracle::project(gen.gaussian(n, q));
    const BlockWeights w = derivation_init(q, kappa, eta, 1.0);
    const Matrix lt = soft_laplacian(soft_adjacency(x, kappa, mask_none(n)));
    CHECK(data_term(attention_step(x, w, mask_none(n)), lt, 1.0) < data_term(x, lt, 1.0));
  }
}

TEST_CASE("step_size_from_weight") {
  CHECK(step_size_from_weight(Matrix::identity(4) * 0.8) == doctest::Approx(0.8));
  oracle::Gen gen(39);
  const Matrix r = gen.orthogonal(4);
  CHECK(step_size_from_weight(r * 0.3) == doctest::Approx(0.3));
}
