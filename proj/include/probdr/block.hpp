#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "probdr/matrix.hpp"

namespace probdr {

enum class AttentionMode { standard, diffusion };
enum class LogitScale { scaled_dot, raw };

std::string to_string(AttentionMode mode);
AttentionMode parse_attention_mode(const std::string& text);

// One encoder block read as an optimisation step on the latent rows.
struct BlockWeights {
  Matrix w_q;
  Matrix w_k;
  Matrix w_v;
  Matrix w_lin;
  std::vector<double> ln_gain_1;
  std::vector<double> ln_gain_2;
  double eta = 0.4;
  AttentionMode mode = AttentionMode::diffusion;
  LogitScale logit_scale = LogitScale::scaled_dot;

  std::size_t dim() const noexcept { return w_q.rows(); }
};

// Experiment initialisation for n points in q dimensions:
// W_q = √(κn)·I, W_k = √(κn/q)·I, W_v = 2η·I, W_lin = -2η·I, gains 1/√n,
// scaled dot-product logits, diffusion mode. Requires η ∈ (0, 0.5].
BlockWeights experiment_init(std::size_t n, std::size_t q, double kappa, double eta);

// Initialisation that makes one block exactly one projected gradient step:
// raw logits κ·XXᵀ, W_v = 2η·I, W_lin = -(2η/(β+q))·I, gains 1/√q.
BlockWeights derivation_init(std::size_t q, double kappa, double eta, double beta);

// Pre-mask attention logits (XW_q)(XW_k)ᵀ, divided by √q for scaled_dot.
Matrix attention_logits(const Matrix& x, const BlockWeights& w);
Matrix attention_matrix(const Matrix& x, const BlockWeights& w, const Matrix& mask);

// X + (A - I)·X·W_v in diffusion mode, X + A·X·W_v in standard mode.
Matrix attention_step(const Matrix& x, const BlockWeights& w, const Matrix& mask);

// Centre each row, then scale it to unit ℓ2 norm.
Matrix project_rows(const Matrix& x);
// (x - mean)/std per row (population std, no epsilon), times gain.
Matrix layer_norm_rows(const Matrix& x, const std::vector<double>& gain);
// X + X·W_lin
Matrix ffn_step(const Matrix& x, const Matrix& w_lin);

// attention -> LayerNorm -> linear -> LayerNorm
Matrix block_forward(const Matrix& x, const BlockWeights& w, const Matrix& mask);

// Reference alternating update with a frozen Laplacian:
// x1 = project(x - η·2L̃x), result = project(x1 - η·(2/(q+β))·x1).
Matrix gd_reference_step(const Matrix& x, const Matrix& ltilde, double eta, double beta, std::size_t q);

// |det W|^{1/q}; the step size carried by a weight matrix up to rotation.
double step_size_from_weight(const Matrix& w);

}  // namespace probdr
