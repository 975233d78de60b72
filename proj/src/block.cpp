#include "probdr/block.hpp"

#include <cmath>
#include <sstream>

#include "probdr/error.hpp"
#include "probdr/linalg.hpp"
#include "probdr/objective.hpp"

namespace probdr {

std::string to_string(AttentionMode mode) {
  return mode == AttentionMode::standard ? "standard" : "diffusion";
}

AttentionMode parse_attention_mode(const std::string& text) {
  if (text == "standard") return AttentionMode::standard;
  if (text == "diffusion") return AttentionMode::diffusion;
  throw InvalidParameter("unknown attention mode '" + text + "' (expected standard|diffusion)");
}

namespace {

void require_eta(double eta) {
  if (!(eta > 0.0 && eta <= 0.5)) {
    std::ostringstream msg;
    msg << "step size eta=" << eta << " outside (0, 0.5]";
    throw InvalidParameter(msg.str());
  }
}

}  // namespace

BlockWeights experiment_init(std::size_t n, std::size_t q, double kappa, double eta) {
  require_eta(eta);
  if (!(kappa > 0.0)) throw InvalidParameter("experiment_init: kappa must be positive");
  if (n < 1 || q < 1) throw InvalidParameter("experiment_init: n and q must be positive");
  const double nd = static_cast<double>(n);
  const double qd = static_cast<double>(q);
  const Matrix eye = Matrix::identity(q);

  BlockWeights w;
  w.w_q = eye * std::sqrt(kappa * nd);
  w.w_k = eye * std::sqrt(kappa * nd / qd);
  w.w_v = eye * (2.0 * eta);
  w.w_lin = eye * (-2.0 * eta);
  w.ln_gain_1.assign(q, 1.0 / std::sqrt(nd));
  w.ln_gain_2 = w.ln_gain_1;
  w.eta = eta;
  w.mode = AttentionMode::diffusion;
  w.logit_scale = LogitScale::scaled_dot;
  return w;
}

BlockWeights derivation_init(std::size_t q, double kappa, double eta, double beta) {
  require_eta(eta);
  if (!(kappa > 0.0)) throw InvalidParameter("derivation_init: kappa must be positive");
  if (!(beta > 0.0)) throw InvalidParameter("derivation_init: beta must be positive");
  if (q < 1) throw InvalidParameter("derivation_init: q must be positive");
  const double qd = static_cast<double>(q);
  const Matrix eye = Matrix::identity(q);

  BlockWeights w;
  w.w_q = eye * std::sqrt(kappa);
  w.w_k = eye * std::sqrt(kappa);
  w.w_v = eye * (2.0 * eta);
  w.w_lin = eye * (-2.0 * eta / (beta + qd));
  w.ln_gain_1.assign(q, 1.0 / std::sqrt(qd));
  w.ln_gain_2 = w.ln_gain_1;
  w.eta = eta;
  w.mode = AttentionMode::diffusion;
  w.logit_scale = LogitScale::raw;
  return w;
}

Matrix attention_logits(const Matrix& x, const BlockWeights& w) {
  Matrix logits = matmul_nt(matmul(x, w.w_q), matmul(x, w.w_k));
  if (w.logit_scale == LogitScale::scaled_dot) logits *= 1.0 / std::sqrt(static_cast<double>(x.cols()));
  return logits;
}

Matrix attention_matrix(const Matrix& x, const BlockWeights& w, const Matrix& mask) {
  if (mask.rows() != x.rows() || mask.cols() != x.rows()) throw ShapeError("attention: mask shape mismatch");
  return row_softmax(attention_logits(x, w) - mask);
}

Matrix attention_step(const Matrix& x, const BlockWeights& w, const Matrix& mask) {
  const Matrix a = attention_matrix(x, w, mask);
  const Matrix xv = matmul(x, w.w_v);
  Matrix mixed = matmul(a, xv);
  if (w.mode == AttentionMode::diffusion) {
#ifdef PROBDR_INJECT_DIFFUSION_SIGN_BUG
    mixed += xv;
#else
    mixed -= xv;
#endif
  }
  return x + mixed;
}

Matrix project_rows(const Matrix& x) {
  Matrix out = x;
  const double q = static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = out.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= q;
    double sq = 0.0;
    for (double& v : r) {
      v -= mean;
      sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (!(norm >= 1e-12)) throw DegenerateRow("project_rows: row " + std::to_string(i) + " is constant", i);
    for (double& v : r) v /= norm;
  }
  return out;
}

Matrix layer_norm_rows(const Matrix& x, const std::vector<double>& gain) {
  if (gain.size() != x.cols()) throw ShapeError("layer_norm_rows: gain length does not match columns");
  Matrix out = x;
  const double q = static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = out.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= q;
    double var = 0.0;
    for (double& v : r) {
      v -= mean;
      var += v * v;
    }
    const double std = std::sqrt(var / q);
    if (!(std >= 1e-12)) throw DegenerateRow("layer_norm_rows: row " + std::to_string(i) + " has zero variance", i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] = r[j] / std * gain[j];
  }
  return out;
}

Matrix ffn_step(const Matrix& x, const Matrix& w_lin) { return x + matmul(x, w_lin); }

Matrix block_forward(const Matrix& x, const BlockWeights& w, const Matrix& mask) {
  Matrix h = attention_step(x, w, mask);
  h = layer_norm_rows(h, w.ln_gain_1);
  h = ffn_step(h, w.w_lin);
  return layer_norm_rows(h, w.ln_gain_2);
}

Matrix gd_reference_step(const Matrix& x, const Matrix& ltilde, double eta, double beta, std::size_t q) {
  Matrix x1 = x - grad_data(x, ltilde) * eta;
  Matrix x2 = project_rows(x1);
  Matrix x3 = x2 - grad_reg_approx(x2, beta, q) * eta;
  return project_rows(x3);
}

double step_size_from_weight(const Matrix& w) {
  require_square(w, "step_size_from_weight");
  if (w.rows() == 0) throw ShapeError("step_size_from_weight: empty matrix");
  return std::pow(std::abs(determinant(w)), 1.0 / static_cast<double>(w.rows()));
}

}  // namespace probdr
