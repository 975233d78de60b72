#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "probdr/block.hpp"
#include "probdr/matrix.hpp"

namespace probdr::lm {

struct LmConfig {
  std::size_t vocab_size = 0;
  std::size_t block_size = 64;
  std::size_t n_layer = 2;
  std::size_t n_head = 2;
  std::size_t n_embd = 128;
  AttentionMode attention_mode = AttentionMode::standard;
  double dropout = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const LmConfig&) const = default;
};

enum class LrSchedule { constant, cosine };
std::string to_string(LrSchedule s);
LrSchedule parse_lr_schedule(const std::string& text);

struct TrainConfig {
  std::size_t max_iters = 2000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double weight_decay = 0.1;
  std::size_t eval_interval = 100;
  std::size_t eval_iters = 20;
  LrSchedule lr_schedule = LrSchedule::constant;
  double grad_clip = 1.0;  // global-norm clip; <= 0 disables
  double split_fraction = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  // Cosine schedule: linear warmup, then decay to learning_rate / 10.
  std::size_t warmup_iters = 100;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Learning rate for iteration `iter` (0-based) under cfg.lr_schedule.
double learning_rate_at(const TrainConfig& cfg, std::size_t iter);

// Character vocabulary over Unicode code points of UTF-8 text, sorted.
class CharVocab {
 public:
  static CharVocab build(std::string_view text);

  std::size_t size() const noexcept { return chars_.size(); }
  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;
  const std::vector<char32_t>& chars() const noexcept { return chars_; }

 private:
  std::vector<char32_t> chars_;
};

enum class Split { train, val };

struct Batch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<int> inputs;   // batch_size × seq_len, row-major
  std::vector<int> targets;  // inputs shifted by one position
  std::vector<std::size_t> starts;  // window start per row, global token index

  bool operator==(const Batch&) const = default;
};

// Random contiguous windows over a train/val split of a token stream. The
// first split_fraction of tokens is train, the rest val. Window starts for
// (split, step, row) come from Rng(derive_seed(seed, {split, step})).
class BatchSource {
 public:
  BatchSource(std::vector<int> tokens, std::size_t block_size, std::size_t batch_size, double split_fraction,
              std::uint64_t seed);

  Batch sample(Split split, std::uint64_t step) const;
  // Like sample but from a named stream, e.g. fresh evaluation batches.
  Batch sample_stream(Split split, std::string_view stream, std::uint64_t step, std::uint64_t index) const;
  Batch window(std::span<const std::size_t> starts) const;

  std::size_t train_begin() const noexcept { return 0; }
  std::size_t train_end() const noexcept { return n_train_; }
  std::size_t val_begin() const noexcept { return n_train_; }
  std::size_t val_end() const noexcept { return tokens_.size(); }

 private:
  Batch sample_seeded(Split split, std::uint64_t seed) const;

  std::vector<int> tokens_;
  std::size_t block_size_;
  std::size_t batch_size_;
  std::size_t n_train_;
  std::uint64_t seed_;
};

struct ParamTensor {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool decay = false;  // weight decay applies to matrices, not biases or norms

  std::size_t size() const noexcept { return rows * cols; }
};

// Decoder-only transformer with all parameters in one flat buffer:
// token + positional embeddings, n_layer × (LN, causal multi-head
// attention, residual, LN, ReLU MLP, residual), final LN, linear head.
class LmModel {
 public:
  explicit LmModel(const LmConfig& config);

  const LmConfig& config() const noexcept { return config_; }
  std::span<double> params() noexcept { return params_; }
  std::span<const double> params() const noexcept { return params_; }
  const std::vector<ParamTensor>& layout() const noexcept { return layout_; }
  const ParamTensor& tensor(std::string_view name) const;
  std::span<double> view(std::string_view name);
  std::span<const double> view(std::string_view name) const;
  void set_attention_mode(AttentionMode mode) { config_.attention_mode = mode; }

 private:
  LmConfig config_;
  std::vector<ParamTensor> layout_;
  std::vector<double> params_;
};

// Per-layer activations kept for the backward pass.
struct LayerCache {
  Matrix x_in, xhat1, h1, qkv;
  std::vector<double> rstd1;
  std::vector<Matrix> attn;    // per (batch, head): row-stochastic causal A
  std::vector<Matrix> mixing;  // per (batch, head): A or A - I, after dropout
  std::vector<Matrix> attn_drop;
  Matrix heads;                // concatenated per-head outputs, pre-projection
  Matrix attn_out_drop;
  Matrix x_mid, xhat2, h2, fc;
  std::vector<double> rstd2;
  Matrix relu, mlp_out_drop;
};

struct ForwardCache {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<LayerCache> layers;
  Matrix x_final, xhat_f, h_f;
  std::vector<double> rstd_f;
  Matrix logits;  // (batch·seq) × vocab
};

struct ForwardOptions {
  bool training = false;     // enables dropout when config.dropout > 0
  std::uint64_t dropout_seed = 0;
};

ForwardCache lm_forward(const LmModel& model, const Batch& batch, const ForwardOptions& options = {});

// Mean negative log-softmax of the targets.
double cross_entropy(const Matrix& logits, std::span<const int> targets);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;  // same layout as LmModel::params()
};

LossAndGrad lm_backward(const LmModel& model, const Batch& batch, const ForwardOptions& options = {});

struct LossRecord {
  std::size_t iter = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;

  bool operator==(const LossRecord&) const = default;
};

struct TrainRun {
  LmConfig lm;
  TrainConfig train;
  std::vector<LossRecord> records;
  double wall_time_seconds = 0.0;

  bool operator==(const TrainRun&) const = default;
};

struct TrainHooks {
  std::function<void(std::size_t iter, const Batch&)> on_batch;
};

// AdamW training; evaluates at iteration 0, every eval_interval, and at
// max_iters. Throws TrainingDiverged on a non-finite loss.
TrainRun train(LmModel model, const TrainConfig& train_cfg, const std::vector<int>& tokens,
               const TrainHooks& hooks = {});
TrainRun train(const LmConfig& lm_cfg, const TrainConfig& train_cfg, std::string_view corpus,
               const TrainHooks& hooks = {});

struct DifferencePoint {
  std::size_t iter = 0;
  double train_difference = 0.0;  // standard - diffusion
  double val_difference = 0.0;

  bool operator==(const DifferencePoint&) const = default;
};

struct MedianPoint {
  std::size_t iter = 0;
  double val_standard = 0.0;
  double val_diffusion = 0.0;
  double val_difference = 0.0;    // median over seeds of the paired difference
  double train_difference = 0.0;

  bool operator==(const MedianPoint&) const = default;
};

struct RunEntry {
  std::uint64_t seed = 0;
  AttentionMode mode = AttentionMode::standard;
  TrainRun run;

  bool operator==(const RunEntry&) const = default;
};

struct SeedDifference {
  std::uint64_t seed = 0;
  std::vector<DifferencePoint> points;

  bool operator==(const SeedDifference&) const = default;
};

// Positive differences mean the diffusion run has the lower loss.
struct ComparisonReport {
  std::vector<RunEntry> runs;
  std::vector<SeedDifference> differences;
  std::vector<MedianPoint> median;
  double median_final_val_difference = 0.0;

  bool operator==(const ComparisonReport&) const = default;
};

// Trains a standard and a diffusion run per seed on identical
// initialisation and batch streams.
ComparisonReport compare_modes(const LmConfig& lm_cfg, const TrainConfig& train_cfg, std::string_view corpus,
                               const std::vector<std::uint64_t>& seeds);

std::string report_to_json(const ComparisonReport& report);
ComparisonReport report_from_json(std::string_view text);
std::string run_to_json(const TrainRun& run);
TrainRun run_from_json(std::string_view text);

struct MetricLine {
  std::size_t iter = 0;
  std::string split;
  double loss = 0.0;
  std::string mode;
  std::uint64_t seed = 0;

  bool operator==(const MetricLine&) const = default;
};

std::vector<MetricLine> metric_lines(const TrainRun& run);
// One JSON object per line: {"iter","split","loss","mode","seed"}.
void write_metrics_jsonl(const std::filesystem::path& path, const TrainRun& run);
std::vector<MetricLine> read_metrics_jsonl(const std::filesystem::path& path);
// iter,loss_standard_median,loss_diffusion_median,difference
void write_difference_csv(const std::filesystem::path& path, const ComparisonReport& report);

// Deterministic play-like English text (speaker turns over a fixed
// lexicon) for when no natural corpus is available.
std::string synthetic_corpus(std::size_t min_bytes, std::uint64_t seed);

}  // namespace probdr::lm
