#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "probdr/block.hpp"
#include "probdr/matrix.hpp"

namespace probdr {

struct LabeledDataset {
  Matrix features;          // n×d
  std::vector<int> labels;  // length n, in [0, num_classes)
  std::string source;

  std::size_t num_classes() const;
  void validate() const;
};

// Reads an IDX image file (magic 0x00000803) and label file (0x00000801),
// flattening images row-major and scaling bytes by 1/255. limit = 0 keeps all.
LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        std::size_t limit = 0);

// Writes IDX files from byte pixels; used for fixtures.
void write_idx_images(const std::filesystem::path& path, std::uint32_t count, std::uint32_t rows,
                      std::uint32_t cols, const std::vector<std::uint8_t>& pixels);
void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels);

struct BlobOptions {
  std::size_t n = 300;
  std::size_t d = 50;
  std::size_t classes = 3;
  double separation = 8.0;     // pairwise centre distance, in units of the noise std
  double shared_offset = 10.0; // norm of a component common to every point
  std::uint64_t seed = 0;
};

// Isotropic unit-variance Gaussian blobs, labels assigned round-robin.
// Centres sit on scaled coordinate axes; the shared offset lives in the
// remaining coordinates, the way non-negative pixel data share a large mean.
LabeledDataset make_blobs(const BlobOptions& options);

// Y·W with W ~ N(0, 1/d) of shape d×q drawn from gaussian_matrix(seed).
Matrix random_projection(const Matrix& y, std::size_t q, std::uint64_t seed);

struct DimredConfig {
  std::size_t q = 128;
  double kappa = 30.0;
  double eta = 0.4;
  double beta = 1.0;
  std::size_t n_blocks = 8;
  std::uint64_t seed = 0;
  AttentionMode mode = AttentionMode::diffusion;
};

struct UnrollTrace {
  std::vector<Matrix> states;  // n_blocks + 1 entries
  DimredConfig config;
};

// Applies block_forward n_blocks times, keeping every state.
UnrollTrace unroll(const Matrix& x0, const BlockWeights& weights, const Matrix& mask, std::size_t n_blocks);

// Full pipeline: random projection, LayerNorm with the first block gain,
// then n_blocks blocks from experiment_init with no mask.
UnrollTrace run_dimred(const LabeledDataset& data, const DimredConfig& config);

// Mean within-class pairwise distance over mean between-class distance.
double cluster_ratio(const Matrix& x, const std::vector<int>& labels);

struct ScatterRow {
  std::size_t step = 0;
  std::size_t point = 0;
  double dim0 = 0.0;
  double dim1 = 0.0;
  int label = 0;

  bool operator==(const ScatterRow&) const = default;
};

// CSV `step,point,dim0,dim1,label` for the first and last states, or all
// states when all_steps is set. Values use 17 significant digits.
void emit_scatter(const UnrollTrace& trace, const std::vector<int>& labels, const std::filesystem::path& path,
                  bool all_steps = false);
std::vector<ScatterRow> read_scatter(const std::filesystem::path& path);

}  // namespace probdr
