#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "probdr/dimred.hpp"
#include "probdr/error.hpp"
#include "probdr/graph.hpp"
#include "probdr/linalg.hpp"

using namespace probdr;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "probdr_unit";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("IDX round trip and scaling") {
  const auto img = scratch("tiny-images.idx");
  const auto lab = scratch("tiny-labels.idx");
  write_idx_images(img, 1, 2, 2, {0, 255, 0, 255});
  write_idx_labels(lab, {7});
  const LabeledDataset d = load_idx(img, lab);
  REQUIRE(d.features.rows() == 1);
  CHECK(d.features == Matrix{{0, 1, 0, 1}});
  CHECK(d.labels == std::vector<int>{7});
}

TEST_CASE("IDX limit keeps the first items") {
  const auto img = scratch("many-images.idx");
  const auto lab = scratch("many-labels.idx");
  const std::uint32_t count = 300;
  std::vector<std::uint8_t> px(count * 4), labels(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    for (int j = 0; j < 4; ++j) px[i * 4 + j] = static_cast<std::uint8_t>((i + j) % 256);
    labels[i] = static_cast<std::uint8_t>(i % 10);
  }
  write_idx_images(img, count, 2, 2, px);
  write_idx_labels(lab, labels);
  const LabeledDataset d = load_idx(img, lab, 100);
  CHECK(d.features.rows() == 100);
  CHECK(d.labels.size() == 100);
  CHECK(d.labels[13] == 3);
  CHECK(load_idx(img, lab, 0).features.rows() == count);
}

TEST_CASE("IDX rejects bad magic, truncation, count mismatch, missing files") {
  const auto img = scratch("bad-images.idx");
  const auto lab = scratch("bad-labels.idx");
  write_idx_images(img, 2, 2, 2, {1, 2, 3, 4, 5, 6, 7, 8});
  write_idx_labels(lab, {0, 1});
  CHECK_NOTHROW(load_idx(img, lab));

  // Swapped files: label magic where image magic is expected.
  CHECK_THROWS_AS(load_idx(lab, img), FormatError);
  try {
    load_idx(lab, img);
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("0x00000801") != std::string::npos);
  }

  const auto trunc = scratch("trunc-images.idx");
  write_bytes(trunc, {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 9, 9});
  CHECK_THROWS_AS(load_idx(trunc, lab), FormatError);
  write_bytes(trunc, {0, 0, 8});
  CHECK_THROWS_AS(load_idx(trunc, lab), FormatError);

  const auto one = scratch("one-label.idx");
  write_idx_labels(one, {3});
  CHECK_THROWS_AS(load_idx(img, one), ConsistencyError);

  CHECK_THROWS_AS(load_idx(scratch("missing.idx"), lab), IoError);
}

TEST_CASE("random_projection") {
  const Matrix w = random_projection(Matrix::identity(6), 3, 5);
  CHECK(w == gaussian_matrix(6, 3, 1.0 / std::sqrt(6.0), 5));
  CHECK(random_projection(Matrix::identity(6), 3, 5) == w);
}

TEST_CASE("random_projection roughly preserves pairwise distances") {
  oracle::Gen gen(40);
  const Matrix y = gen.gaussian(50, 784);
  const Matrix x = random_projection(y, 128, 1);
  // The projection has variance 1/d per entry, so distances shrink by
  // √(q/d); compare after undoing that factor.
  const double scale = std::sqrt(784.0 / 128.0);
  std::vector<double> distortion;
  for (std::size_t i = 0; i < 50; ++i) {
    for (std::size_t j = i + 1; j < 50; ++j) {
      double dy = 0.0, dx = 0.0;
      for (std::size_t c = 0; c < 784; ++c) dy += (y(i, c) - y(j, c)) * (y(i, c) - y(j, c));
      for (std::size_t c = 0; c < 128; ++c) dx += (x(i, c) - x(j, c)) * (x(i, c) - x(j, c));
      distortion.push_back(std::abs(scale * std::sqrt(dx) / std::sqrt(dy) - 1.0));
    }
  }
  std::nth_element(distortion.begin(), distortion.begin() + distortion.size() / 2, distortion.end());
  CHECK(distortion[distortion.size() / 2] <= 0.25);
}

TEST_CASE("make_blobs") {
  BlobOptions opt;
  opt.n = 30;
  opt.d = 10;
  const LabeledDataset a = make_blobs(opt);
  CHECK(a.features.rows() == 30);
  CHECK(a.features.cols() == 10);
  CHECK(a.num_classes() == 3);
  CHECK(a.labels[4] == 1);
  CHECK(make_blobs(opt).features == a.features);
  opt.seed = 1;
  CHECK_FALSE(make_blobs(opt).features == a.features);
}

TEST_CASE("cluster_ratio") {
  const Matrix two{{0, 0}, {0, 0}, {1, 1}, {1, 1}};
  CHECK(cluster_ratio(two, {0, 0, 1, 1}) == 0.0);

  oracle::Gen gen(41);
  for (int t = 0; t < 5; ++t) {
    const std::size_t n = gen.index(10, 100);
    const Matrix x = gen.gaussian(n, 4);
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(gen.index(0, 2));
    labels[0] = 0;
    labels[1] = 1;
    CHECK(cluster_ratio(x, labels) == oracle::cluster_ratio(x, labels));
  }

  const Matrix iso = gen.gaussian(400, 5);
  std::vector<int> shuffled(400);
  for (std::size_t i = 0; i < 400; ++i) shuffled[i] = static_cast<int>(i % 4);
  std::shuffle(shuffled.begin(), shuffled.end(), gen.engine());
  CHECK(std::abs(cluster_ratio(iso, shuffled) - 1.0) < 0.1);
  CHECK_THROWS_AS(cluster_ratio(two, {0, 0, 0, 0}), InvalidInput);
}

TEST_CASE("unroll") {
  oracle::Gen gen(42);
  const std::size_t n = 12, q = 6;
  const BlockWeights w = experiment_init(n, q, 30.0, 0.4);
  const Matrix x0 = layer_norm_rows(gen.gaussian(n, q), w.ln_gain_1);
  CHECK(unroll(x0, w, mask_none(n), 0).states.size() == 1);
  const UnrollTrace t = unroll(x0, w, mask_none(n), 8);
  REQUIRE(t.states.size() == 9);
  const double bound = w.ln_gain_2[0] * std::sqrt(double(q));
  for (const Matrix& s : t.states) {
    CHECK(all_finite(s));
    for (std::size_t i = 0; i < n; ++i) {
      double norm = 0.0;
      for (double v : s.row(i)) norm += v * v;
      CHECK(std::sqrt(norm) <= bound * (1.0 + 1e-12));
    }
  }
}

TEST_CASE("run_dimred at full size") {
  oracle::Gen gen(43);
  LabeledDataset data;
  data.features = Matrix(1000, 784);
  for (double& v : data.features.values()) v = gen.uniform(0.0, 1.0);
  data.labels.resize(1000);
  for (std::size_t i = 0; i < 1000; ++i) data.labels[i] = static_cast<int>(i % 10);
  const UnrollTrace t = run_dimred(data, DimredConfig{});
  CHECK(t.states.size() == 9);
  CHECK(t.states.back().cols() == 128);
  CHECK(all_finite(t.states.back()));
}

TEST_CASE("run_dimred separates blobs") {
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    BlobOptions opt;
    opt.seed = seed;
    const LabeledDataset d = make_blobs(opt);
    DimredConfig cfg;
    cfg.seed = seed;
    const UnrollTrace t = run_dimred(d, cfg);
    if (cluster_ratio(t.states.back(), d.labels) < cluster_ratio(t.states.front(), d.labels)) ++improved;
  }
  CHECK(improved >= 4);
}

TEST_CASE("scatter CSV") {
  oracle::Gen gen(44);
  const BlockWeights w = experiment_init(2, 3, 30.0, 0.4);
  const Matrix x0 = layer_norm_rows(gen.gaussian(2, 3), w.ln_gain_1);
  const UnrollTrace t = unroll(x0, w, mask_none(2), 1);
  const auto path = scratch("scatter.csv");
  emit_scatter(t, {0, 1}, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "step,point,dim0,dim1,label");
  const auto rows = read_scatter(path);
  REQUIRE(rows.size() == 4);
  for (const ScatterRow& r : rows) {
    const Matrix& s = t.states[r.step];
    CHECK(r.dim0 == s(r.point, 0));
    CHECK(r.dim1 == s(r.point, 1));
  }
  CHECK(rows[3].step == 1);
  CHECK(rows[3].label == 1);
}
