#include "probdr/dimred.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "probdr/error.hpp"
#include "probdr/graph.hpp"
#include "probdr/linalg.hpp"
#include "probdr/rng.hpp"

namespace probdr {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t offset, const std::filesystem::path& path) {
  if (buf.size() < offset + 4) throw FormatError("'" + path.string() + "': truncated IDX header");
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void check_magic(std::uint32_t observed, std::uint32_t expected, const std::filesystem::path& path) {
  if (observed != expected) {
    char text[96];
    std::snprintf(text, sizeof text, "bad IDX magic 0x%08X (expected 0x%08X)", observed, expected);
    throw FormatError("'" + path.string() + "': " + text);
  }
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> bytes{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                                  static_cast<char>(v)};
  out.write(bytes.data(), 4);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::size_t LabeledDataset::num_classes() const {
  if (labels.empty()) return 0;
  return static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
}

void LabeledDataset::validate() const {
  if (labels.size() != features.rows()) {
    throw ConsistencyError("dataset: " + std::to_string(labels.size()) + " labels for " +
                           std::to_string(features.rows()) + " rows");
  }
  for (int l : labels)
    if (l < 0) throw InvalidInput("dataset: negative label");
}

LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        std::size_t limit) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  check_magic(read_be32(img, 0, images_path), kIdxImagesMagic, images_path);
  check_magic(read_be32(lab, 0, labels_path), kIdxLabelsMagic, labels_path);

  const std::size_t count = read_be32(img, 4, images_path);
  const std::size_t rows = read_be32(img, 8, images_path);
  const std::size_t cols = read_be32(img, 12, images_path);
  const std::size_t label_count = read_be32(lab, 4, labels_path);
  if (count != label_count) {
    throw ConsistencyError("IDX count mismatch: " + std::to_string(count) + " images vs " +
                           std::to_string(label_count) + " labels");
  }
  const std::size_t d = rows * cols;
  if (img.size() < 16 + count * d) {
    throw FormatError("'" + images_path.string() + "': truncated, expected " + std::to_string(16 + count * d) +
                      " bytes, found " + std::to_string(img.size()));
  }
  if (lab.size() < 8 + count) {
    throw FormatError("'" + labels_path.string() + "': truncated, expected " + std::to_string(8 + count) +
                      " bytes, found " + std::to_string(lab.size()));
  }

  const std::size_t n = limit == 0 ? count : std::min(limit, count);
  LabeledDataset out;
  out.features = Matrix(n, d);
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) out.features(i, j) = static_cast<double>(img[16 + i * d + j]) / 255.0;
    out.labels[i] = lab[8 + i];
  }
  out.source = "idx:" + images_path.string();
  return out;
}

void write_idx_images(const std::filesystem::path& path, std::uint32_t count, std::uint32_t rows,
                      std::uint32_t cols, const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != std::size_t{count} * rows * cols) throw ShapeError("write_idx_images: pixel count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  put_be32(out, kIdxImagesMagic);
  put_be32(out, count);
  put_be32(out, rows);
  put_be32(out, cols);
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  put_be32(out, kIdxLabelsMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

LabeledDataset make_blobs(const BlobOptions& o) {
  if (o.classes < 2 || o.classes >= o.d) throw InvalidParameter("make_blobs: need 2 <= classes < d");
  if (o.n < 2 * o.classes) throw InvalidParameter("make_blobs: need at least two points per class");
  Rng rng(o.seed);
  const double axis = o.separation / std::sqrt(2.0);
  const double offset = o.shared_offset / std::sqrt(static_cast<double>(o.d - o.classes));

  LabeledDataset out;
  out.features = Matrix(o.n, o.d);
  out.labels.resize(o.n);
  for (std::size_t i = 0; i < o.n; ++i) {
    const std::size_t c = i % o.classes;
    out.labels[i] = static_cast<int>(c);
    for (std::size_t j = 0; j < o.d; ++j) {
      const double centre = j == c ? axis : (j >= o.classes ? offset : 0.0);
      out.features(i, j) = centre + rng.gaussian();
    }
  }
  out.source = "blobs";
  return out;
}

Matrix random_projection(const Matrix& y, std::size_t q, std::uint64_t seed) {
  if (q < 1) throw InvalidParameter("random_projection: q must be at least 1");
  const Matrix w = gaussian_matrix(y.cols(), q, 1.0 / std::sqrt(static_cast<double>(y.cols())), seed);
  return matmul(y, w);
}

UnrollTrace unroll(const Matrix& x0, const BlockWeights& weights, const Matrix& mask, std::size_t n_blocks) {
  UnrollTrace trace;
  trace.config.q = x0.cols();
  trace.config.eta = weights.eta;
  trace.config.n_blocks = n_blocks;
  trace.config.mode = weights.mode;
  trace.states.reserve(n_blocks + 1);
  trace.states.push_back(x0);
  for (std::size_t b = 0; b < n_blocks; ++b) {
    try {
      trace.states.push_back(block_forward(trace.states.back(), weights, mask));
    } catch (const DegenerateRow& e) {
      throw DegenerateRow("block " + std::to_string(b) + ": " + e.what(), e.row());
    }
    if (!all_finite(trace.states.back())) throw InvalidInput("block " + std::to_string(b) + ": non-finite state");
  }
  return trace;
}

UnrollTrace run_dimred(const LabeledDataset& data, const DimredConfig& config) {
  data.validate();
  const std::size_t n = data.features.rows();
  BlockWeights w = experiment_init(n, config.q, config.kappa, config.eta);
  w.mode = config.mode;
  const Matrix projected = random_projection(data.features, config.q, derive_seed(config.seed, {stream_key("projection")}));
  const Matrix x0 = layer_norm_rows(projected, w.ln_gain_1);
  UnrollTrace trace = unroll(x0, w, mask_none(n), config.n_blocks);
  trace.config = config;
  return trace;
}

double cluster_ratio(const Matrix& x, const std::vector<int>& labels) {
  if (labels.size() != x.rows()) throw ShapeError("cluster_ratio: label count does not match rows");
  double within = 0.0;
  double between = 0.0;
  std::size_t n_within = 0;
  std::size_t n_between = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto a = x.row(i);
    for (std::size_t j = i + 1; j < x.rows(); ++j) {
      auto b = x.row(j);
      double d = 0.0;
      for (std::size_t c = 0; c < a.size(); ++c) d += (a[c] - b[c]) * (a[c] - b[c]);
      d = std::sqrt(d);
      if (labels[i] == labels[j]) {
        within += d;
        ++n_within;
      } else {
        between += d;
        ++n_between;
      }
    }
  }
  if (n_within == 0) throw InvalidInput("cluster_ratio: no class has two or more members");
  if (n_between == 0) throw InvalidInput("cluster_ratio: need at least two classes");
  const double mean_between = between / static_cast<double>(n_between);
  if (mean_between == 0.0) throw InvalidInput("cluster_ratio: all points coincide");
  return (within / static_cast<double>(n_within)) / mean_between;
}

void emit_scatter(const UnrollTrace& trace, const std::vector<int>& labels, const std::filesystem::path& path,
                  bool all_steps) {
  if (trace.states.empty()) throw InvalidInput("emit_scatter: empty trace");
  const Matrix& first = trace.states.front();
  if (first.cols() < 2) throw ShapeError("emit_scatter: need at least two latent dimensions");
  if (labels.size() != first.rows()) throw ShapeError("emit_scatter: label count does not match rows");

  std::vector<std::size_t> steps;
  if (all_steps) {
    for (std::size_t s = 0; s < trace.states.size(); ++s) steps.push_back(s);
  } else {
    steps.push_back(0);
    if (trace.states.size() > 1) steps.push_back(trace.states.size() - 1);
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "step,point,dim0,dim1,label\n";
  for (std::size_t s : steps) {
    const Matrix& x = trace.states[s];
    for (std::size_t i = 0; i < x.rows(); ++i) {
      out << s << ',' << i << ',' << format_double(x(i, 0)) << ',' << format_double(x(i, 1)) << ',' << labels[i]
          << '\n';
    }
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<ScatterRow> read_scatter(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != "step,point,dim0,dim1,label") {
    throw FormatError("'" + path.string() + "': unexpected scatter header");
  }
  std::vector<ScatterRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::array<std::string, 5> fields;
    std::stringstream ss(line);
    for (auto& f : fields)
      if (!std::getline(ss, f, ',')) throw FormatError("'" + path.string() + "': short scatter row");
    ScatterRow r;
    try {
      r.step = std::stoul(fields[0]);
      r.point = std::stoul(fields[1]);
      r.dim0 = std::strtod(fields[2].c_str(), nullptr);
      r.dim1 = std::strtod(fields[3].c_str(), nullptr);
      r.label = std::stoi(fields[4]);
    } catch (const std::exception&) {
      throw FormatError("'" + path.string() + "': malformed scatter row '" + line + "'");
    }
    rows.push_back(r);
  }
  return rows;
}

}  // namespace probdr
