// probdr command-line tool: verify, eigenmaps, dimred, train-lm, compare-lm.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "probdr/dimred.hpp"
#include "probdr/error.hpp"
#include "probdr/graph.hpp"
#include "probdr/lm.hpp"
#include "probdr/objective.hpp"
#include "probdr/verify.hpp"

namespace fs = std::filesystem;
using probdr::Matrix;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerify = 1;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw probdr::IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw probdr::IoError("cannot write " + path.string());
  out << text;
  if (!out) throw probdr::IoError("short write to " + path.string());
}

fs::path prepare_out(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw probdr::IoError("cannot create output directory " + dir + ": " + ec.message());
  return fs::path(dir);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// key=value lines become `--key=value` arguments placed before the real
// command-line arguments, so flags given on the command line win.
std::vector<std::string> config_arguments(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw probdr::IoError("cannot open config " + path.string());
  std::vector<std::string> args;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw CLI::ConversionError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    for (char& c : key)
      if (c == '_') c = '-';
    if (key == "config") throw CLI::ConversionError("config files cannot include other config files");
    args.push_back("--" + key + "=" + value);
  }
  return args;
}

// Writes every option of the subcommand as key=value; the file can be fed
// back through --config to reproduce the run.
void echo_config(const CLI::App& sub, const fs::path& out) {
  std::ostringstream ss;
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string& name = opt->get_single_name();
    if (name == "help" || name == "config" || name.empty()) continue;
    std::string value;
    if (opt->count() > 0) {
      const auto results = opt->reduced_results();
      for (std::size_t i = 0; i < results.size(); ++i) value += (i ? "," : "") + results[i];
    } else {
      value = opt->get_default_str();
    }
    if (value.empty()) continue;  // unset paths; the default is empty too
    ss << name << '=' << value << '\n';
  }
  write_text(out / "config.txt", ss.str());
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || item[0] == '-') throw CLI::ConversionError("--seeds: '" + item + "' is not a u64");
    seeds.push_back(v);
  }
  if (seeds.empty()) throw CLI::ConversionError("--seeds: need at least one seed");
  return seeds;
}

// Points as CSV, one row per point; a non-numeric first line is a header.
Matrix read_points_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream cells(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(cells, cell, ',')) {
      cell = trim(cell);
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != cell.size()) {
        numeric = false;
        break;
      }
      row.push_back(v);
    }
    if (!numeric) {
      if (rows.empty() && lineno == 1) continue;
      throw probdr::FormatError(path.string() + ":" + std::to_string(lineno) + ": non-numeric value");
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw probdr::FormatError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                                std::to_string(rows.front().size()) + " columns, got " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw probdr::FormatError(path.string() + ": no data rows");
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

void write_matrix_csv(const fs::path& path, const Matrix& m) {
  std::ostringstream ss;
  char buf[40];
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      ss << (j ? "," : "") << buf;
    }
    ss << '\n';
  }
  write_text(path, ss.str());
}

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out = "out";
};

void add_common(CLI::App* sub, Common& common) {
  sub->option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  sub->add_option("--config", common.config, "key=value config file; command-line flags override it");
  sub->add_option("--seed", common.seed, "Root seed for every random stream");
  sub->add_option("--out", common.out, "Output directory");
}

struct LmFlags {
  probdr::lm::LmConfig lm;
  probdr::lm::TrainConfig train;
  std::string mode = "standard";
  std::string schedule = "constant";
  std::string corpus;
  std::size_t corpus_bytes = 200000;
};

void add_lm_flags(CLI::App* sub, LmFlags& f) {
  sub->add_option("--corpus", f.corpus, "UTF-8 text corpus; a synthetic corpus is generated when omitted");
  sub->add_option("--corpus-bytes", f.corpus_bytes, "Size of the synthetic corpus");
  sub->add_option("--block-size", f.lm.block_size);
  sub->add_option("--n-layer", f.lm.n_layer);
  sub->add_option("--n-head", f.lm.n_head);
  sub->add_option("--n-embd", f.lm.n_embd);
  sub->add_option("--dropout", f.lm.dropout);
  sub->add_option("--max-iters", f.train.max_iters);
  sub->add_option("--batch-size", f.train.batch_size);
  sub->add_option("--lr", f.train.learning_rate);
  sub->add_option("--weight-decay", f.train.weight_decay);
  sub->add_option("--eval-interval", f.train.eval_interval);
  sub->add_option("--eval-iters", f.train.eval_iters);
  sub->add_option("--lr-schedule", f.schedule)->check(CLI::IsMember({"constant", "cosine"}));
  sub->add_option("--warmup-iters", f.train.warmup_iters);
  sub->add_option("--grad-clip", f.train.grad_clip);
  sub->add_option("--split", f.train.split_fraction, "Train fraction of the corpus");
}

std::string load_corpus(const LmFlags& f, std::uint64_t seed) {
  if (!f.corpus.empty()) return read_text(f.corpus);
  return probdr::lm::synthetic_corpus(f.corpus_bytes, seed);
}

void write_diverged(const fs::path& out, const probdr::TrainingDiverged& e) {
  nlohmann::ordered_json j;
  j["error"] = "training_diverged";
  j["iteration"] = e.iteration();
  j["loss"] = std::to_string(e.loss());
  j["message"] = e.what();
  write_text(out / "diverged.json", j.dump(2) + "\n");
}

int run_verify(const std::string& suite, const Common& common, bool write_file) {
  const auto results = probdr::verify::run_suite(suite);
  std::vector<std::string> failed;
  for (const auto& r : results) {
    std::printf("%s %s/%s residual=%.3e tol=%.1e\n", r.passed ? "PASS" : "FAIL", r.suite.c_str(), r.name.c_str(),
                r.residual, r.tolerance);
    if (!r.passed) failed.push_back(r.suite + "/" + r.name);
  }
  nlohmann::ordered_json summary;
  summary["suite"] = suite;
  summary["checks"] = results.size();
  summary["failed"] = failed;
  std::printf("%s\n", summary.dump().c_str());
  if (write_file) {
    const fs::path out = prepare_out(common.out);
    write_text(out / "verify.json", summary.dump(2) + "\n");
  }
  return failed.empty() ? kExitOk : kExitVerify;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"Soft-graph embeddings, unrolled attention blocks and diffusion-attention language models"};
  app.require_subcommand(1);

  Common common;

  auto* verify = app.add_subcommand("verify", "Run invariant and equivalence suites");
  add_common(verify, common);
  std::string suite = "all";
  verify->add_option("--suite", suite)->check(CLI::IsMember({"linalg", "graph", "objective", "block", "all"}));

  auto* eigenmaps = app.add_subcommand("eigenmaps", "Closed-form embeddings of a kNN graph");
  add_common(eigenmaps, common);
  std::string points_path, em_images, em_labels;
  std::size_t em_k = 10, em_q = 2, em_limit = 0;
  double em_beta = 0.0;
  eigenmaps->add_option("--data", points_path, "CSV of points, one row per point");
  eigenmaps->add_option("--idx-images", em_images, "IDX image file instead of --data");
  eigenmaps->add_option("--idx-labels", em_labels);
  eigenmaps->add_option("--limit", em_limit, "Keep the first N IDX items (0 = all)");
  eigenmaps->add_option("--k", em_k, "Neighbours per point");
  eigenmaps->add_option("--q", em_q, "Embedding dimension");
  eigenmaps->add_option("--beta", em_beta);

  auto* dimred = app.add_subcommand("dimred", "Unrolled attention blocks on a labelled dataset");
  add_common(dimred, common);
  probdr::DimredConfig dcfg;
  probdr::BlobOptions blobs;
  std::string synthetic, dr_images, dr_labels, dr_mode = "diffusion";
  std::size_t dr_limit = 1000;
  bool all_steps = false;
  dimred->add_option("--synthetic", synthetic, "Generate data instead of reading IDX files")
      ->check(CLI::IsMember({"", "blobs"}));
  dimred->add_option("--idx-images", dr_images);
  dimred->add_option("--idx-labels", dr_labels);
  dimred->add_option("--limit", dr_limit, "Keep the first N IDX items (0 = all)");
  dimred->add_option("--n", blobs.n, "Synthetic points");
  dimred->add_option("--d", blobs.d, "Synthetic ambient dimension");
  dimred->add_option("--classes", blobs.classes);
  dimred->add_option("--separation", blobs.separation);
  dimred->add_option("--shared-offset", blobs.shared_offset);
  dimred->add_option("--q", dcfg.q);
  dimred->add_option("--kappa", dcfg.kappa);
  dimred->add_option("--eta", dcfg.eta);
  dimred->add_option("--beta", dcfg.beta);
  dimred->add_option("--n-blocks", dcfg.n_blocks);
  dimred->add_option("--mode", dr_mode)->check(CLI::IsMember({"standard", "diffusion"}));
  dimred->add_flag("--all-steps", all_steps, "Write every intermediate state to the scatter CSV")->default_str("false");

  auto* train_lm = app.add_subcommand("train-lm", "Train one character-level language model");
  add_common(train_lm, common);
  LmFlags lm_flags;
  add_lm_flags(train_lm, lm_flags);
  train_lm->add_option("--mode", lm_flags.mode)->check(CLI::IsMember({"standard", "diffusion"}));

  auto* compare_lm = app.add_subcommand("compare-lm", "Paired standard/diffusion runs over several seeds");
  add_common(compare_lm, common);
  LmFlags cmp_flags;
  std::string seeds_text = "1,2,3";
  add_lm_flags(compare_lm, cmp_flags);
  compare_lm->add_option("--seeds", seeds_text, "Comma-separated seeds");

  // Splice config-file entries in ahead of the subcommand's own arguments.
  std::vector<std::string> args(argv + 1, argv + argc);
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string path;
    std::size_t erase = 0;
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      erase = 2;
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      erase = 1;
    }
    if (erase == 0) continue;
    std::vector<std::string> extra = config_arguments(path);
    args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i + erase));
    // Insert right after the subcommand name so a later flag still overrides.
    std::size_t at = 0;
    for (std::size_t j = 0; j < args.size(); ++j) {
      if (args[j] == "verify" || args[j] == "eigenmaps" || args[j] == "dimred" || args[j] == "train-lm" ||
          args[j] == "compare-lm") {
        at = j + 1;
        break;
      }
    }
    args.insert(args.begin() + static_cast<long>(at), extra.begin(), extra.end());
    args.insert(args.begin() + static_cast<long>(at), {"--config", path});
    break;
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (verify->parsed()) return run_verify(suite, common, verify->count("--out") > 0);

  if (eigenmaps->parsed()) {
    Matrix points;
    if (!em_images.empty()) {
      if (em_labels.empty()) throw CLI::ConversionError("--idx-images needs --idx-labels");
      points = probdr::load_idx(em_images, em_labels, em_limit).features;
    } else if (!points_path.empty()) {
      points = read_points_csv(points_path);
    } else {
      throw CLI::ConversionError("eigenmaps needs --data or --idx-images");
    }
    const fs::path out = prepare_out(common.out);
    echo_config(*eigenmaps, out);
    const probdr::KnnGraph graph = probdr::knn_graph(points, em_k);
    const probdr::LaplacianSpectrum spectrum = probdr::laplacian_spectrum(graph.laplacian, em_q);
    write_matrix_csv(out / "closed_form.csv", probdr::closed_form_embedding(graph.laplacian, em_q, em_beta));
    write_matrix_csv(out / "constrained.csv", probdr::constrained_embedding(graph.laplacian, em_q));
    nlohmann::ordered_json j;
    j["selected"] = spectrum.selected;
    j["all"] = spectrum.all_eigenvalues;
    write_text(out / "eigenvalues.json", j.dump(2) + "\n");
    return kExitOk;
  }

  if (dimred->parsed()) {
    probdr::LabeledDataset data;
    if (synthetic == "blobs") {
      if (!dr_images.empty()) throw CLI::ConversionError("--synthetic and --idx-images are exclusive");
      blobs.seed = common.seed;
      data = probdr::make_blobs(blobs);
    } else if (!dr_images.empty() && !dr_labels.empty()) {
      data = probdr::load_idx(dr_images, dr_labels, dr_limit);
    } else {
      throw CLI::ConversionError("dimred needs --synthetic blobs or both --idx-images and --idx-labels");
    }
    dcfg.seed = common.seed;
    dcfg.mode = probdr::parse_attention_mode(dr_mode);
    const fs::path out = prepare_out(common.out);
    echo_config(*dimred, out);
    const probdr::UnrollTrace trace = probdr::run_dimred(data, dcfg);
    probdr::emit_scatter(trace, data.labels, out / "scatter.csv", all_steps);
    nlohmann::ordered_json j;
    j["source"] = data.source;
    nlohmann::ordered_json steps = nlohmann::ordered_json::array();
    for (std::size_t s = 0; s < trace.states.size(); ++s)
      steps.push_back({{"step", s}, {"cluster_ratio", probdr::cluster_ratio(trace.states[s], data.labels)}});
    j["cluster_ratio"] = steps;
    write_text(out / "cluster_ratio.json", j.dump(2) + "\n");
    std::printf("cluster_ratio step0=%.6f step%zu=%.6f\n", steps.front()["cluster_ratio"].get<double>(),
                trace.states.size() - 1, steps.back()["cluster_ratio"].get<double>());
    return kExitOk;
  }

  if (train_lm->parsed()) {
    lm_flags.lm.attention_mode = probdr::parse_attention_mode(lm_flags.mode);
    lm_flags.lm.seed = common.seed;
    lm_flags.train.lr_schedule = probdr::lm::parse_lr_schedule(lm_flags.schedule);
    const std::string corpus = load_corpus(lm_flags, common.seed);
    const fs::path out = prepare_out(common.out);
    echo_config(*train_lm, out);
    try {
      const probdr::lm::TrainRun run = probdr::lm::train(lm_flags.lm, lm_flags.train, corpus);
      probdr::lm::write_metrics_jsonl(out / "metrics.jsonl", run);
      write_text(out / "summary.json", probdr::lm::run_to_json(run) + "\n");
      const auto& last = run.records.back();
      std::printf("final iter=%zu train=%.6f val=%.6f\n", last.iter, last.train_loss, last.val_loss);
    } catch (const probdr::TrainingDiverged& e) {
      write_diverged(out, e);
      throw;
    }
    return kExitOk;
  }

  if (compare_lm->parsed()) {
    const std::vector<std::uint64_t> seeds = parse_seeds(seeds_text);
    cmp_flags.train.lr_schedule = probdr::lm::parse_lr_schedule(cmp_flags.schedule);
    const std::string corpus = load_corpus(cmp_flags, common.seed);
    const fs::path out = prepare_out(common.out);
    echo_config(*compare_lm, out);
    try {
      const probdr::lm::ComparisonReport report = probdr::lm::compare_modes(cmp_flags.lm, cmp_flags.train, corpus, seeds);
      for (const auto& entry : report.runs) {
        const std::string name =
            "metrics_" + probdr::to_string(entry.mode) + "_seed" + std::to_string(entry.seed) + ".jsonl";
        probdr::lm::write_metrics_jsonl(out / name, entry.run);
      }
      probdr::lm::write_difference_csv(out / "difference.csv", report);
      write_text(out / "summary.json", probdr::lm::report_to_json(report) + "\n");
      std::printf("median final val difference (standard - diffusion) = %+.6f\n",
                  report.median_final_val_difference);
    } catch (const probdr::TrainingDiverged& e) {
      write_diverged(out, e);
      throw;
    }
    return kExitOk;
  }
  return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const CLI::Error& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kExitUsage;
  } catch (const probdr::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kExitData;
  } catch (const probdr::InvalidParameter& e) {
    std::fprintf(stderr, "invalid parameter: %s\n", e.what());
    return kExitUsage;
  } catch (const probdr::TrainingDiverged& e) {
    std::fprintf(stderr, "training diverged at iteration %ld (loss %g): %s\n", e.iteration(), e.loss(), e.what());
    return kExitVerify;
  } catch (const probdr::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitVerify;
  }
}
