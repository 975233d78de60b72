#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "probdr/dimred.hpp"
#include "probdr/lm.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "probdr_cli_tests";

int run(const std::string& args, const char* binary = PROBDR_CLI_PATH) {
  fs::create_directories(kRoot);
  const std::string cmd = std::string("\"") + binary + "\" " + args + " >" + (kRoot / "stdout.txt").string() +
                          " 2>" + (kRoot / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  const std::string s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

std::string out_dir(const std::string& name) {
  const fs::path p = kRoot / name;
  fs::remove_all(p);
  return p.string();
}

}  // namespace

TEST_CASE("verify exit codes") {
  CHECK(run("verify --suite all") == 0);
  CHECK(slurp(kRoot / "stdout.txt").find("\"failed\":[]") != std::string::npos);
  CHECK(run("verify --suite block") == 0);
  CHECK(slurp(kRoot / "stdout.txt").find("block/block_gd_equivalence") != std::string::npos);
  CHECK(run("verify --suite block", PROBDR_SIGN_BUG_CLI_PATH) == 1);
  CHECK(slurp(kRoot / "stdout.txt").find("FAIL block/block_gd_equivalence") != std::string::npos);
  CHECK(run("verify --suite nope") == 2);
}

TEST_CASE("usage errors exit 2") {
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("dimred --kappa notanumber --synthetic blobs") == 2);
  CHECK(run("dimred") == 2);
  CHECK(run("eigenmaps") == 2);
  CHECK(run("compare-lm --seeds 1,x") == 2);
  CHECK(run("--help") == 0);
}

TEST_CASE("eigenmaps on a three-point chain") {
  const fs::path data = kRoot / "chain.csv";
  fs::create_directories(kRoot);
  std::ofstream(data) << "x\n0\n1\n2\n";
  const std::string out = out_dir("em");
  REQUIRE(run("eigenmaps --data " + data.string() + " --k 1 --q 1 --beta 0 --out " + out) == 0);
  CHECK(line_count(fs::path(out) / "constrained.csv") == 3);
  CHECK(line_count(fs::path(out) / "closed_form.csv") == 3);
  std::istringstream cons(slurp(fs::path(out) / "constrained.csv"));
  double a, b, c;
  cons >> a >> b >> c;
  CHECK(a == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK(std::abs(b) < 1e-12);
  CHECK(c == doctest::Approx(-1.0 / std::sqrt(2.0)));
  const auto eig = nlohmann::json::parse(slurp(fs::path(out) / "eigenvalues.json"));
  CHECK(eig["selected"][0].get<double>() == doctest::Approx(1.0));
  // Unconnected pairs cannot give two nonzero eigenvalues out of four.
  std::ofstream(kRoot / "pairs.csv") << "0\n1\n10\n11\n";
  CHECK(run("eigenmaps --data " + (kRoot / "pairs.csv").string() + " --k 1 --q 3 --out " + out) == 1);
  CHECK(slurp(kRoot / "stderr.txt").find("insufficient rank") != std::string::npos);
  CHECK(run("eigenmaps --data " + (kRoot / "missing.csv").string() + " --out " + out) == 3);
}

TEST_CASE("dimred outputs, config echo and overrides") {
  const std::string out = out_dir("dr");
  REQUIRE(run("dimred --synthetic blobs --n 300 --d 50 --seed 2 --out " + out) == 0);
  CHECK(line_count(fs::path(out) / "scatter.csv") == 601);
  const auto ratio = nlohmann::json::parse(slurp(fs::path(out) / "cluster_ratio.json"));
  REQUIRE(ratio["cluster_ratio"].size() == 9);
  CHECK(ratio["cluster_ratio"][8]["cluster_ratio"].get<double>() <
        ratio["cluster_ratio"][0]["cluster_ratio"].get<double>());

  const std::string replay = out_dir("dr_replay");
  REQUIRE(run("dimred --config " + out + "/config.txt --out " + replay) == 0);
  CHECK(slurp(fs::path(out) / "scatter.csv") == slurp(fs::path(replay) / "scatter.csv"));

  const std::string over = out_dir("dr_over");
  REQUIRE(run("dimred --config " + out + "/config.txt --n-blocks 0 --out " + over) == 0);
  const auto rows = probdr::read_scatter(fs::path(over) / "scatter.csv");
  CHECK(rows.size() == 300);
  for (const auto& r : rows) CHECK(r.step == 0);

  std::ofstream(kRoot / "bad.cfg") << "synthetic=blobs\nno_such_key=3\n";
  CHECK(run("dimred --config " + (kRoot / "bad.cfg").string()) == 2);
  CHECK(run("dimred --config " + (kRoot / "absent.cfg").string()) == 3);
}

TEST_CASE("dimred IDX errors exit 3") {
  const fs::path img = kRoot / "img.idx";
  const fs::path lab = kRoot / "lab.idx";
  probdr::write_idx_images(img, 4, 2, 2, {0, 1, 2, 3, 4, 5, 6, 7, 9, 3, 1, 0, 2, 8, 6, 4});
  probdr::write_idx_labels(lab, {0, 1, 0, 1});
  CHECK(run("dimred --idx-images " + (kRoot / "nope.idx").string() + " --idx-labels " + lab.string()) == 3);
  CHECK(run("dimred --idx-images " + lab.string() + " --idx-labels " + img.string()) == 3);
  CHECK(slurp(kRoot / "stderr.txt").find("magic") != std::string::npos);
  const std::string out = out_dir("dr_idx");
  CHECK(run("dimred --idx-images " + img.string() + " --idx-labels " + lab.string() + " --q 4 --out " + out) == 0);
}

TEST_CASE("train-lm and compare-lm files") {
  const std::string small =
      " --max-iters 6 --eval-interval 3 --eval-iters 1 --n-embd 16 --block-size 8 --batch-size 2 --corpus-bytes 4000";
  const std::string a = out_dir("lm_a");
  const std::string b = out_dir("lm_b");
  REQUIRE(run("train-lm --mode diffusion --seed 4" + small + " --out " + a) == 0);
  REQUIRE(run("train-lm --mode diffusion --seed 4" + small + " --out " + b) == 0);
  CHECK(slurp(fs::path(a) / "metrics.jsonl") == slurp(fs::path(b) / "metrics.jsonl"));
  CHECK(line_count(fs::path(a) / "metrics.jsonl") == 6);
  CHECK(fs::exists(fs::path(a) / "summary.json"));
  CHECK(fs::exists(fs::path(a) / "config.txt"));

  const std::string c = out_dir("cmp");
  REQUIRE(run("compare-lm --seeds 1,2,3" + small + " --out " + c) == 0);
  std::size_t streams = 0;
  for (const auto& e : fs::directory_iterator(c))
    if (e.path().extension() == ".jsonl") ++streams;
  CHECK(streams == 6);
  std::istringstream csv(slurp(fs::path(c) / "difference.csv"));
  std::string header;
  std::getline(csv, header);
  CHECK(header == "iter,loss_standard_median,loss_diffusion_median,difference");
  CHECK(line_count(fs::path(c) / "difference.csv") == 4);
  const auto report = probdr::lm::report_from_json(slurp(fs::path(c) / "summary.json"));
  CHECK(report.runs.size() == 6);

  // A learning rate this large overflows within a few steps.
  const std::string d = out_dir("lm_nan");
  CHECK(run("train-lm --lr 1e300 --grad-clip 0" + small + " --out " + d) == 1);
  CHECK(fs::exists(fs::path(d) / "diverged.json"));
  CHECK(slurp(kRoot / "stderr.txt").find("diverged") != std::string::npos);
  CHECK(run("train-lm --corpus " + (kRoot / "no_corpus.txt").string() + " --out " + d) == 3);
}
