#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "probdr/block.hpp"
#include "probdr/dimred.hpp"
#include "probdr/error.hpp"
#include "probdr/graph.hpp"
#include "probdr/lm.hpp"
#include "probdr/objective.hpp"
#include "probdr/verify.hpp"

namespace py = pybind11;
using namespace probdr;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array, got " + std::to_string(a.ndim()) + "-D");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  if (m.size()) std::memcpy(m.data(), a.data(), m.size() * sizeof(double));
  return m;
}

Array to_array(const Matrix& m) {
  Array a({m.rows(), m.cols()});
  if (m.size()) std::memcpy(a.mutable_data(), m.data(), m.size() * sizeof(double));
  return a;
}

Matrix mask_by_name(const std::string& name, std::size_t n) {
  if (name == "none") return mask_none(n);
  if (name == "causal") return mask_causal(n);
  if (name == "self_exclusion") return mask_self_exclusion(n);
  throw InvalidParameter("unknown mask '" + name + "' (none, causal, self_exclusion)");
}

py::dict run_dict(const lm::TrainRun& run) {
  py::list records;
  for (const auto& r : run.records) {
    py::dict d;
    d["iter"] = r.iter;
    d["train_loss"] = r.train_loss;
    d["val_loss"] = r.val_loss;
    records.append(d);
  }
  py::dict out;
  out["mode"] = to_string(run.lm.attention_mode);
  out["seed"] = run.lm.seed;
  out["records"] = records;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "probdr native core";

  // Translators run newest first, so the base class goes in first.
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<InvalidParameter>(m, "InvalidParameter", PyExc_ValueError);
  py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);
  py::register_exception<TrainingDiverged>(m, "TrainingDiverged", PyExc_ArithmeticError);

  // Graphs.
  m.def(
      "soft_adjacency",
      [](const Array& z, double kappa, const std::string& mask) {
        const Matrix zm = to_matrix(z);
        return to_array(soft_adjacency(zm, kappa, mask_by_name(mask, zm.rows())));
      },
      py::arg("z"), py::arg("kappa"), py::arg("mask") = "none");
  m.def("soft_laplacian", [](const Array& a) { return to_array(soft_laplacian(to_matrix(a))); }, py::arg("adjacency"));
  m.def(
      "knn_laplacian", [](const Array& y, std::size_t k) { return to_array(knn_graph(to_matrix(y), k).laplacian); },
      py::arg("y"), py::arg("k"));

  // Objective.
  m.def(
      "data_term", [](const Array& x, const Array& l, double beta) { return data_term(to_matrix(x), to_matrix(l), beta); },
      py::arg("x"), py::arg("ltilde"), py::arg("beta"));
  m.def("reg_term", [](const Array& x, double beta) { return reg_term(to_matrix(x), beta); }, py::arg("x"),
        py::arg("beta"));
  m.def(
      "kl_objective",
      [](const Array& x, const Array& l, double beta, double kappa) {
        const Matrix xm = to_matrix(x);
        return kl_objective(xm, to_matrix(l), ObjectiveParams{beta, kappa, xm.cols(), xm.rows()});
      },
      py::arg("x"), py::arg("ltilde"), py::arg("beta"), py::arg("kappa") = 1.0);
  m.def(
      "grad_data", [](const Array& x, const Array& l) { return to_array(grad_data(to_matrix(x), to_matrix(l))); },
      py::arg("x"), py::arg("ltilde"));
  m.def(
      "grad_data_exact",
      [](const Array& x, const Array& l) { return to_array(grad_data_exact(to_matrix(x), to_matrix(l))); },
      py::arg("x"), py::arg("ltilde"));
  m.def(
      "grad_reg_exact", [](const Array& x, double beta) { return to_array(grad_reg_exact(to_matrix(x), beta)); },
      py::arg("x"), py::arg("beta"));
  m.def(
      "closed_form_embedding",
      [](const Array& l, std::size_t q, double beta) { return to_array(closed_form_embedding(to_matrix(l), q, beta)); },
      py::arg("laplacian"), py::arg("q"), py::arg("beta"));
  m.def(
      "constrained_embedding",
      [](const Array& l, std::size_t q) { return to_array(constrained_embedding(to_matrix(l), q)); },
      py::arg("laplacian"), py::arg("q"));

  // Blocks.
  py::class_<BlockWeights>(m, "BlockWeights")
      .def_property_readonly("w_q", [](const BlockWeights& w) { return to_array(w.w_q); })
      .def_property_readonly("w_k", [](const BlockWeights& w) { return to_array(w.w_k); })
      .def_property_readonly("w_v", [](const BlockWeights& w) { return to_array(w.w_v); })
      .def_property_readonly("w_lin", [](const BlockWeights& w) { return to_array(w.w_lin); })
      .def_readonly("ln_gain_1", &BlockWeights::ln_gain_1)
      .def_readonly("ln_gain_2", &BlockWeights::ln_gain_2)
      .def_readonly("eta", &BlockWeights::eta)
      .def_property(
          "mode", [](const BlockWeights& w) { return to_string(w.mode); },
          [](BlockWeights& w, const std::string& s) { w.mode = parse_attention_mode(s); });
  m.def("experiment_init", &experiment_init, py::arg("n"), py::arg("q"), py::arg("kappa"), py::arg("eta"));
  m.def("derivation_init", &derivation_init, py::arg("q"), py::arg("kappa"), py::arg("eta"), py::arg("beta"));
  m.def(
      "block_forward",
      [](const Array& x, const BlockWeights& w, const std::string& mask) {
        const Matrix xm = to_matrix(x);
        return to_array(block_forward(xm, w, mask_by_name(mask, xm.rows())));
      },
      py::arg("x"), py::arg("weights"), py::arg("mask") = "none");
  m.def(
      "gd_reference_step",
      [](const Array& x, const Array& l, double eta, double beta, std::size_t q) {
        return to_array(gd_reference_step(to_matrix(x), to_matrix(l), eta, beta, q));
      },
      py::arg("x"), py::arg("ltilde"), py::arg("eta"), py::arg("beta"), py::arg("q"));
  m.def("project_rows", [](const Array& x) { return to_array(project_rows(to_matrix(x))); }, py::arg("x"));

  // Dimensionality-reduction pipeline.
  m.def(
      "make_blobs",
      [](std::size_t n, std::size_t d, std::size_t classes, std::uint64_t seed) {
        BlobOptions o;
        o.n = n;
        o.d = d;
        o.classes = classes;
        o.seed = seed;
        const LabeledDataset data = make_blobs(o);
        return py::make_tuple(to_array(data.features), data.labels);
      },
      py::arg("n") = 300, py::arg("d") = 50, py::arg("classes") = 3, py::arg("seed") = 0);
  m.def(
      "run_dimred",
      [](const Array& features, const std::vector<int>& labels, std::size_t q, double kappa, double eta,
         std::size_t n_blocks, std::uint64_t seed, const std::string& mode) {
        LabeledDataset data;
        data.features = to_matrix(features);
        data.labels = labels;
        DimredConfig cfg;
        cfg.q = q;
        cfg.kappa = kappa;
        cfg.eta = eta;
        cfg.n_blocks = n_blocks;
        cfg.seed = seed;
        cfg.mode = parse_attention_mode(mode);
        py::list states;
        for (const Matrix& s : run_dimred(data, cfg).states) states.append(to_array(s));
        return states;
      },
      py::arg("features"), py::arg("labels"), py::arg("q") = 128, py::arg("kappa") = 30.0, py::arg("eta") = 0.4,
      py::arg("n_blocks") = 8, py::arg("seed") = 0, py::arg("mode") = "diffusion");
  m.def(
      "cluster_ratio", [](const Array& x, const std::vector<int>& labels) { return cluster_ratio(to_matrix(x), labels); },
      py::arg("x"), py::arg("labels"));

  // Language model.
  m.def(
      "train_lm",
      [](const std::string& corpus, const std::string& mode, std::uint64_t seed, std::size_t max_iters,
         std::size_t block_size, std::size_t n_layer, std::size_t n_head, std::size_t n_embd, std::size_t batch_size,
         double learning_rate, std::size_t eval_interval, std::size_t eval_iters) {
        lm::LmConfig c;
        c.block_size = block_size;
        c.n_layer = n_layer;
        c.n_head = n_head;
        c.n_embd = n_embd;
        c.attention_mode = parse_attention_mode(mode);
        c.seed = seed;
        lm::TrainConfig t;
        t.max_iters = max_iters;
        t.batch_size = batch_size;
        t.learning_rate = learning_rate;
        t.eval_interval = eval_interval;
        t.eval_iters = eval_iters;
        lm::TrainRun run;
        {
          py::gil_scoped_release release;
          run = lm::train(c, t, corpus);
        }
        return run_dict(run);
      },
      py::arg("corpus"), py::arg("mode") = "standard", py::arg("seed") = 0, py::arg("max_iters") = 200,
      py::arg("block_size") = 32, py::arg("n_layer") = 2, py::arg("n_head") = 2, py::arg("n_embd") = 64,
      py::arg("batch_size") = 16, py::arg("learning_rate") = 1e-3, py::arg("eval_interval") = 100,
      py::arg("eval_iters") = 10);
  m.def("synthetic_corpus", &lm::synthetic_corpus, py::arg("min_bytes"), py::arg("seed") = 0);

  // Self-checks.
  m.def(
      "verify",
      [](const std::string& suite) {
        py::list out;
        for (const auto& r : verify::run_suite(suite)) {
          py::dict d;
          d["suite"] = r.suite;
          d["name"] = r.name;
          d["passed"] = r.passed;
          d["residual"] = r.residual;
          d["tolerance"] = r.tolerance;
          out.append(d);
        }
        return out;
      },
      py::arg("suite") = "all");
}
