#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "probdr/error.hpp"
#include "probdr/lm.hpp"
#include "probdr/rng.hpp"

namespace probdr::lm {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

class AdamW {
 public:
  AdamW(const TrainConfig& cfg, std::size_t n) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(LmModel& model, std::vector<double>& grad, double lr) {
    if (cfg_.grad_clip > 0.0) {
      double sq = 0.0;
      for (double g : grad) sq += g * g;
      const double norm = std::sqrt(sq);
      if (norm > cfg_.grad_clip) {
        const double s = cfg_.grad_clip / norm;
        for (double& g : grad) g *= s;
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto p = model.params();
    for (const auto& tensor : model.layout()) {
      const double decay = tensor.decay ? lr * cfg_.weight_decay : 0.0;
      for (std::size_t i = tensor.offset; i < tensor.offset + tensor.size(); ++i) {
        p[i] -= decay * p[i];
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
        p[i] -= lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + cfg_.adam_eps);
      }
    }
  }

 private:
  const TrainConfig& cfg_;
  std::vector<double> m_;
  std::vector<double> v_;
  long t_ = 0;
};

double estimate_loss(const LmModel& model, const BatchSource& source, Split split, std::size_t iter,
                     std::size_t eval_iters) {
  double total = 0.0;
  for (std::size_t e = 0; e < eval_iters; ++e) {
    const Batch b = source.sample_stream(split, "eval", iter, e);
    total += cross_entropy(lm_forward(model, b).logits, b.targets);
  }
  return total / static_cast<double>(eval_iters);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

json lm_to_json(const LmConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"block_size", c.block_size}, {"n_layer", c.n_layer},
          {"n_head", c.n_head},         {"n_embd", c.n_embd},         {"attention_mode", to_string(c.attention_mode)},
          {"dropout", c.dropout},       {"seed", c.seed}};
}

LmConfig lm_from_json(const json& j) {
  LmConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.block_size = j.at("block_size").get<std::size_t>();
  c.n_layer = j.at("n_layer").get<std::size_t>();
  c.n_head = j.at("n_head").get<std::size_t>();
  c.n_embd = j.at("n_embd").get<std::size_t>();
  c.attention_mode = parse_attention_mode(j.at("attention_mode").get<std::string>());
  c.dropout = j.at("dropout").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

json train_to_json(const TrainConfig& c) {
  return {{"max_iters", c.max_iters},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"eval_interval", c.eval_interval},
          {"eval_iters", c.eval_iters},
          {"optimizer", "adamw"},
          {"lr_schedule", to_string(c.lr_schedule)},
          {"grad_clip", c.grad_clip},
          {"split_fraction", c.split_fraction},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"warmup_iters", c.warmup_iters}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig c;
  c.max_iters = j.at("max_iters").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.eval_interval = j.at("eval_interval").get<std::size_t>();
  c.eval_iters = j.at("eval_iters").get<std::size_t>();
  c.lr_schedule = parse_lr_schedule(j.at("lr_schedule").get<std::string>());
  c.grad_clip = j.at("grad_clip").get<double>();
  c.split_fraction = j.at("split_fraction").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.warmup_iters = j.at("warmup_iters").get<std::size_t>();
  return c;
}

json run_json(const TrainRun& r) {
  json records = json::array();
  for (const auto& rec : r.records)
    records.push_back({{"iter", rec.iter}, {"train_loss", rec.train_loss}, {"val_loss", rec.val_loss}});
  return {{"lm", lm_to_json(r.lm)},
          {"train", train_to_json(r.train)},
          {"records", records},
          {"wall_time_seconds", r.wall_time_seconds}};
}

TrainRun run_parse(const json& j) {
  TrainRun r;
  r.lm = lm_from_json(j.at("lm"));
  r.train = train_from_json(j.at("train"));
  for (const auto& rec : j.at("records"))
    r.records.push_back({rec.at("iter").get<std::size_t>(), rec.at("train_loss").get<double>(),
                         rec.at("val_loss").get<double>()});
  r.wall_time_seconds = j.at("wall_time_seconds").get<double>();
  return r;
}

template <typename F>
auto parse_or_format_error(std::string_view what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw FormatError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

double learning_rate_at(const TrainConfig& cfg, std::size_t it) {
  if (cfg.lr_schedule == LrSchedule::constant) return cfg.learning_rate;
  const std::size_t warmup = std::min(cfg.warmup_iters, cfg.max_iters);
  if (it < warmup) return cfg.learning_rate * static_cast<double>(it + 1) / static_cast<double>(warmup);
  const double min_lr = cfg.learning_rate / 10.0;
  const double span = static_cast<double>(std::max<std::size_t>(cfg.max_iters - warmup, 1));
  const double progress = std::min(1.0, static_cast<double>(it - warmup) / span);
  return min_lr + 0.5 * (1.0 + std::cos(std::numbers::pi * progress)) * (cfg.learning_rate - min_lr);
}

TrainRun train(LmModel model, const TrainConfig& train_cfg, const std::vector<int>& tokens, const TrainHooks& hooks) {
  train_cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  const LmConfig& lm_cfg = model.config();
  BatchSource source(tokens, lm_cfg.block_size, train_cfg.batch_size, train_cfg.split_fraction, lm_cfg.seed);
  AdamW opt(train_cfg, model.params().size());

  TrainRun run;
  run.lm = lm_cfg;
  run.train = train_cfg;
  for (std::size_t it = 0;; ++it) {
    if (it % train_cfg.eval_interval == 0 || it == train_cfg.max_iters) {
      LossRecord rec{it, estimate_loss(model, source, Split::train, it, train_cfg.eval_iters),
                     estimate_loss(model, source, Split::val, it, train_cfg.eval_iters)};
      if (!std::isfinite(rec.train_loss) || !std::isfinite(rec.val_loss)) {
        throw TrainingDiverged("training diverged at iteration " + std::to_string(it) + " (evaluation loss " +
                                   std::to_string(rec.val_loss) + ")",
                               static_cast<long>(it), std::isfinite(rec.train_loss) ? rec.val_loss : rec.train_loss);
      }
      run.records.push_back(rec);
    }
    if (it == train_cfg.max_iters) break;

    const Batch batch = source.sample(Split::train, it);
    if (hooks.on_batch) hooks.on_batch(it, batch);
    ForwardOptions fwd{true, derive_seed(lm_cfg.seed, {stream_key("dropout"), it})};
    LossAndGrad lg = lm_backward(model, batch, fwd);
    if (!std::isfinite(lg.loss)) {
      throw TrainingDiverged("training diverged at iteration " + std::to_string(it) + " (loss " +
                                 std::to_string(lg.loss) + ")",
                             static_cast<long>(it), lg.loss);
    }
    opt.step(model, lg.grad, learning_rate_at(train_cfg, it));
  }
  run.wall_time_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return run;
}

TrainRun train(const LmConfig& lm_cfg, const TrainConfig& train_cfg, std::string_view corpus, const TrainHooks& hooks) {
  const CharVocab vocab = CharVocab::build(corpus);
  LmConfig cfg = lm_cfg;
  cfg.vocab_size = vocab.size();
  return train(LmModel(cfg), train_cfg, vocab.encode(corpus), hooks);
}

ComparisonReport compare_modes(const LmConfig& lm_cfg, const TrainConfig& train_cfg, std::string_view corpus,
                               const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw InvalidParameter("compare_modes: need at least one seed");
  const CharVocab vocab = CharVocab::build(corpus);
  const std::vector<int> tokens = vocab.encode(corpus);

  ComparisonReport report;
  for (std::uint64_t seed : seeds) {
    LmConfig cfg = lm_cfg;
    cfg.vocab_size = vocab.size();
    cfg.seed = seed;
    cfg.attention_mode = AttentionMode::standard;
    TrainRun standard = train(LmModel(cfg), train_cfg, tokens);
    cfg.attention_mode = AttentionMode::diffusion;
    TrainRun diffusion = train(LmModel(cfg), train_cfg, tokens);

    SeedDifference diff{seed, {}};
    for (std::size_t i = 0; i < standard.records.size(); ++i) {
      const auto& s = standard.records[i];
      const auto& d = diffusion.records[i];
      diff.points.push_back({s.iter, s.train_loss - d.train_loss, s.val_loss - d.val_loss});
    }
    report.differences.push_back(std::move(diff));
    report.runs.push_back({seed, AttentionMode::standard, std::move(standard)});
    report.runs.push_back({seed, AttentionMode::diffusion, std::move(diffusion)});
  }

  const std::size_t n_points = report.runs.front().run.records.size();
  for (std::size_t i = 0; i < n_points; ++i) {
    std::vector<double> vs, vd, dv, dt;
    for (const auto& entry : report.runs)
      (entry.mode == AttentionMode::standard ? vs : vd).push_back(entry.run.records[i].val_loss);
    for (const auto& d : report.differences) {
      dv.push_back(d.points[i].val_difference);
      dt.push_back(d.points[i].train_difference);
    }
    report.median.push_back({report.runs.front().run.records[i].iter, median(vs), median(vd), median(dv), median(dt)});
  }
  report.median_final_val_difference = report.median.back().val_difference;
  return report;
}

std::string run_to_json(const TrainRun& run) { return run_json(run).dump(2); }

TrainRun run_from_json(std::string_view text) {
  return parse_or_format_error("train run", [&] { return run_parse(json::parse(text)); });
}

std::string report_to_json(const ComparisonReport& report) {
  json runs = json::array();
  for (const auto& e : report.runs) runs.push_back({{"seed", e.seed}, {"mode", to_string(e.mode)}, {"run", run_json(e.run)}});
  json diffs = json::array();
  for (const auto& d : report.differences) {
    json pts = json::array();
    for (const auto& p : d.points)
      pts.push_back({{"iter", p.iter}, {"train_difference", p.train_difference}, {"val_difference", p.val_difference}});
    diffs.push_back({{"seed", d.seed}, {"points", pts}});
  }
  json med = json::array();
  for (const auto& m : report.median)
    med.push_back({{"iter", m.iter},
                   {"val_standard", m.val_standard},
                   {"val_diffusion", m.val_diffusion},
                   {"val_difference", m.val_difference},
                   {"train_difference", m.train_difference}});
  json doc = {{"sign_convention", "standard - diffusion; positive means diffusion has the lower loss"},
              {"runs", runs},
              {"differences", diffs},
              {"median", med},
              {"median_final_val_difference", report.median_final_val_difference}};
  return doc.dump(2);
}

ComparisonReport report_from_json(std::string_view text) {
  return parse_or_format_error("comparison report", [&] {
    const json doc = json::parse(text);
    ComparisonReport r;
    for (const auto& e : doc.at("runs"))
      r.runs.push_back({e.at("seed").get<std::uint64_t>(), parse_attention_mode(e.at("mode").get<std::string>()),
                        run_parse(e.at("run"))});
    for (const auto& d : doc.at("differences")) {
      SeedDifference sd{d.at("seed").get<std::uint64_t>(), {}};
      for (const auto& p : d.at("points"))
        sd.points.push_back({p.at("iter").get<std::size_t>(), p.at("train_difference").get<double>(),
                             p.at("val_difference").get<double>()});
      r.differences.push_back(std::move(sd));
    }
    for (const auto& m : doc.at("median"))
      r.median.push_back({m.at("iter").get<std::size_t>(), m.at("val_standard").get<double>(),
                          m.at("val_diffusion").get<double>(), m.at("val_difference").get<double>(),
                          m.at("train_difference").get<double>()});
    r.median_final_val_difference = doc.at("median_final_val_difference").get<double>();
    return r;
  });
}

std::vector<MetricLine> metric_lines(const TrainRun& run) {
  std::vector<MetricLine> out;
  const std::string mode = to_string(run.lm.attention_mode);
  for (const auto& rec : run.records) {
    out.push_back({rec.iter, "train", rec.train_loss, mode, run.lm.seed});
    out.push_back({rec.iter, "val", rec.val_loss, mode, run.lm.seed});
  }
  return out;
}

void write_metrics_jsonl(const std::filesystem::path& path, const TrainRun& run) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  for (const auto& m : metric_lines(run)) {
    ordered_json j;
    j["iter"] = m.iter;
    j["split"] = m.split;
    j["loss"] = m.loss;
    j["mode"] = m.mode;
    j["seed"] = m.seed;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<MetricLine> read_metrics_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<MetricLine> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(parse_or_format_error("metrics line", [&] {
      const json j = json::parse(line);
      return MetricLine{j.at("iter").get<std::size_t>(), j.at("split").get<std::string>(), j.at("loss").get<double>(),
                        j.at("mode").get<std::string>(), j.at("seed").get<std::uint64_t>()};
    }));
  }
  return out;
}

void write_difference_csv(const std::filesystem::path& path, const ComparisonReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "iter,loss_standard_median,loss_diffusion_median,difference\n";
  char buf[128];
  for (const auto& m : report.median) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", m.iter, m.val_standard, m.val_diffusion,
                  m.val_difference);
    out << buf;
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace probdr::lm
