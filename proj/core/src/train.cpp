#include "slqa/train.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "slqa/error.hpp"
#include "slqa/metrics.hpp"
#include "slqa/optim.hpp"

namespace slqa {

using nlohmann::json;

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("lr must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ConfigError("dropout must be in [0,1)");
  if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
  if (eval_interval < 1) throw ConfigError("eval_interval must be >= 1");
  if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0)
    throw ConfigError("betas must be in (0,1)");
}

namespace {

TrainConfig train_config_from_jobj(const json& j) {
  TrainConfig c;
  try {
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.dropout = j.value("dropout", c.dropout);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.eval_interval = j.value("eval_interval", c.eval_interval);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.early_stop_em = j.value("early_stop_em", c.early_stop_em);
    c.train_path = j.value("train_path", c.train_path);
    c.dev_path = j.value("dev_path", c.dev_path);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad train config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("train config parse failed: ") + e.what());
  }
  return train_config_from_jobj(j);
}

std::string train_config_to_json(const TrainConfig& c) {
  json j = {{"lr", c.lr},
            {"batch_size", c.batch_size},
            {"dropout", c.dropout},
            {"max_steps", c.max_steps},
            {"eval_interval", c.eval_interval},
            {"seed", c.seed},
            {"checkpoint_dir", c.checkpoint_dir},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"early_stop_em", c.early_stop_em},
            {"train_path", c.train_path},
            {"dev_path", c.dev_path}};
  return j.dump();
}

RunConfig run_config_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  json j;
  try {
    j = json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config parse failed (") + path +
                     "): " + e.what());
  }
  RunConfig rc;
  if (j.contains("model"))
    rc.model = model_config_from_json(j["model"].dump());
  if (j.contains("train")) rc.train = train_config_from_jobj(j["train"]);
  // The dropout rate is part of the training recipe; it drives the model.
  rc.model.dropout = rc.train.dropout;
  return rc;
}

namespace {

std::string span_text(const TokenizedExample& ex, int s, int e) {
  const auto& toks = ex.passage_tokens;
  return ex.source.passage.substr(toks[s].begin,
                                  toks[e].end - toks[s].begin);
}

std::vector<std::string> gold_texts(const TokenizedExample& ex) {
  std::vector<std::string> out;
  for (const auto& a : ex.source.answers) out.push_back(a.text);
  return out;
}

EvalReport score_rows(std::vector<EvalRow> rows, std::vector<int> ems) {
  EvalReport report;
  double em_total = 0.0, f1_total = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    em_total += ems[i];
    f1_total += rows[i].best_f1;
  }
  const double n = rows.empty() ? 1.0 : static_cast<double>(rows.size());
  report.em = 100.0 * em_total / n;
  report.f1 = 100.0 * f1_total / n;
  std::sort(rows.begin(), rows.end(),
            [](const EvalRow& a, const EvalRow& b) { return a.id < b.id; });
  report.rows = std::move(rows);
  return report;
}

}  // namespace

EvalReport evaluate(const Model& model,
                    const std::vector<TokenizedExample>& examples) {
  std::vector<EvalRow> rows;
  std::vector<int> ems;
  Rng rng(0);  // evaluation runs with dropout off; rng is never consumed
  for (const auto& ex : examples) {
    Tape tape;
    tape.set_recording(false);
    const Forward f = model.forward(tape, ex, /*training=*/false, rng);
    const ForwardOutput o = snapshot(f);
    SpanPrediction span =
        decode_span(o.p_start, o.p_end, model.config().w_max);
    span.text = span_text(ex, span.start, span.end);
    const auto golds = gold_texts(ex);
    rows.push_back({ex.source.id, span.text, metric_f1(span.text, golds)});
    ems.push_back(metric_em(span.text, golds));
  }
  return score_rows(std::move(rows), std::move(ems));
}

EvalReport evaluate_ensemble(const std::vector<const Model*>& members,
                             const std::vector<TokenizedExample>& examples) {
  if (members.empty()) throw ContractError("evaluate_ensemble: no members");
  const std::string base = model_config_to_json(members.front()->config());
  for (const auto* m : members)
    if (model_config_to_json(m->config()) != base)
      throw ConfigError("ensemble members have differing configurations");
  std::vector<EvalRow> rows;
  std::vector<int> ems;
  Rng rng(0);
  for (const auto& ex : examples) {
    std::vector<ForwardOutput> outs;
    outs.reserve(members.size());
    for (const auto* m : members) {
      Tape tape;
      tape.set_recording(false);
      outs.push_back(snapshot(m->forward(tape, ex, false, rng)));
    }
    SpanPrediction span =
        ensemble_decode(outs, members.front()->config().w_max);
    span.text = span_text(ex, span.start, span.end);
    const auto golds = gold_texts(ex);
    rows.push_back({ex.source.id, span.text, metric_f1(span.text, golds)});
    ems.push_back(metric_em(span.text, golds));
  }
  return score_rows(std::move(rows), std::move(ems));
}

TrainResult train(const TrainConfig& tc, const ModelConfig& mc,
                  const std::vector<TokenizedExample>& train_set,
                  const std::vector<TokenizedExample>& dev_set,
                  const std::string& out_dir) {
  tc.validate();
  if (train_set.empty()) throw DataError("train: empty training corpus");
  if (dev_set.empty()) throw DataError("train: empty dev corpus");
  std::filesystem::create_directories(out_dir);

  ModelConfig model_cfg = mc;
  model_cfg.dropout = tc.dropout;

  const Vocabulary vocab = Vocabulary::build(train_set);
  const CharVocab char_vocab = CharVocab::build(train_set);
  std::map<std::string, std::vector<double>> pretrained;
  const std::map<std::string, std::vector<double>>* pretrained_ptr = nullptr;
  if (!model_cfg.embedding_file.empty()) {
    pretrained = load_word_vectors(model_cfg.embedding_file);
    pretrained_ptr = &pretrained;
  }
  std::shared_ptr<const PrecomputedVectors> pre;
  if (model_cfg.char_channel == CharChannelKind::kPrecomputed)
    pre = std::make_shared<PrecomputedVectors>(
        PrecomputedVectors::load(model_cfg.char_vector_file));

  Model model(model_cfg, vocab, char_vocab, tc.seed, pretrained_ptr, pre);
  Adamax opt(tc.lr, tc.beta1, tc.beta2);
  Rng shuffle_rng(tc.seed ^ hash_name("shuffle"));
  Rng dropout_rng(tc.seed ^ hash_name("dropout"));

  std::vector<int> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::size_t pos = order.size();  // forces a shuffle before the first batch

  TrainResult result;
  result.best_checkpoint = out_dir + "/best.ckpt";
  result.last_checkpoint = out_dir + "/last.ckpt";

  for (long step = 1; step <= tc.max_steps; ++step) {
    if (pos >= order.size()) {
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[shuffle_rng.below(i)]);
      pos = 0;
    }
    const std::size_t hi =
        std::min(order.size(), pos + static_cast<std::size_t>(tc.batch_size));
    std::vector<Forward> outputs;
    std::vector<std::pair<int, int>> golds;
    std::vector<std::string> batch_ids;
    Tape tape;
    for (std::size_t k = pos; k < hi; ++k) {
      const auto& ex = train_set[order[k]];
      outputs.push_back(model.forward(tape, ex, /*training=*/true, dropout_rng));
      golds.push_back({ex.y_start, ex.y_end});
      batch_ids.push_back(ex.source.id);
    }
    pos = hi;
    const Tensor loss = model.loss(tape, outputs, golds);
    const double loss_val = loss.at(0);
    if (!std::isfinite(loss_val)) {
      std::string ids;
      for (const auto& id : batch_ids) ids += " " + id;
      throw NumericError("train: non-finite loss at step " +
                         std::to_string(step) + "; batch:" + ids);
    }
    model.zero_grads();
    tape.backward(loss);
    opt.step(model.registry());
    result.steps_run = step;

    if (step % tc.eval_interval == 0 || step == tc.max_steps) {
      const EvalReport report = evaluate(model, dev_set);
      result.curve.push_back({step, loss_val, report.em, report.f1});
      std::fprintf(stderr, "step %ld  loss %.4f  dev EM %.2f  F1 %.2f\n", step,
                   loss_val, report.em, report.f1);
      if (report.f1 > result.best_f1) {
        result.best_f1 = report.f1;
        result.best_step = step;
        save_checkpoint(result.best_checkpoint, model);
      }
      if (tc.early_stop_em >= 0.0 && report.em >= tc.early_stop_em) break;
    }
  }

  save_checkpoint(result.last_checkpoint, model);
  if (result.best_f1 < 0.0) {
    // No eval ever ran (max_steps < eval_interval); keep the final state.
    save_checkpoint(result.best_checkpoint, model);
  }
  write_curve_csv(out_dir + "/curve.csv", result.curve);
  return result;
}

std::vector<AblationRow> ablate(const TrainConfig& tc, const ModelConfig& base,
                                const std::vector<std::string>& axes,
                                const std::vector<TokenizedExample>& train_set,
                                const std::vector<TokenizedExample>& dev_set,
                                const std::string& out_dir) {
  struct Variant {
    std::string name;
    ModelConfig cfg;
  };
  std::vector<Variant> variants;
  const std::vector<FusionKernel> kernels = {
      FusionKernel::kConcat, FusionKernel::kFpu, FusionKernel::kSfu,
      FusionKernel::kVfu, FusionKernel::kMfu};
  const std::vector<ScoreFn> scores = {ScoreFn::kDot, ScoreFn::kLinear,
                                       ScoreFn::kBilinearRelu,
                                       ScoreFn::kTrilinear};
  for (const auto& axis : axes) {
    if (axis == "fusion") {
      for (const auto k : kernels) {
        ModelConfig c = base;
        c.fusion = k;
        variants.push_back({"fusion=" + fusion_kernel_name(k), c});
      }
    } else if (axis == "score") {
      for (const auto s : scores) {
        ModelConfig c = base;
        c.score = s;
        variants.push_back({"score=" + score_fn_name(s), c});
      }
    } else if (axis == "depth") {
      for (int depth = 1; depth <= 3; ++depth) {
        ModelConfig c = base;
        c.depth = depth;
        variants.push_back({"depth=" + std::to_string(depth), c});
      }
    } else if (axis == "manual_features") {
      ModelConfig c = base;
      c.manual_features = false;
      variants.push_back({"no_manual_features", c});
    } else if (axis == "char_channel") {
      ModelConfig c = base;
      c.char_channel = CharChannelKind::kNone;
      variants.push_back({"no_char_channel", c});
    } else if (axis == "self_match") {
      ModelConfig c = base;
      c.self_match = false;
      variants.push_back({"no_self_match", c});
    } else if (axis == "bilinear_match") {
      ModelConfig c = base;
      c.bilinear_match = false;
      variants.push_back({"no_bilinear_match", c});
    } else if (axis == "grid") {
      for (const auto k : kernels)
        for (const auto s : scores) {
          ModelConfig c = base;
          c.fusion = k;
          c.score = s;
          variants.push_back({"fusion=" + fusion_kernel_name(k) +
                                  ",score=" + score_fn_name(s),
                              c});
        }
    } else {
      throw ConfigError("ablate: unknown axis '" + axis + "'");
    }
  }

  std::vector<AblationRow> rows;
  for (const auto& v : variants) {
    std::string dir = out_dir + "/" + v.name;
    std::replace(dir.begin(), dir.end(), ',', '_');
    std::replace(dir.begin(), dir.end(), '=', '-');
    std::fprintf(stderr, "[ablate] training %s\n", v.name.c_str());
    // Identical seed and budget for every variant.
    const TrainResult r = train(tc, v.cfg, train_set, dev_set, dir);
    const Model best = load_checkpoint(r.best_checkpoint);
    const EvalReport report = evaluate(best, dev_set);
    rows.push_back({v.name, report.em, report.f1});
  }
  return rows;
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

}  // namespace

void write_curve_csv(const std::string& path,
                     const std::vector<CurvePoint>& curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "step,loss,em,f1\n";
  char buf[128];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof(buf), "%ld,%.6f,%.4f,%.4f\n", p.step, p.loss,
                  p.em, p.f1);
    out << buf;
  }
}

void write_ablation_csv(const std::string& path,
                        const std::vector<AblationRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  // Reference dev-set points for the corresponding full-scale rows.
  out << "# reference points: vfu 80.0/87.0, sfu 79.5/86.5, concat 78.8/85.8\n";
  out << "variant,em,f1\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), ",%.4f,%.4f\n", r.em, r.f1);
    out << csv_escape(r.variant) << buf;
  }
}

void write_predictions_json(const std::string& path, const EvalReport& report) {
  json j = json::object();
  for (const auto& row : report.rows) j[row.id] = row.prediction;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(1) << "\n";
}

void write_report_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << "id,prediction,best_gold_f1\n";
  char buf[64];
  for (const auto& row : report.rows) {
    std::snprintf(buf, sizeof(buf), ",%.6f\n", row.best_f1);
    out << csv_escape(row.id) << "," << csv_escape(row.prediction) << buf;
  }
}

}  // namespace slqa
