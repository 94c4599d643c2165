#include "slqa/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "slqa/error.hpp"

namespace slqa {

using nlohmann::json;

CharChannelKind char_channel_from_name(const std::string& name) {
  if (name == "none") return CharChannelKind::kNone;
  if (name == "trained") return CharChannelKind::kTrained;
  if (name == "precomputed") return CharChannelKind::kPrecomputed;
  throw ConfigError("unknown char channel: " + name);
}

std::string char_channel_name(CharChannelKind k) {
  switch (k) {
    case CharChannelKind::kNone: return "none";
    case CharChannelKind::kTrained: return "trained";
    case CharChannelKind::kPrecomputed: return "precomputed";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (d_w < 1 || h < 1) throw ConfigError("model dims must be positive");
  if (depth < 1 || depth > 3)
    throw ConfigError("attention depth must be 1, 2 or 3");
  if (w_max < 0) throw ConfigError("w_max must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ConfigError("dropout must be in [0,1)");
  if (char_channel != CharChannelKind::kNone && d_c < 1)
    throw ConfigError("d_c must be positive when the char channel is on");
  if (char_channel == CharChannelKind::kTrained) {
    if (d_c % 2 != 0)
      throw ConfigError("trained char channel needs even d_c (two scans)");
    if (char_emb_dim < 1) throw ConfigError("char_emb_dim must be positive");
  }
  if (char_channel == CharChannelKind::kPrecomputed && char_vector_file.empty())
    throw ConfigError("precomputed char channel needs char_vector_file");
}

namespace {

struct ParamBuilder {
  uint64_t seed;
  std::vector<std::pair<std::string, Tensor>>* registry;

  Tensor xavier(const std::string& name, int rows, int cols, int fan_in,
                int fan_out) {
    Rng rng(seed ^ hash_name(name));
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    std::vector<double> vals(static_cast<std::size_t>(rows) * cols);
    for (auto& v : vals) v = rng.uniform(-a, a);
    Tensor t = Tensor::from({rows, cols}, std::move(vals), true);
    registry->push_back({name, t});
    return t;
  }

  Tensor mat(const std::string& name, int rows, int cols) {
    return xavier(name, rows, cols, rows, cols);
  }

  Tensor zeros(const std::string& name, int rows, int cols) {
    Tensor t = Tensor::zeros({rows, cols}, true);
    registry->push_back({name, t});
    return t;
  }

  Tensor uniform(const std::string& name, int rows, int cols, double a) {
    Rng rng(seed ^ hash_name(name));
    std::vector<double> vals(static_cast<std::size_t>(rows) * cols);
    for (auto& v : vals) v = rng.uniform(-a, a);
    Tensor t = Tensor::from({rows, cols}, std::move(vals), true);
    registry->push_back({name, t});
    return t;
  }

  LstmParams lstm(const std::string& prefix, int input, int hidden) {
    LstmParams p;
    p.w_x = xavier(prefix + ".w_x", 4 * hidden, input, input, hidden);
    p.w_h = xavier(prefix + ".w_h", 4 * hidden, hidden, hidden, hidden);
    // Forget-gate bias starts at 1 so early cells carry state.
    Tensor b = Tensor::zeros({1, 4 * hidden}, true);
    for (int k = hidden; k < 2 * hidden; ++k) b.raw()[k] = 1.0;
    registry->push_back({prefix + ".b", b});
    p.bias = b;
    return p;
  }

  FusionSpec fusion(const std::string& prefix, FusionKernel kernel, int d) {
    FusionSpec f;
    f.kernel = kernel;
    f.w_f = xavier(prefix + ".w_f", 4 * d, d, 4 * d, d);
    f.b_f = zeros(prefix + ".b_f", 1, d);
    f.g_scalar = zeros(prefix + ".g", 1, 1);
    f.w_g = xavier(prefix + ".w_g", 4 * d, 1, 4 * d, 1);
    f.b_g = zeros(prefix + ".b_g", 1, 1);
    f.w_gm = xavier(prefix + ".w_gm", 4 * d, d, 4 * d, d);
    f.b_gm = zeros(prefix + ".b_gm", 1, d);
    return f;
  }
};

}  // namespace

Model::Model(ModelConfig config, Vocabulary vocab, CharVocab char_vocab,
             uint64_t seed,
             const std::map<std::string, std::vector<double>>* pretrained,
             std::shared_ptr<const PrecomputedVectors> precomputed)
    : config_(std::move(config)),
      vocab_(std::move(vocab)),
      char_vocab_(std::move(char_vocab)),
      precomputed_(std::move(precomputed)) {
  config_.validate();
  ParamBuilder b{seed, &params_.registry};

  {
    Rng rng(seed ^ hash_name("embed.table"));
    params_.embed = build_embedding_table(
        vocab_, config_.d_w, config_.trainable_embeddings, rng, pretrained);
    params_.registry.push_back({"embed.table", params_.embed.matrix});
  }

  if (config_.char_channel == CharChannelKind::kTrained) {
    const int hc = config_.d_c / 2;
    Tensor char_table =
        b.uniform("char.table", char_vocab_.size(), config_.char_emb_dim, 0.1);
    // OOV char row stays zero, like the word table.
    for (int j = 0; j < config_.char_emb_dim; ++j) char_table.raw()[j] = 0.0;
    params_.chars = CharChannel::trained(
        char_vocab_, char_table, b.lstm("char.lstm.fwd", config_.char_emb_dim, hc),
        b.lstm("char.lstm.bwd", config_.char_emb_dim, hc));
  } else if (config_.char_channel == CharChannelKind::kPrecomputed) {
    if (!precomputed_)
      throw ConfigError("precomputed char channel selected but no vectors");
    if (precomputed_->dim() != config_.d_c)
      throw ConfigError("precomputed char vectors have width " +
                        std::to_string(precomputed_->dim()) +
                        " but d_c = " + std::to_string(config_.d_c));
    params_.chars = CharChannel::precomputed(precomputed_.get());
  } else {
    params_.chars = CharChannel::none();
  }

  const int enc_in = config_.d_w + (params_.chars.enabled() ? config_.d_c : 0);
  params_.enc_fwd = b.lstm("enc.fwd", enc_in, config_.h);
  params_.enc_bwd = b.lstm("enc.bwd", enc_in, config_.h);

  const int d = config_.encoded_dim();
  params_.score.kind = config_.score;
  params_.score.w_lin = b.mat("score.w_lin", d, d);
  params_.score.v_p = b.mat("score.v_p", d, 1);
  params_.score.v_q = b.mat("score.v_q", d, 1);
  params_.score.w_tri_p = b.mat("score.w_tri_p", d, 1);
  params_.score.w_tri_q = b.mat("score.w_tri_q", d, 1);
  params_.score.w_tri_pq = b.mat("score.w_tri_pq", d, 1);

  params_.fuse_p = b.fusion("fuse.p", config_.fusion, d);
  params_.fuse_q = b.fusion("fuse.q", config_.fusion, d);

  const int d1_in = d + (config_.manual_features ? 3 : 0);
  params_.d1_fwd = b.lstm("d1.fwd", d1_in, config_.h);
  params_.d1_bwd = b.lstm("d1.bwd", d1_in, config_.h);

  const int dd = 2 * config_.h;
  params_.w_l = b.mat("self.w_l", dd, dd);
  params_.fuse_self = b.fusion("fuse.self", config_.fusion, dd);
  params_.d2_fwd = b.lstm("d2.fwd", dd, config_.h);
  params_.d2_bwd = b.lstm("d2.bwd", dd, config_.h);
  params_.q2_fwd = b.lstm("q2.fwd", d, config_.h);
  params_.q2_bwd = b.lstm("q2.bwd", d, config_.h);

  params_.w_q = b.mat("summary.w_q", dd, 1);
  params_.w_s = b.mat("match.w_s", dd, dd);
  params_.w_e = b.mat("match.w_e", dd, dd);

  params_.head_p_ws = b.mat("head.p.w_s", d, 1);
  params_.head_p_bs = b.zeros("head.p.b_s", 1, 1);
  params_.head_p_we = b.mat("head.p.w_e", d, 1);
  params_.head_p_be = b.zeros("head.p.b_e", 1, 1);
  params_.head_d_ws = b.mat("head.d.w_s", dd, 1);
  params_.head_d_bs = b.zeros("head.d.b_s", 1, 1);
  params_.head_d_we = b.mat("head.d.w_e", dd, 1);
  params_.head_d_be = b.zeros("head.d.b_e", 1, 1);
}

Tensor Model::param(const std::string& name) const {
  for (const auto& [n, t] : params_.registry)
    if (n == name) return t;
  throw ContractError("no parameter named " + name);
}

void Model::zero_grads() {
  for (auto& [n, t] : params_.registry) {
    Tensor p = t;
    p.zero_grad();
  }
}

namespace {

template <class Fn>
auto stage(const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw Error("forward[" + std::string(name) + "]: " + e.what());
  }
}

}  // namespace

Tensor Model::predict_axis(Tape& tape, const Tensor& rep, const Tensor& w,
                           const Tensor& bias) const {
  const Tensor scores =
      transpose(tape, add_bias(tape, matmul(tape, rep, w), bias));
  return softmax(tape, scores, 1);
}

Forward Model::forward(Tape& tape, const TokenizedExample& ex, bool training,
                       Rng& rng) const {
  Forward out;
  out.n = static_cast<int>(ex.passage_tokens.size());
  out.m = static_cast<int>(ex.question_tokens.size());

  std::vector<int> p_ids, q_ids;
  std::vector<std::string> p_surf, q_surf;
  for (const auto& t : ex.passage_tokens) {
    p_ids.push_back(vocab_.id(t.text));
    p_surf.push_back(t.text);
  }
  for (const auto& t : ex.question_tokens) {
    q_ids.push_back(vocab_.id(t.text));
    q_surf.push_back(t.text);
  }

  const Encoder enc{params_.embed, params_.chars, params_.enc_fwd,
                    params_.enc_bwd, config_.dropout};
  const Tensor u_p = stage("encode", [&] {
    return enc.encode(tape, p_ids, p_surf, {ex.source.id, 'P'}, training, rng);
  });
  const Tensor u_q = stage("encode", [&] {
    return enc.encode(tape, q_ids, q_surf, {ex.source.id, 'Q'}, training, rng);
  });

  Tensor p1;
  Tensor p_tilde;
  stage("coattention", [&] {
    out.scores = coattention_scores(tape, u_p, u_q, params_.score);
    auto p2q = p2q_attend(tape, out.scores, u_q);
    out.alpha = p2q.weights;
    auto q2p = q2p_attend(tape, out.scores, u_p);
    out.beta = q2p.weights;
    p_tilde = q2p.attended;
    p1 = fuse(tape, u_p, p2q.attended, params_.fuse_p);
    return 0;
  });

  if (config_.depth == 1) {
    stage("output", [&] {
      out.p_start =
          predict_axis(tape, p1, params_.head_p_ws, params_.head_p_bs);
      out.p_end = predict_axis(tape, p1, params_.head_p_we, params_.head_p_be);
      return 0;
    });
    return out;
  }

  const Tensor d = stage("match-lstm", [&] {
    Tensor d_in = p1;
    if (config_.manual_features) {
      std::vector<double> fv;
      fv.reserve(static_cast<std::size_t>(out.n) * 3);
      for (const auto& f : ex.features) fv.insert(fv.end(), f.begin(), f.end());
      if (static_cast<int>(ex.features.size()) != out.n)
        throw DataError("example " + ex.source.id +
                        ": feature rows != passage length");
      const Tensor feats = Tensor::from({out.n, 3}, std::move(fv));
      d_in = concat(tape, {p1, feats});
    }
    d_in = dropout(tape, d_in, config_.dropout, training, rng);
    return bilstm(tape, d_in, params_.d1_fwd, params_.d1_bwd);
  });

  Tensor d1 = d;
  if (config_.self_match) {
    stage("self-attention", [&] {
      auto aligned = self_align(tape, d, params_.w_l);
      out.l = aligned.weights;
      d1 = fuse(tape, d, aligned.aligned, params_.fuse_self);
      return 0;
    });
  }

  const Tensor d2 = stage("model-lstm", [&] {
    return bilstm(tape, dropout(tape, d1, config_.dropout, training, rng),
                  params_.d2_fwd, params_.d2_bwd);
  });

  const bool use_match = config_.depth >= 3 && config_.bilinear_match;
  if (!use_match) {
    stage("output", [&] {
      out.p_start =
          predict_axis(tape, d2, params_.head_d_ws, params_.head_d_bs);
      out.p_end = predict_axis(tape, d2, params_.head_d_we, params_.head_d_be);
      return 0;
    });
    return out;
  }

  stage("question-summary", [&] {
    const Tensor q1 = fuse(tape, u_q, p_tilde, params_.fuse_q);
    const Tensor q2 =
        bilstm(tape, dropout(tape, q1, config_.dropout, training, rng),
               params_.q2_fwd, params_.q2_bwd);
    auto summary = question_summary(tape, q2, params_.w_q);
    out.gamma = summary.weights;
    out.q = summary.summary;
    return 0;
  });

  stage("output", [&] {
    const Tensor s_scores =
        matmul(tape, matmul(tape, out.q, params_.w_s), transpose(tape, d2));
    const Tensor e_scores =
        matmul(tape, matmul(tape, out.q, params_.w_e), transpose(tape, d2));
    out.p_start = softmax(tape, s_scores, 1);
    out.p_end = softmax(tape, e_scores, 1);
    return 0;
  });
  return out;
}

Tensor Model::loss(Tape& tape, const std::vector<Forward>& outputs,
                   const std::vector<std::pair<int, int>>& golds) const {
  if (outputs.empty()) throw ContractError("loss: empty batch");
  if (outputs.size() != golds.size())
    throw ContractError("loss: outputs/golds size mismatch");
  std::vector<Tensor> terms;
  terms.reserve(outputs.size());
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const auto [ys, ye] = golds[i];
    const int n = outputs[i].n;
    if (ys < 0 || ye < ys || ye >= n)
      throw DataError("loss: gold span (" + std::to_string(ys) + "," +
                      std::to_string(ye) + ") outside passage of length " +
                      std::to_string(n));
    const Tensor ls = log_floor(tape, pick(tape, outputs[i].p_start, 0, ys));
    const Tensor le = log_floor(tape, pick(tape, outputs[i].p_end, 0, ye));
    terms.push_back(add(tape, ls, le));
  }
  return scale_const(tape, add_n(tape, terms),
                     -1.0 / static_cast<double>(outputs.size()));
}

ForwardOutput snapshot(const Forward& f, int padded_to) {
  ForwardOutput out;
  out.n = f.n;
  out.m = f.m;
  auto copy = [](const Tensor& t) {
    return t.defined()
               ? std::vector<double>(t.values().begin(), t.values().end())
               : std::vector<double>();
  };
  out.p_start = copy(f.p_start);
  out.p_end = copy(f.p_end);
  if (padded_to > f.n) {
    out.p_start.resize(padded_to, 0.0);
    out.p_end.resize(padded_to, 0.0);
  }
  out.scores = copy(f.scores);
  out.alpha = copy(f.alpha);
  out.beta = copy(f.beta);
  out.l = copy(f.l);
  out.gamma = copy(f.gamma);
  out.q = copy(f.q);
  return out;
}

SpanPrediction decode_span(std::span<const double> p_start,
                           std::span<const double> p_end, int w_max) {
  const int n = static_cast<int>(p_start.size());
  if (n == 0) throw DegenerateInputError("decode_span: empty distribution");
  if (static_cast<int>(p_end.size()) != n)
    throw DimensionError("decode_span: start/end lengths differ");
  if (w_max < 0) throw ContractError("decode_span: w_max must be >= 0");
  // Monotone deque over start probabilities in the trailing window
  // [e - w_max, e]; the front is the leftmost maximum.
  std::deque<int> window;
  double best = -1.0;
  int bs = 0, be = 0;
  for (int e = 0; e < n; ++e) {
    while (!window.empty() && p_start[window.back()] < p_start[e])
      window.pop_back();
    window.push_back(e);
    while (window.front() < e - w_max) window.pop_front();
    const int s = window.front();
    const double score = p_start[s] * p_end[e];
    if (score > best || (score == best && s < bs)) {
      best = score;
      bs = s;
      be = e;
    }
  }
  return {bs, be, best, ""};
}

SpanPrediction ensemble_decode(const std::vector<ForwardOutput>& outputs,
                               int w_max) {
  if (outputs.empty())
    throw ContractError("ensemble_decode: empty model list");
  const int n = outputs.front().n;
  for (const auto& o : outputs)
    if (o.n != n)
      throw DimensionError("ensemble_decode: members disagree on length");
  if (n == 0) throw DegenerateInputError("ensemble_decode: empty distribution");
  if (w_max < 0) throw ContractError("ensemble_decode: w_max must be >= 0");
  // Desk-scale brute force over the n * (w_max+1) window pairs.
  double best = -1.0;
  int bs = 0, be = 0;
  for (int s = 0; s < n; ++s) {
    const int e_hi = std::min(n - 1, s + w_max);
    for (int e = s; e <= e_hi; ++e) {
      double score = 0.0;
      for (const auto& o : outputs) score += o.p_start[s] * o.p_end[e];
      if (score > best || (score == best && (s < bs || (s == bs && e < be)))) {
        best = score;
        bs = s;
        be = e;
      }
    }
  }
  return {bs, be, best, ""};
}

// ---------------------------------------------------------------------------
// Config and checkpoint serialization.

std::string model_config_to_json(const ModelConfig& c) {
  json j = {{"d_w", c.d_w},
            {"d_c", c.d_c},
            {"char_emb_dim", c.char_emb_dim},
            {"h", c.h},
            {"fusion", fusion_kernel_name(c.fusion)},
            {"score", score_fn_name(c.score)},
            {"depth", c.depth},
            {"manual_features", c.manual_features},
            {"self_match", c.self_match},
            {"bilinear_match", c.bilinear_match},
            {"char_channel", char_channel_name(c.char_channel)},
            {"dropout", c.dropout},
            {"w_max", c.w_max},
            {"trainable_embeddings", c.trainable_embeddings},
            {"embedding_file", c.embedding_file},
            {"char_vector_file", c.char_vector_file}};
  return j.dump();
}

namespace {

ModelConfig model_config_from_jobj(const json& j) {
  ModelConfig c;
  try {
    c.d_w = j.value("d_w", c.d_w);
    c.d_c = j.value("d_c", c.d_c);
    c.char_emb_dim = j.value("char_emb_dim", c.char_emb_dim);
    c.h = j.value("h", c.h);
    if (j.contains("fusion"))
      c.fusion = fusion_kernel_from_name(j["fusion"].get<std::string>());
    if (j.contains("score"))
      c.score = score_fn_from_name(j["score"].get<std::string>());
    c.depth = j.value("depth", c.depth);
    c.manual_features = j.value("manual_features", c.manual_features);
    c.self_match = j.value("self_match", c.self_match);
    c.bilinear_match = j.value("bilinear_match", c.bilinear_match);
    if (j.contains("char_channel"))
      c.char_channel =
          char_channel_from_name(j["char_channel"].get<std::string>());
    c.dropout = j.value("dropout", c.dropout);
    c.w_max = j.value("w_max", c.w_max);
    c.trainable_embeddings =
        j.value("trainable_embeddings", c.trainable_embeddings);
    c.embedding_file = j.value("embedding_file", c.embedding_file);
    c.char_vector_file = j.value("char_vector_file", c.char_vector_file);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace

ModelConfig model_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("model config parse failed: ") + e.what());
  }
  return model_config_from_jobj(j);
}

static constexpr char kCheckpointMagic[] = "SLQACKPT1\n";

void save_checkpoint(const std::string& path, const Model& model) {
  json tensors = json::array();
  for (const auto& [name, t] : model.registry())
    tensors.push_back({{"name", name}, {"shape", t.shape()}});
  json manifest = {
      {"config", json::parse(model_config_to_json(model.config()))},
      {"vocab", model.vocab().words()},
      {"char_vocab", model.char_vocab().bytes()},
      {"tensors", tensors}};
  const std::string m = manifest.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
  const uint64_t mlen = m.size();
  out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  out.write(m.data(), static_cast<std::streamsize>(m.size()));
  for (const auto& [name, t] : model.registry()) {
    const auto vals = t.values();
    out.write(reinterpret_cast<const char*>(vals.data()),
              static_cast<std::streamsize>(vals.size() * sizeof(double)));
  }
  if (!out) throw DataError("checkpoint write failed: " + path);
}

Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  char magic[sizeof(kCheckpointMagic) - 1];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw ParseError("not a checkpoint file: " + path);
  uint64_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  std::string mtext(mlen, '\0');
  in.read(mtext.data(), static_cast<std::streamsize>(mlen));
  if (!in) throw ParseError("truncated checkpoint manifest: " + path);
  json manifest;
  try {
    manifest = json::parse(mtext);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("checkpoint manifest parse failed: ") +
                     e.what());
  }
  const ModelConfig config = model_config_from_jobj(manifest.at("config"));
  std::vector<std::string> words =
      manifest.at("vocab").get<std::vector<std::string>>();
  if (words.empty() || words.front() != "<oov>")
    throw ParseError("checkpoint vocab missing OOV slot");
  words.erase(words.begin());
  Vocabulary vocab(std::move(words));
  std::vector<int> bytes = manifest.at("char_vocab").get<std::vector<int>>();
  if (bytes.empty() || bytes.front() != -1)
    throw ParseError("checkpoint char vocab missing OOV slot");
  bytes.erase(bytes.begin());
  CharVocab char_vocab((std::vector<int>(bytes)));

  std::shared_ptr<const PrecomputedVectors> pre;
  if (config.char_channel == CharChannelKind::kPrecomputed)
    pre = std::make_shared<PrecomputedVectors>(
        PrecomputedVectors::load(config.char_vector_file));

  Model model(config, std::move(vocab), std::move(char_vocab), /*seed=*/0,
              nullptr, std::move(pre));

  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != model.registry().size())
    throw ParseError("checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const std::string name = tensors[i].at("name").get<std::string>();
    const Shape shape = tensors[i].at("shape").get<Shape>();
    if (name != model.registry()[i].first)
      throw ParseError("checkpoint tensor order mismatch at " + name);
    Tensor t = model.registry()[i].second;
    if (shape != t.shape())
      throw ParseError("checkpoint tensor " + name + " has shape " +
                       shape_str(shape) + ", expected " +
                       shape_str(t.shape()));
    in.read(reinterpret_cast<char*>(t.raw().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw ParseError("truncated checkpoint values at " + name);
  }
  return model;
}

}  // namespace slqa
