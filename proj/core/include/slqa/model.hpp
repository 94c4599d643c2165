#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slqa/attention.hpp"
#include "slqa/data.hpp"
#include "slqa/encoder.hpp"
#include "slqa/ops.hpp"

namespace slqa {

enum class CharChannelKind { kNone, kTrained, kPrecomputed };

CharChannelKind char_channel_from_name(const std::string& name);
std::string char_channel_name(CharChannelKind k);

// Every knob of the network. The attention depth selects how much of the
// hierarchy runs: 1 = co-attention only (predict from the fused passage),
// 2 = plus self-attention (predict from per-position heads on D''),
// 3 = plus the bilinear match against the question summary (full model).
struct ModelConfig {
  int d_w = 50;          // word embedding dim
  int d_c = 16;          // char channel output dim (2 * char LSTM hidden)
  int char_emb_dim = 16; // per-character embedding width (trained channel)
  int h = 64;            // contextual BiLSTM hidden size
  FusionKernel fusion = FusionKernel::kVfu;
  ScoreFn score = ScoreFn::kBilinearRelu;
  int depth = 3;
  bool manual_features = true;
  bool self_match = true;
  bool bilinear_match = true;
  CharChannelKind char_channel = CharChannelKind::kTrained;
  double dropout = 0.4;
  int w_max = 15;
  bool trainable_embeddings = false;
  std::string embedding_file;
  std::string char_vector_file;

  void validate() const;
  // Width of the encoder output u_t.
  int encoded_dim() const {
    return 2 * h + (char_channel == CharChannelKind::kNone ? 0 : d_c);
  }
};

// All trainable tensors, registered exactly once each, in a fixed order.
// Every configuration allocates the full set; wiring decides what is used,
// so unused parameters simply receive zero gradients.
struct ModelParams {
  EmbeddingTable embed;
  CharChannel chars;            // owns the char table + char LSTMs
  LstmParams enc_fwd, enc_bwd;  // shared question/passage contextual BiLSTM
  ScoreFnSpec score;
  FusionSpec fuse_p, fuse_q, fuse_self;
  LstmParams d1_fwd, d1_bwd;  // D  = BiLSTM([P'; feat])
  Tensor w_l;                 // self-alignment bilinear weight
  LstmParams d2_fwd, d2_bwd;  // D'' = BiLSTM(D')
  LstmParams q2_fwd, q2_bwd;  // Q'' = BiLSTM(Q')
  Tensor w_q;                 // question summary vector
  Tensor w_s, w_e;            // bilinear match matrices
  // Per-position linear heads used when the bilinear match is absent.
  Tensor head_p_ws, head_p_bs, head_p_we, head_p_be;  // on P' (depth 1)
  Tensor head_d_ws, head_d_bs, head_d_we, head_d_be;  // on D''

  std::vector<std::pair<std::string, Tensor>> registry;
};

// Per-example forward result. Distributions are 1 x n tensors on the tape;
// intermediates are exposed for inspection and tests (undefined tensors
// mean the stage did not run at this depth).
struct Forward {
  Tensor p_start, p_end;
  Tensor scores;  // S, n x m
  Tensor alpha;   // row-softmaxed S
  Tensor beta;    // column-softmaxed S
  Tensor l;       // self-alignment weights, n x n
  Tensor gamma;   // question summary weights, m x 1
  Tensor q;       // 1 x d question summary
  int n = 0, m = 0;
};

// Plain-value snapshot of a Forward (for reports and tests). When
// `padded_to` exceeds n, distributions are zero-extended: padded positions
// carry probability exactly 0.
struct ForwardOutput {
  std::vector<double> p_start, p_end;
  std::vector<double> scores, alpha, beta, l, gamma, q;
  int n = 0, m = 0;
};

struct SpanPrediction {
  int start = 0;
  int end = 0;
  double confidence = 0.0;
  std::string text;
};

class Model {
 public:
  Model() = default;
  Model(ModelConfig config, Vocabulary vocab, CharVocab char_vocab,
        uint64_t seed,
        const std::map<std::string, std::vector<double>>* pretrained = nullptr,
        std::shared_ptr<const PrecomputedVectors> precomputed = nullptr);

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  const CharVocab& char_vocab() const { return char_vocab_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& registry() const {
    return params_.registry;
  }
  Tensor param(const std::string& name) const;

  Forward forward(Tape& tape, const TokenizedExample& ex, bool training,
                  Rng& rng) const;

  // Mean over the batch of -(log p_s(y_s) + log p_e(y_e)), log floored at
  // 1e-12. Gold indices must lie inside each example's passage.
  Tensor loss(Tape& tape, const std::vector<Forward>& outputs,
              const std::vector<std::pair<int, int>>& golds) const;

  void zero_grads();

 private:
  ModelConfig config_;
  Vocabulary vocab_;
  CharVocab char_vocab_;
  ModelParams params_;
  std::shared_ptr<const PrecomputedVectors> precomputed_;

  Tensor predict_axis(Tape& tape, const Tensor& rep, const Tensor& w,
                      const Tensor& b) const;
};

ForwardOutput snapshot(const Forward& f, int padded_to = 0);

// argmax over p_s(s) * p_e(e) subject to s <= e <= s + w_max, computed in
// one left-to-right sweep with a monotone window maximum. Ties prefer the
// smaller s, then the smaller e.
SpanPrediction decode_span(std::span<const double> p_start,
                           std::span<const double> p_end, int w_max);

// argmax of the summed per-model confidences over the same window; spans
// score sum_k p_s^k(s) * p_e^k(e). Tie rules match decode_span.
SpanPrediction ensemble_decode(const std::vector<ForwardOutput>& outputs,
                               int w_max);

// Checkpoint container: a JSON manifest (config + vocabularies + tensor
// directory) followed by raw little-endian doubles. Round-trips exactly.
void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

// Config (de)serialization shared by checkpoints and config files.
std::string model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace slqa
