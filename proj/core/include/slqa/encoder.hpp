#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "slqa/data.hpp"
#include "slqa/ops.hpp"
#include "slqa/rng.hpp"
#include "slqa/tensor.hpp"

namespace slqa {

// Word-vector lookup. The whole matrix trains only when `trainable`; the
// OOV row (zero-initialized) trains regardless.
struct EmbeddingTable {
  Tensor matrix;  // V x d_w
  bool trainable = false;
  int oov_id = Vocabulary::kOov;

  int vocab() const { return matrix.dim(0); }
  int dim() const { return matrix.dim(1); }
};

// `surfaceform v1 v2 ... vd` per line.
std::map<std::string, std::vector<double>> load_word_vectors(
    const std::string& path);

// Vocabulary-ordered table; rows present in `vectors` are copied, the rest
// are drawn from `init`, and the OOV row is zeroed.
EmbeddingTable build_embedding_table(
    const Vocabulary& vocab, int dim, bool trainable, Rng& init,
    const std::map<std::string, std::vector<double>>* vectors = nullptr);

// Identifies which example/side a token sequence came from; the
// precomputed channel is keyed on it.
struct SideKey {
  std::string example_id;
  char side = 'P';  // 'Q' or 'P'
};

// Per-token-occurrence vectors loaded from disk:
// `exampleId \t side(Q|P) \t tokenIndex \t v1,v2,...,vd` per line.
class PrecomputedVectors {
 public:
  static PrecomputedVectors load(const std::string& path);

  const std::vector<double>* find(const std::string& example_id, char side,
                                  int token_index) const;
  int dim() const { return dim_; }

 private:
  std::map<std::string, std::vector<double>> entries_;
  int dim_ = 0;
};

// Character-level stand-in for a pretrained contextual embedder: either a
// small trainable char-BiLSTM (final states of both directions) or vectors
// precomputed offline. Both variants emit one d_c vector per token; the
// empty-string token maps to the zero vector.
class CharChannel {
 public:
  static CharChannel trained(CharVocab vocab, Tensor char_table,
                             LstmParams fwd, LstmParams bwd);
  static CharChannel precomputed(const PrecomputedVectors* vectors);
  static CharChannel none();

  bool enabled() const { return kind_ != Kind::kNone; }
  bool is_trained() const { return kind_ == Kind::kTrained; }
  int dim() const;

  // T x d_c, one row per token.
  Tensor embed(Tape& tape, const std::vector<std::string>& tokens,
               const SideKey& key) const;

  const CharVocab& char_vocab() const { return vocab_; }
  const Tensor& table() const { return table_; }
  const LstmParams& fwd() const { return fwd_; }
  const LstmParams& bwd() const { return bwd_; }

 private:
  enum class Kind { kNone, kTrained, kPrecomputed };
  Kind kind_ = Kind::kNone;
  CharVocab vocab_;
  Tensor table_;  // C x char_emb_dim
  LstmParams fwd_, bwd_;
  const PrecomputedVectors* vectors_ = nullptr;
};

// Shared contextual encoder: u_t = [BiLSTM([e_t; c_t]); c_t], the same
// BiLSTM parameters serving both question and passage.
struct Encoder {
  EmbeddingTable table;
  CharChannel chars;
  LstmParams ctx_fwd, ctx_bwd;
  double dropout_rate = 0.0;

  // Width of u_t: 2h plus the char dim when the channel is enabled.
  int output_dim() const;

  Tensor encode(Tape& tape, const std::vector<int>& ids,
                const std::vector<std::string>& tokens, const SideKey& key,
                bool training, Rng& rng) const;
};

}  // namespace slqa
