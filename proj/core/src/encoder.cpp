#include "slqa/encoder.hpp"

#include <fstream>
#include <sstream>

#include "slqa/error.hpp"

namespace slqa {

std::map<std::string, std::vector<double>> load_word_vectors(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open word-vector file " + path);
  std::map<std::string, std::vector<double>> out;
  std::string line;
  int lineno = 0;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    std::vector<double> v;
    double x;
    while (ls >> x) v.push_back(x);
    if (v.empty())
      throw ParseError("word-vector file " + path + " line " +
                       std::to_string(lineno) + ": no values");
    if (dim == 0) dim = v.size();
    if (v.size() != dim)
      throw ParseError("word-vector file " + path + " line " +
                       std::to_string(lineno) + ": width " +
                       std::to_string(v.size()) + " != " + std::to_string(dim));
    out[word] = std::move(v);
  }
  return out;
}

EmbeddingTable build_embedding_table(
    const Vocabulary& vocab, int dim, bool trainable, Rng& init,
    const std::map<std::string, std::vector<double>>* vectors) {
  if (dim < 1) throw ConfigError("embedding dim must be positive");
  const int v = vocab.size();
  std::vector<double> vals(static_cast<std::size_t>(v) * dim, 0.0);
  for (int i = 0; i < v; ++i) {
    if (i == Vocabulary::kOov) continue;  // OOV row stays zero
    const std::vector<double>* row = nullptr;
    if (vectors) {
      const auto it = vectors->find(vocab.words()[i]);
      if (it != vectors->end()) {
        if (static_cast<int>(it->second.size()) != dim)
          throw ConfigError("pretrained vector width " +
                            std::to_string(it->second.size()) +
                            " != embedding dim " + std::to_string(dim));
        row = &it->second;
      }
    }
    for (int j = 0; j < dim; ++j)
      vals[static_cast<std::size_t>(i) * dim + j] =
          row ? (*row)[j] : init.uniform(-0.1, 0.1);
  }
  EmbeddingTable table;
  table.matrix = Tensor::from({v, dim}, std::move(vals), /*requires_grad=*/true);
  table.trainable = trainable;
  return table;
}

PrecomputedVectors PrecomputedVectors::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open char-vector file " + path);
  PrecomputedVectors out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, side, index_s, values_s;
    if (!std::getline(ls, id, '\t') || !std::getline(ls, side, '\t') ||
        !std::getline(ls, index_s, '\t') || !std::getline(ls, values_s))
      throw ParseError("char-vector file " + path + " line " +
                       std::to_string(lineno) + ": expected 4 tab fields");
    if (side != "Q" && side != "P")
      throw ParseError("char-vector file " + path + " line " +
                       std::to_string(lineno) + ": side must be Q or P");
    std::vector<double> v;
    std::istringstream vs(values_s);
    std::string item;
    while (std::getline(vs, item, ',')) {
      try {
        v.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw ParseError("char-vector file " + path + " line " +
                         std::to_string(lineno) + ": bad number '" + item +
                         "'");
      }
    }
    if (v.empty())
      throw ParseError("char-vector file " + path + " line " +
                       std::to_string(lineno) + ": no values");
    if (out.dim_ == 0) out.dim_ = static_cast<int>(v.size());
    if (static_cast<int>(v.size()) != out.dim_)
      throw ParseError("char-vector file " + path + " line " +
                       std::to_string(lineno) + ": inconsistent width");
    out.entries_[id + "\t" + side + "\t" + index_s] = std::move(v);
  }
  return out;
}

const std::vector<double>* PrecomputedVectors::find(
    const std::string& example_id, char side, int token_index) const {
  const auto it = entries_.find(example_id + "\t" + std::string(1, side) +
                                "\t" + std::to_string(token_index));
  return it == entries_.end() ? nullptr : &it->second;
}

CharChannel CharChannel::trained(CharVocab vocab, Tensor char_table,
                                 LstmParams fwd, LstmParams bwd) {
  if (fwd.hidden() != bwd.hidden())
    throw ConfigError("char channel: direction hidden sizes differ");
  if (char_table.dim(0) != vocab.size())
    throw ConfigError("char channel: table rows != char vocab size");
  CharChannel c;
  c.kind_ = Kind::kTrained;
  c.vocab_ = std::move(vocab);
  c.table_ = std::move(char_table);
  c.fwd_ = std::move(fwd);
  c.bwd_ = std::move(bwd);
  return c;
}

CharChannel CharChannel::precomputed(const PrecomputedVectors* vectors) {
  if (!vectors || vectors->dim() < 1)
    throw ConfigError("char channel: precomputed vectors missing or empty");
  CharChannel c;
  c.kind_ = Kind::kPrecomputed;
  c.vectors_ = vectors;
  return c;
}

CharChannel CharChannel::none() { return CharChannel(); }

int CharChannel::dim() const {
  switch (kind_) {
    case Kind::kNone: return 0;
    case Kind::kTrained: return 2 * fwd_.hidden();
    case Kind::kPrecomputed: return vectors_->dim();
  }
  return 0;
}

Tensor CharChannel::embed(Tape& tape, const std::vector<std::string>& tokens,
                          const SideKey& key) const {
  if (kind_ == Kind::kNone)
    throw ContractError("char channel: embed called on disabled channel");
  if (tokens.empty())
    throw DegenerateInputError("char channel: empty token sequence");
  const int d = dim();
  if (kind_ == Kind::kPrecomputed) {
    std::vector<double> vals(tokens.size() * static_cast<std::size_t>(d), 0.0);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      if (tokens[t].empty()) continue;  // empty token -> zero vector
      const auto* v = vectors_->find(key.example_id, key.side,
                                     static_cast<int>(t));
      if (!v)
        throw DataError("precomputed char vectors: no entry for example " +
                        key.example_id + " side " +
                        std::string(1, key.side) + " token index " +
                        std::to_string(t));
      std::copy(v->begin(), v->end(), vals.begin() + t * d);
    }
    return Tensor::from({static_cast<int>(tokens.size()), d},
                        std::move(vals));
  }
  // Trained variant: run the char BiLSTM per token and keep the final
  // state of each direction.
  std::vector<Tensor> rows;
  rows.reserve(tokens.size());
  for (const auto& tok : tokens) {
    if (tok.empty()) {
      rows.push_back(Tensor::zeros({1, d}));
      continue;
    }
    std::vector<int> char_ids;
    char_ids.reserve(tok.size());
    for (const char c : tok) char_ids.push_back(vocab_.id(c));
    const Tensor chars = embed_rows(tape, table_, char_ids, CharVocab::kOov,
                                    /*table_trainable=*/true);
    const Tensor left = lstm_seq(tape, chars, fwd_, false);
    const Tensor right = lstm_seq(tape, chars, bwd_, true);
    // Final states: last row of the forward scan, first row of the reverse.
    const Tensor vec = concat(
        tape, {row(tape, left, static_cast<int>(tok.size()) - 1),
               row(tape, right, 0)});
    rows.push_back(vec);
  }
  return vstack(tape, rows);
}

int Encoder::output_dim() const {
  return 2 * ctx_fwd.hidden() + (chars.enabled() ? chars.dim() : 0);
}

Tensor Encoder::encode(Tape& tape, const std::vector<int>& ids,
                       const std::vector<std::string>& tokens,
                       const SideKey& key, bool training, Rng& rng) const {
  if (ids.empty()) throw DegenerateInputError("encode: empty sequence");
  if (ids.size() != tokens.size())
    throw ContractError("encode: ids and surface forms disagree in length");
  const Tensor e =
      embed_rows(tape, table.matrix, ids, table.oov_id, table.trainable);
  Tensor x = e;
  Tensor c;
  if (chars.enabled()) {
    c = chars.embed(tape, tokens, key);
    if (c.dim(1) != chars.dim())
      throw ConfigError("char channel width mismatch");
    x = concat(tape, {e, c});
  }
  if (static_cast<int>(ctx_fwd.input_dim()) != x.dim(1))
    throw ConfigError("encoder BiLSTM expects input width " +
                      std::to_string(ctx_fwd.input_dim()) + ", got " +
                      std::to_string(x.dim(1)));
  x = dropout(tape, x, dropout_rate, training, rng);
  const Tensor ctx = bilstm(tape, x, ctx_fwd, ctx_bwd);
  // Residual: append the char vectors after the contextual pass.
  return chars.enabled() ? concat(tape, {ctx, c}) : ctx;
}

}  // namespace slqa
