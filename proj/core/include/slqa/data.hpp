#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace slqa {

// One question/passage/answer record in SQuAD v1.1 terms. Every answer's
// text equals the passage substring at its character offset.
struct QAExample {
  struct Answer {
    std::string text;
    int char_start = 0;
  };
  std::string id;
  std::string passage;
  std::string question;
  std::vector<Answer> answers;
};

struct Token {
  std::string text;
  int begin = 0;  // byte offsets into the source string, [begin, end)
  int end = 0;
};

// Whitespace-and-punctuation splitting: runs of non-space non-punctuation
// bytes form word tokens; each ASCII punctuation byte is its own token.
// Token offsets index the original string exactly.
std::vector<Token> tokenize(const std::string& text);

bool is_ascii_punct(char c);

// Smallest token span covering [char_start, char_start + len). `expanded`
// reports that a boundary fell inside a token and the span grew to cover it.
struct AlignedSpan {
  int start = 0;
  int end = 0;
  bool expanded = false;
};
AlignedSpan align_span(const std::vector<Token>& tokens, int char_start,
                       int length);

// Token-aligned form of a QAExample, trained against the first gold answer.
struct TokenizedExample {
  QAExample source;
  std::vector<Token> passage_tokens;
  std::vector<Token> question_tokens;
  int y_start = 0;
  int y_end = 0;
  bool expanded_alignment = false;
  // Per passage token: cased exact match, lowercased exact match,
  // term frequency normalized by passage length.
  std::vector<std::array<double, 3>> features;
};

TokenizedExample tokenize_example(const QAExample& ex);

std::vector<std::array<double, 3>> manual_features(
    const std::vector<Token>& passage, const std::vector<Token>& question);

// SQuAD v1.1 JSON (data -> paragraphs -> qas -> answers with answer_start).
std::vector<QAExample> load_squad(const std::string& path);
std::vector<QAExample> parse_squad(const std::string& json_text);
void write_squad(const std::string& path,
                 const std::vector<QAExample>& examples,
                 const std::string& title = "synthetic");

// Synthetic key/value retrieval corpus. Each passage embeds one target
// marker and `distractors` competing markers, each followed by a short
// value span; the question names the target marker and the gold answer is
// its value span. Pure function of the spec.
struct SynthSpec {
  int vocab_size = 60;
  int min_passage_len = 12;
  int max_passage_len = 30;
  int distractors = 2;
  int max_answer_len = 2;
  int count = 100;
  uint64_t seed = 1;
  std::string id_prefix = "synth";
};
std::vector<QAExample> synth_generate(const SynthSpec& spec);

// Token ids used by the encoder; id 0 is the shared OOV row.
class Vocabulary {
 public:
  static constexpr int kOov = 0;
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> sorted_words);

  static Vocabulary build(const std::vector<TokenizedExample>& corpus);

  int id(const std::string& word) const;
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;  // words_[0] is the OOV slot
  std::unordered_map<std::string, int> index_;
};

// Character inventory for the trained char channel; byte 0 slot is OOV.
class CharVocab {
 public:
  static constexpr int kOov = 0;
  CharVocab() = default;
  explicit CharVocab(std::vector<int> sorted_bytes);

  static CharVocab build(const std::vector<TokenizedExample>& corpus);

  int id(char c) const;
  int size() const { return static_cast<int>(bytes_.size()); }
  const std::vector<int>& bytes() const { return bytes_; }

 private:
  std::vector<int> bytes_;  // bytes_[0] == -1 marks the OOV slot
  std::array<int, 256> index_{};
};

// Examples grouped for one optimizer step, with padding masks to the
// per-batch maximum lengths. mask entries are 1 for real positions.
struct Batch {
  std::vector<const TokenizedExample*> items;
  int max_passage = 0;
  int max_question = 0;
  std::vector<std::vector<uint8_t>> passage_mask;   // B x max_passage
  std::vector<std::vector<uint8_t>> question_mask;  // B x max_question
};

// Consecutive batches of at most `size`; no example is dropped.
std::vector<Batch> make_batches(const std::vector<TokenizedExample>& examples,
                                int size);

}  // namespace slqa
