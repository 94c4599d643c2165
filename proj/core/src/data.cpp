#include "slqa/data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "slqa/error.hpp"
#include "slqa/rng.hpp"

namespace slqa {

using nlohmann::json;

bool is_ascii_punct(char c) {
  const unsigned char u = static_cast<unsigned char>(c);
  return (u >= 33 && u <= 47) || (u >= 58 && u <= 64) || (u >= 91 && u <= 96) ||
         (u >= 123 && u <= 126);
}

namespace {
bool is_space_byte(char c) {
  const unsigned char u = static_cast<unsigned char>(c);
  return u == ' ' || u == '\t' || u == '\n' || u == '\r' || u == '\f' ||
         u == '\v';
}
}  // namespace

std::vector<Token> tokenize(const std::string& text) {
  std::vector<Token> tokens;
  const int n = static_cast<int>(text.size());
  int i = 0;
  while (i < n) {
    if (is_space_byte(text[i])) {
      ++i;
      continue;
    }
    if (is_ascii_punct(text[i])) {
      tokens.push_back({text.substr(i, 1), i, i + 1});
      ++i;
      continue;
    }
    int j = i;
    while (j < n && !is_space_byte(text[j]) && !is_ascii_punct(text[j])) ++j;
    tokens.push_back({text.substr(i, j - i), i, j});
    i = j;
  }
  return tokens;
}

AlignedSpan align_span(const std::vector<Token>& tokens, int char_start,
                       int length) {
  if (tokens.empty()) throw DataError("align_span: empty token sequence");
  if (length <= 0) throw DataError("align_span: empty answer");
  const int char_end = char_start + length;  // exclusive
  int first = -1, last = -1;
  for (int t = 0; t < static_cast<int>(tokens.size()); ++t) {
    // Token overlaps [char_start, char_end)?
    if (tokens[t].end > char_start && tokens[t].begin < char_end) {
      if (first < 0) first = t;
      last = t;
    }
  }
  if (first < 0)
    throw DataError("align_span: answer at char " + std::to_string(char_start) +
                    " not covered by any token");
  const bool expanded =
      tokens[first].begin != char_start || tokens[last].end != char_end;
  return {first, last, expanded};
}

std::vector<std::array<double, 3>> manual_features(
    const std::vector<Token>& passage, const std::vector<Token>& question) {
  std::set<std::string> q_cased, q_lower;
  for (const auto& t : question) {
    q_cased.insert(t.text);
    std::string lower = t.text;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    q_lower.insert(lower);
  }
  std::map<std::string, int> counts;
  for (const auto& t : passage) ++counts[t.text];
  const double n = static_cast<double>(passage.size());
  std::vector<std::array<double, 3>> feats;
  feats.reserve(passage.size());
  for (const auto& t : passage) {
    std::string lower = t.text;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    feats.push_back({q_cased.count(t.text) ? 1.0 : 0.0,
                     q_lower.count(lower) ? 1.0 : 0.0,
                     n > 0 ? counts[t.text] / n : 0.0});
  }
  return feats;
}

TokenizedExample tokenize_example(const QAExample& ex) {
  TokenizedExample out;
  out.source = ex;
  out.passage_tokens = tokenize(ex.passage);
  out.question_tokens = tokenize(ex.question);
  if (out.passage_tokens.empty())
    throw DataError("example " + ex.id + ": empty passage");
  if (out.question_tokens.empty())
    throw DataError("example " + ex.id + ": empty question");
  if (ex.answers.empty())
    throw DataError("example " + ex.id + ": no gold answers");
  // Training target uses the first gold answer; evaluation sees them all.
  const auto& gold = ex.answers.front();
  const AlignedSpan span = align_span(
      out.passage_tokens, gold.char_start, static_cast<int>(gold.text.size()));
  out.y_start = span.start;
  out.y_end = span.end;
  out.expanded_alignment = span.expanded;
  out.features = manual_features(out.passage_tokens, out.question_tokens);
  return out;
}

std::vector<QAExample> parse_squad(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("SQuAD JSON parse failed: ") + e.what());
  }
  if (!root.contains("data") || !root["data"].is_array())
    throw ParseError("SQuAD JSON: missing top-level \"data\" array");
  std::vector<QAExample> out;
  for (const auto& article : root["data"]) {
    if (!article.contains("paragraphs"))
      throw ParseError("SQuAD JSON: article without \"paragraphs\"");
    for (const auto& para : article["paragraphs"]) {
      if (!para.contains("context") || !para.contains("qas"))
        throw ParseError("SQuAD JSON: paragraph missing context/qas");
      const std::string context = para["context"].get<std::string>();
      for (const auto& qa : para["qas"]) {
        QAExample ex;
        ex.passage = context;
        ex.id = qa.at("id").is_string() ? qa["id"].get<std::string>()
                                        : qa["id"].dump();
        ex.question = qa.at("question").get<std::string>();
        if (!qa.contains("answers") || !qa["answers"].is_array())
          throw ParseError("SQuAD JSON: qa " + ex.id + " missing answers");
        for (const auto& ans : qa["answers"]) {
          QAExample::Answer a;
          a.text = ans.at("text").get<std::string>();
          a.char_start = ans.at("answer_start").get<int>();
          if (a.char_start < 0 ||
              a.char_start + a.text.size() > context.size() ||
              context.compare(a.char_start, a.text.size(), a.text) != 0)
            throw DataError("SQuAD JSON: answer offset mismatch in qa " +
                            ex.id);
          ex.answers.push_back(std::move(a));
        }
        out.push_back(std::move(ex));
      }
    }
  }
  return out;
}

std::vector<QAExample> load_squad(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_squad(buf.str());
}

void write_squad(const std::string& path, const std::vector<QAExample>& examples,
                 const std::string& title) {
  // Group consecutive examples sharing a passage into one paragraph.
  json paragraphs = json::array();
  std::size_t i = 0;
  while (i < examples.size()) {
    json qas = json::array();
    const std::string& ctx = examples[i].passage;
    std::size_t j = i;
    while (j < examples.size() && examples[j].passage == ctx) {
      json answers = json::array();
      for (const auto& a : examples[j].answers)
        answers.push_back({{"text", a.text}, {"answer_start", a.char_start}});
      qas.push_back({{"id", examples[j].id},
                     {"question", examples[j].question},
                     {"answers", answers}});
      ++j;
    }
    paragraphs.push_back({{"context", ctx}, {"qas", qas}});
    i = j;
  }
  json root = {{"version", "1.1"},
               {"data", json::array({{{"title", title},
                                      {"paragraphs", paragraphs}}})}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << root.dump(1) << "\n";
}

namespace {

// Scan for token-aligned occurrences of `needle` in `haystack`.
int count_token_occurrences(const std::vector<std::string>& haystack,
                            const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return 0;
  int count = 0;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    bool match = true;
    for (std::size_t k = 0; k < needle.size(); ++k)
      if (haystack[i + k] != needle[k]) {
        match = false;
        break;
      }
    if (match) ++count;
  }
  return count;
}

}  // namespace

std::vector<QAExample> synth_generate(const SynthSpec& spec) {
  if (spec.vocab_size < 8 || spec.min_passage_len < 4 ||
      spec.max_passage_len < spec.min_passage_len || spec.count < 1 ||
      spec.max_answer_len < 1 || spec.distractors < 0)
    throw ConfigError("synth_generate: invalid spec");
  Rng rng(spec.seed);
  std::vector<std::string> fillers;
  for (int i = 0; i < spec.vocab_size; ++i)
    fillers.push_back("w" + std::to_string(i));
  const int marker_pool = std::max(4, spec.distractors + 2);
  std::vector<std::string> markers;
  for (int i = 0; i < marker_pool; ++i)
    markers.push_back("key" + std::to_string(i));

  std::vector<QAExample> out;
  out.reserve(spec.count);
  for (int n = 0; n < spec.count; ++n) {
    std::vector<std::string> tokens;
    std::vector<int> answer_token_range;  // start, length (target marker)
    for (int attempt = 0;; ++attempt) {
      if (attempt > 200)
        throw NumericError("synth_generate: could not build a unique answer");
      const int len =
          spec.min_passage_len +
          static_cast<int>(rng.below(spec.max_passage_len - spec.min_passage_len + 1));
      tokens.clear();
      for (int i = 0; i < len; ++i)
        tokens.push_back(fillers[rng.below(fillers.size())]);
      // Pick the target plus distinct distractor markers.
      std::vector<int> picks;
      while (static_cast<int>(picks.size()) < spec.distractors + 1) {
        const int m = static_cast<int>(rng.below(markers.size()));
        if (std::find(picks.begin(), picks.end(), m) == picks.end())
          picks.push_back(m);
      }
      bool ok = true;
      std::vector<std::string> target_value;
      for (std::size_t pi = 0; pi < picks.size(); ++pi) {
        const int alen =
            1 + static_cast<int>(rng.below(spec.max_answer_len));
        std::vector<std::string> value;
        for (int k = 0; k < alen; ++k)
          value.push_back(fillers[rng.below(fillers.size())]);
        std::vector<std::string> segment;
        segment.push_back(markers[picks[pi]]);
        segment.insert(segment.end(), value.begin(), value.end());
        const int pos = static_cast<int>(rng.below(tokens.size() + 1));
        tokens.insert(tokens.begin() + pos, segment.begin(), segment.end());
        if (pi == 0) target_value = value;
      }
      // Relocate the target's value: find the marker, take what follows.
      const std::string& target_marker = markers[picks[0]];
      int marker_pos = -1;
      for (std::size_t i = 0; i < tokens.size(); ++i)
        if (tokens[i] == target_marker) {
          marker_pos = static_cast<int>(i);
          break;
        }
      // Later insertions may split an earlier segment; detect and retry.
      bool intact = marker_pos >= 0 &&
                    marker_pos + 1 + static_cast<int>(target_value.size()) <=
                        static_cast<int>(tokens.size());
      if (intact)
        for (std::size_t k = 0; k < target_value.size(); ++k)
          if (tokens[marker_pos + 1 + k] != target_value[k]) {
            intact = false;
            break;
          }
      if (!intact) continue;
      // Distractor markers must stay unique too, so the question is
      // unambiguous; the answer span must occur exactly once.
      if (count_token_occurrences(tokens, {target_marker}) != 1) ok = false;
      if (ok && count_token_occurrences(tokens, target_value) != 1) ok = false;
      if (!ok) continue;
      answer_token_range = {marker_pos + 1,
                            static_cast<int>(target_value.size())};
      QAExample ex;
      ex.id = spec.id_prefix + "-" + std::to_string(spec.seed) + "-" +
              std::to_string(n);
      std::string passage;
      std::vector<int> starts(tokens.size());
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) passage += ' ';
        starts[i] = static_cast<int>(passage.size());
        passage += tokens[i];
      }
      ex.passage = passage;
      ex.question = "value of " + target_marker + " ?";
      QAExample::Answer a;
      const int a0 = answer_token_range[0];
      const int alen = answer_token_range[1];
      const int cs = starts[a0];
      const int ce = starts[a0 + alen - 1] +
                     static_cast<int>(tokens[a0 + alen - 1].size());
      a.text = passage.substr(cs, ce - cs);
      a.char_start = cs;
      ex.answers.push_back(std::move(a));
      out.push_back(std::move(ex));
      break;
    }
  }
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> sorted_words) {
  words_.push_back("<oov>");
  for (auto& w : sorted_words) words_.push_back(std::move(w));
  for (int i = 0; i < static_cast<int>(words_.size()); ++i)
    index_[words_[i]] = i;
}

Vocabulary Vocabulary::build(const std::vector<TokenizedExample>& corpus) {
  std::set<std::string> seen;
  for (const auto& ex : corpus) {
    for (const auto& t : ex.passage_tokens) seen.insert(t.text);
    for (const auto& t : ex.question_tokens) seen.insert(t.text);
  }
  seen.erase("<oov>");
  return Vocabulary(std::vector<std::string>(seen.begin(), seen.end()));
}

int Vocabulary::id(const std::string& word) const {
  const auto it = index_.find(word);
  return it == index_.end() ? kOov : it->second;
}

CharVocab::CharVocab(std::vector<int> sorted_bytes) {
  index_.fill(kOov);
  bytes_.push_back(-1);
  for (const int b : sorted_bytes) {
    index_[static_cast<std::size_t>(b)] = static_cast<int>(bytes_.size());
    bytes_.push_back(b);
  }
}

CharVocab CharVocab::build(const std::vector<TokenizedExample>& corpus) {
  std::set<int> seen;
  for (const auto& ex : corpus) {
    for (const auto& t : ex.passage_tokens)
      for (const char c : t.text) seen.insert(static_cast<unsigned char>(c));
    for (const auto& t : ex.question_tokens)
      for (const char c : t.text) seen.insert(static_cast<unsigned char>(c));
  }
  return CharVocab(std::vector<int>(seen.begin(), seen.end()));
}

int CharVocab::id(char c) const {
  if (bytes_.empty()) return kOov;
  return index_[static_cast<unsigned char>(c)];
}

std::vector<Batch> make_batches(const std::vector<TokenizedExample>& examples,
                                int size) {
  if (size < 1) throw ContractError("make_batches: size must be >= 1");
  std::vector<Batch> out;
  for (std::size_t i = 0; i < examples.size(); i += size) {
    Batch b;
    const std::size_t hi = std::min(examples.size(), i + size);
    for (std::size_t j = i; j < hi; ++j) {
      b.items.push_back(&examples[j]);
      b.max_passage = std::max(
          b.max_passage, static_cast<int>(examples[j].passage_tokens.size()));
      b.max_question = std::max(
          b.max_question, static_cast<int>(examples[j].question_tokens.size()));
    }
    for (const auto* ex : b.items) {
      std::vector<uint8_t> pm(b.max_passage, 0), qm(b.max_question, 0);
      std::fill(pm.begin(), pm.begin() + ex->passage_tokens.size(), 1);
      std::fill(qm.begin(), qm.begin() + ex->question_tokens.size(), 1);
      b.passage_mask.push_back(std::move(pm));
      b.question_mask.push_back(std::move(qm));
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace slqa
