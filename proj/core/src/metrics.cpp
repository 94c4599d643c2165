#include "slqa/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

#include "slqa/data.hpp"

namespace slqa {

std::string normalize_answer(const std::string& s) {
  std::string lowered;
  lowered.reserve(s.size());
  for (const char c : s)
    if (!is_ascii_punct(c))
      lowered.push_back(
          static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  std::istringstream in(lowered);
  std::string word, out;
  while (in >> word) {
    if (word == "a" || word == "an" || word == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += word;
  }
  return out;
}

std::vector<std::string> normalized_tokens(const std::string& s) {
  std::istringstream in(normalize_answer(s));
  std::vector<std::string> out;
  std::string word;
  while (in >> word) out.push_back(word);
  return out;
}

int metric_em(const std::string& prediction,
              const std::vector<std::string>& golds) {
  const std::string np = normalize_answer(prediction);
  for (const auto& g : golds)
    if (np == normalize_answer(g)) return 1;
  return 0;
}

namespace {

double f1_single(const std::vector<std::string>& pred,
                 const std::vector<std::string>& gold) {
  if (pred.empty() && gold.empty()) return 1.0;
  if (pred.empty() || gold.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& t : gold) ++counts[t];
  int common = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / pred.size();
  const double recall = static_cast<double>(common) / gold.size();
  return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

double metric_f1(const std::string& prediction,
                 const std::vector<std::string>& golds) {
  const auto pred = normalized_tokens(prediction);
  double best = 0.0;
  for (const auto& g : golds)
    best = std::max(best, f1_single(pred, normalized_tokens(g)));
  return best;
}

}  // namespace slqa
