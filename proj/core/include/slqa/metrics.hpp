#pragma once

#include <string>
#include <vector>

namespace slqa {

// Answer normalization matching the official scoring convention:
// lowercase, drop ASCII punctuation, drop the articles a/an/the,
// collapse whitespace.
std::string normalize_answer(const std::string& s);

std::vector<std::string> normalized_tokens(const std::string& s);

// 1 iff the normalized prediction equals any normalized gold.
int metric_em(const std::string& prediction,
              const std::vector<std::string>& golds);

// Token-overlap F1 on normalized token bags, maximized over golds.
// Both sides empty -> 1; exactly one empty -> 0.
double metric_f1(const std::string& prediction,
                 const std::vector<std::string>& golds);

}  // namespace slqa
