#pragma once

// ROUGE-1/2/L with Porter stemming. ROUGE-L uses one LCS over the whole
// summary token sequence.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mvsum::rouge {

// Classic Porter stemmer for a lowercase token. Tokens that are not purely
// alphabetic or have at most two letters are returned unchanged.
std::string porter_stem(std::string_view token);

// Lowercased, stemmed tokens; tokens without a letter or digit are dropped.
std::vector<std::string> scoring_tokens(std::string_view text);

struct Prf {
  double p = 0, r = 0, f = 0;
};

Prf rouge_n(std::span<const std::string> hyp, std::span<const std::string> ref, std::size_t n);
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);
Prf rouge_l(std::span<const std::string> hyp, std::span<const std::string> ref);

struct Scores {
  Prf r1, r2, rl;
};

Scores score(std::string_view hyp, std::string_view ref);

struct Report {
  std::vector<std::pair<std::string, Scores>> rows;  // reference order
  Scores mean;
};

// Pairs are (id, text). Both sides must cover the same ids; otherwise the
// error lists every unmatched id.
Report evaluate_corpus(std::span<const std::pair<std::string, std::string>> hyps,
                       std::span<const std::pair<std::string, std::string>> refs);

void write_report_csv(std::ostream& os, const Report& report);

// JSONL lines with "id" and "summary" (summarize output or a canonical corpus).
std::vector<std::pair<std::string, std::string>> read_summaries(std::istream& is);
std::vector<std::pair<std::string, std::string>> read_summaries_file(const std::string& path);

}  // namespace mvsum::rouge
