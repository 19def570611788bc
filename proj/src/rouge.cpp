#include "mvsum/rouge.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

#include "json.hpp"
#include "mvsum/corpus.hpp"
#include "mvsum/error.hpp"

namespace mvsum::rouge {

std::vector<std::string> scoring_tokens(std::string_view text) {
  std::vector<std::string> out;
  for (std::string& t : corpus::tokenize(text)) {
    if (std::none_of(t.begin(), t.end(), [](unsigned char c) { return std::isalnum(c) || c >= 0x80; })) continue;
    out.push_back(porter_stem(t));
  }
  return out;
}

namespace {

Prf make_prf(double overlap, std::size_t hyp_total, std::size_t ref_total) {
  Prf s;
  s.p = hyp_total == 0 ? 0.0 : overlap / static_cast<double>(hyp_total);
  s.r = ref_total == 0 ? 0.0 : overlap / static_cast<double>(ref_total);
  s.f = s.p + s.r == 0 ? 0.0 : 2 * s.p * s.r / (s.p + s.r);
  return s;
}

std::map<std::vector<std::string>, std::size_t> ngram_counts(std::span<const std::string> toks, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++counts[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)];
  return counts;
}

}  // namespace

Prf rouge_n(std::span<const std::string> hyp, std::span<const std::string> ref, std::size_t n) {
  if (n == 0) throw Error("rouge_n: n must be positive");
  const auto h = ngram_counts(hyp, n);
  const auto r = ngram_counts(ref, n);
  std::size_t overlap = 0;
  for (const auto& [gram, c] : h)
    if (auto it = r.find(gram); it != r.end()) overlap += std::min(c, it->second);
  const std::size_t ht = hyp.size() >= n ? hyp.size() - n + 1 : 0;
  const std::size_t rt = ref.size() >= n ? ref.size() - n + 1 : 0;
  return make_prf(static_cast<double>(overlap), ht, rt);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

Prf rouge_l(std::span<const std::string> hyp, std::span<const std::string> ref) {
  return make_prf(static_cast<double>(lcs_length(hyp, ref)), hyp.size(), ref.size());
}

Scores score(std::string_view hyp, std::string_view ref) {
  const auto h = scoring_tokens(hyp);
  const auto r = scoring_tokens(ref);
  return {rouge_n(h, r, 1), rouge_n(h, r, 2), rouge_l(h, r)};
}

Report evaluate_corpus(std::span<const std::pair<std::string, std::string>> hyps,
                       std::span<const std::pair<std::string, std::string>> refs) {
  std::map<std::string, std::string> by_id;
  for (const auto& [id, text] : hyps)
    if (!by_id.emplace(id, text).second) throw Error("evaluate: duplicate hypothesis id '" + id + "'");
  std::set<std::string> ref_ids;
  std::vector<std::string> unmatched;
  for (const auto& [id, text] : refs) {
    if (!ref_ids.insert(id).second) throw Error("evaluate: duplicate reference id '" + id + "'");
    if (!by_id.count(id)) unmatched.push_back(id + " (no hypothesis)");
  }
  for (const auto& [id, text] : hyps)
    if (!ref_ids.count(id)) unmatched.push_back(id + " (no reference)");
  if (!unmatched.empty()) {
    std::string msg = "evaluate: unmatched ids:";
    for (const auto& u : unmatched) msg += " " + u;
    throw Error(msg);
  }
  if (refs.empty()) throw Error("evaluate: no pairs");

  Report rep;
  for (const auto& [id, text] : refs) {
    Scores s = score(by_id.at(id), text);
    rep.rows.emplace_back(id, s);
    for (auto [acc, v] : {std::pair{&rep.mean.r1, &s.r1}, std::pair{&rep.mean.r2, &s.r2}, std::pair{&rep.mean.rl, &s.rl}}) {
      acc->p += v->p;
      acc->r += v->r;
      acc->f += v->f;
    }
  }
  const double n = static_cast<double>(rep.rows.size());
  for (Prf* acc : {&rep.mean.r1, &rep.mean.r2, &rep.mean.rl}) {
    acc->p /= n;
    acc->r /= n;
    acc->f /= n;
  }
  return rep;
}

void write_report_csv(std::ostream& os, const Report& report) {
  os << "id,r1_p,r1_r,r1_f,r2_p,r2_r,r2_f,rl_p,rl_r,rl_f\n";
  os.precision(6);
  os << std::fixed;
  const auto row = [&os](const std::string& id, const Scores& s) {
    os << id;
    for (const Prf* x : {&s.r1, &s.r2, &s.rl}) os << ',' << x->p << ',' << x->r << ',' << x->f;
    os << '\n';
  };
  for (const auto& [id, s] : report.rows) row(id, s);
  row("MEAN", report.mean);
}

std::vector<std::pair<std::string, std::string>> read_summaries(std::istream& is) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto& s = j.at("summary");
      if (!s.is_string()) throw FormatError("line " + std::to_string(lineno) + ": summary is not a string");
      out.emplace_back(j.at("id").get<std::string>(), s.get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> read_summaries_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return read_summaries(in);
}

}  // namespace mvsum::rouge
