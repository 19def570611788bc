// Porter's 1980 suffix-stripping algorithm, original rule set.

#include <algorithm>
#include <array>
#include <string>
#include <string_view>

#include "mvsum/rouge.hpp"

namespace mvsum::rouge {

namespace {

class Stemmer {
 public:
  explicit Stemmer(std::string w) : b_(std::move(w)) {}

  std::string run() {
    step1a();
    step1b();
    step1c();
    step2();
    step3();
    step4();
    step5();
    return b_;
  }

 private:
  bool consonant(std::size_t i) const {
    switch (b_[i]) {
      case 'a': case 'e': case 'i': case 'o': case 'u': return false;
      case 'y': return i == 0 || !consonant(i - 1);
      default: return true;
    }
  }

  // Number of VC sequences in b_[0, len).
  std::size_t measure(std::size_t len) const {
    std::size_t m = 0, i = 0;
    while (i < len && consonant(i)) ++i;
    while (i < len) {
      while (i < len && !consonant(i)) ++i;
      if (i >= len) break;
      while (i < len && consonant(i)) ++i;
      ++m;
    }
    return m;
  }

  bool has_vowel(std::size_t len) const {
    for (std::size_t i = 0; i < len; ++i)
      if (!consonant(i)) return true;
    return false;
  }

  bool double_consonant(std::size_t len) const {
    return len >= 2 && b_[len - 1] == b_[len - 2] && consonant(len - 1);
  }

  // consonant-vowel-consonant ending, last consonant not w, x or y
  bool cvc(std::size_t len) const {
    if (len < 3 || !consonant(len - 1) || consonant(len - 2) || !consonant(len - 3)) return false;
    const char c = b_[len - 1];
    return c != 'w' && c != 'x' && c != 'y';
  }

  bool ends(std::string_view s) const { return b_.size() >= s.size() && std::string_view(b_).ends_with(s); }
  std::size_t stem_len(std::string_view suffix) const { return b_.size() - suffix.size(); }
  void replace(std::string_view suffix, std::string_view with) {
    b_.resize(stem_len(suffix));
    b_ += with;
  }

  struct Rule {
    std::string_view suffix, replacement;
  };

  // Longest matching suffix decides; it is replaced when the stem measure exceeds min_m.
  template <std::size_t N>
  void apply_longest(const std::array<Rule, N>& rules, std::size_t min_m) {
    const Rule* best = nullptr;
    for (const Rule& r : rules)
      if (ends(r.suffix) && (!best || r.suffix.size() > best->suffix.size())) best = &r;
    if (best && measure(stem_len(best->suffix)) > min_m) replace(best->suffix, best->replacement);
  }

  void step1a() {
    if (ends("sses")) replace("sses", "ss");
    else if (ends("ies")) replace("ies", "i");
    else if (ends("ss")) {
    } else if (ends("s")) replace("s", "");
  }

  void step1b() {
    if (ends("eed")) {
      if (measure(stem_len("eed")) > 0) replace("eed", "ee");
      return;
    }
    std::string_view suf;
    if (ends("ed") && has_vowel(stem_len("ed"))) suf = "ed";
    else if (ends("ing") && has_vowel(stem_len("ing"))) suf = "ing";
    else return;
    replace(suf, "");
    if (ends("at") || ends("bl") || ends("iz")) {
      b_ += 'e';
    } else if (double_consonant(b_.size())) {
      const char c = b_.back();
      if (c != 'l' && c != 's' && c != 'z') b_.pop_back();
    } else if (measure(b_.size()) == 1 && cvc(b_.size())) {
      b_ += 'e';
    }
  }

  void step1c() {
    if (ends("y") && has_vowel(stem_len("y"))) b_.back() = 'i';
  }

  void step2() {
    static constexpr std::array<Rule, 20> rules{{{"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"},
                                                 {"anci", "ance"},   {"izer", "ize"},    {"abli", "able"},
                                                 {"alli", "al"},     {"entli", "ent"},   {"eli", "e"},
                                                 {"ousli", "ous"},   {"ization", "ize"}, {"ation", "ate"},
                                                 {"ator", "ate"},    {"alism", "al"},    {"iveness", "ive"},
                                                 {"fulness", "ful"}, {"ousness", "ous"}, {"aliti", "al"},
                                                 {"iviti", "ive"},   {"biliti", "ble"}}};
    apply_longest(rules, 0);
  }

  void step3() {
    static constexpr std::array<Rule, 7> rules{{{"icate", "ic"}, {"ative", ""}, {"alize", "al"}, {"iciti", "ic"},
                                                {"ical", "ic"}, {"ful", ""}, {"ness", ""}}};
    apply_longest(rules, 0);
  }

  void step4() {
    static constexpr std::array<std::string_view, 19> suffixes{"al",  "ance", "ence", "er",  "ic",  "able", "ible",
                                                               "ant", "ement", "ment", "ent", "ion", "ou",  "ism",
                                                               "ate", "iti",  "ous", "ive", "ize"};
    std::string_view best;
    for (std::string_view s : suffixes)
      if (ends(s) && s.size() > best.size()) best = s;
    if (best.empty()) return;
    const std::size_t len = stem_len(best);
    if (measure(len) <= 1) return;
    if (best == "ion" && (len == 0 || (b_[len - 1] != 's' && b_[len - 1] != 't'))) return;
    b_.resize(len);
  }

  void step5() {
    if (ends("e")) {
      const std::size_t len = stem_len("e");
      const std::size_t m = measure(len);
      if (m > 1 || (m == 1 && !cvc(len))) b_.pop_back();
    }
    if (ends("ll") && measure(b_.size()) > 1) b_.pop_back();
  }

  std::string b_;
};

}  // namespace

std::string porter_stem(std::string_view token) {
  if (token.size() <= 2 || !std::all_of(token.begin(), token.end(), [](char c) { return c >= 'a' && c <= 'z'; }))
    return std::string(token);
  return Stemmer(std::string(token)).run();
}

}  // namespace mvsum::rouge
