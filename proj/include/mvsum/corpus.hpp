#pragma once

// Dialogue ingestion: raw "NAME: TEXT" parsing, tokenization, vocabulary and
// dataset statistics.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mvsum::corpus {

struct Utterance {
  std::string speaker;
  std::string text;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct Conversation {
  std::string id;
  std::vector<Utterance> utterances;
  std::optional<std::string> summary;

  std::size_t size() const { return utterances.size(); }
};

// Parses one SAMSum-style dialogue. The first colon on a line splits speaker
// from text; colon-free lines continue the previous utterance.
Conversation parse_raw(std::string_view raw, std::string id);

// Inverse of parse_raw for well-formed conversations: "speaker: text" lines.
std::string to_raw(const Conversation& conv);

// Lowercased maximal alphanumeric runs plus single punctuation characters.
// Bytes >= 0x80 count as alphanumeric so UTF-8 words stay whole.
std::vector<std::string> tokenize(std::string_view text);

enum SpecialId : int { kPad = 0, kBos = 1, kEos = 2, kUnk = 3, kBlk = 4, kUtt = 5 };
inline constexpr int kNumSpecials = 6;

class Vocab {
 public:
  Vocab();  // specials only

  // Tokens in id order past the specials.
  static Vocab from_tokens(std::span<const std::string> tokens);

  int encode(std::string_view token) const;
  std::vector<int> encode(std::span<const std::string> tokens) const;
  const std::string& decode(int id) const;
  bool contains(std::string_view token) const;
  std::size_t size() const { return tokens_.size(); }

  // Full id-ordered token table including specials.
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Counts speaker tokens, ":", utterance text and summary tokens.
Vocab build_vocab(std::span<const Conversation> corpus, std::size_t max_size, std::size_t min_freq);

struct Moments {
  std::size_t count = 0;
  double mean = 0, std = 0, min = 0, max = 0;
};

// Population moments; an empty sample gives all zeros.
Moments moments(std::span<const double> values);

struct SplitStats {
  std::string split;
  std::size_t conversations = 0;
  Moments participants;
  Moments turns;
  Moments reference_length;  // conversations without a summary are excluded
};

using CorpusStats = std::vector<SplitStats>;

CorpusStats corpus_stats(std::span<const std::pair<std::string, std::vector<Conversation>>> splits);

void write_stats_csv(std::ostream& os, const CorpusStats& stats);

// Canonical JSONL: {"id", "dialogue": [{"speaker","text"}...], "summary"}.
std::vector<Conversation> read_jsonl(std::istream& is);
std::vector<Conversation> read_jsonl_file(const std::string& path);
void write_jsonl(std::ostream& os, std::span<const Conversation> convs);

// Raw SAMSum release: a JSON array of {"id", "dialogue": raw string, "summary"}.
std::vector<Conversation> read_samsum_json(std::istream& is);

// Accepts either format, sniffing the first non-space character.
std::vector<Conversation> read_corpus_file(const std::string& path);

}  // namespace mvsum::corpus
