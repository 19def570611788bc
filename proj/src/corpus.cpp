#include "mvsum/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mvsum/error.hpp"

namespace mvsum::corpus {

using nlohmann::json;

namespace {

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

bool is_word_byte(unsigned char c) {
  return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

bool is_space_byte(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

const char* const kSpecialNames[kNumSpecials] = {"<pad>", "<s>", "</s>", "<unk>", "<blk>", "<utt>"};

}  // namespace

Conversation parse_raw(std::string_view raw, std::string id) {
  Conversation conv;
  conv.id = std::move(id);
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos <= raw.size()) {
    std::size_t nl = raw.find('\n', pos);
    if (nl == std::string_view::npos) nl = raw.size();
    std::string_view line = trim(raw.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty()) continue;

    const std::size_t colon = line.find(':');
    std::string_view speaker = colon == std::string_view::npos ? std::string_view{} : trim(line.substr(0, colon));
    if (speaker.empty()) {
      if (conv.utterances.empty())
        throw FormatError("conversation '" + conv.id + "' line " + std::to_string(line_no) +
                          ": first line has no 'NAME: TEXT' form");
      std::string& text = conv.utterances.back().text;
      if (!text.empty()) text += ' ';
      text += line;
      continue;
    }
    conv.utterances.push_back({std::string(speaker), std::string(trim(line.substr(colon + 1)))});
  }
  if (conv.utterances.empty()) throw FormatError("conversation '" + conv.id + "': empty input");
  return conv;
}

std::string to_raw(const Conversation& conv) {
  std::string out;
  for (const Utterance& u : conv.utterances) {
    if (!out.empty()) out += '\n';
    out += u.speaker;
    out += ": ";
    out += u.text;
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space_byte(c)) {
      ++i;
    } else if (is_word_byte(c)) {
      std::string tok;
      while (i < text.size() && is_word_byte(static_cast<unsigned char>(text[i]))) {
        char ch = text[i++];
        if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
        tok += ch;
      }
      tokens.push_back(std::move(tok));
    } else {
      tokens.emplace_back(1, static_cast<char>(c));
      ++i;
    }
  }
  return tokens;
}

Vocab::Vocab() {
  for (const char* name : kSpecialNames) add(name);
}

Vocab Vocab::from_tokens(std::span<const std::string> tokens) {
  Vocab v;
  for (const std::string& t : tokens) {
    if (v.contains(t)) throw FormatError("duplicate vocabulary token '" + t + "'");
    v.add(t);
  }
  return v;
}

void Vocab::add(std::string token) {
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(std::move(token));
}

int Vocab::encode(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> Vocab::encode(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const std::string& t : tokens) ids.push_back(encode(t));
  return ids;
}

const std::string& Vocab::decode(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw FormatError("token id " + std::to_string(id) + " outside vocabulary of size " +
                      std::to_string(tokens_.size()));
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

Vocab build_vocab(std::span<const Conversation> corpus, std::size_t max_size, std::size_t min_freq) {
  if (corpus.empty()) throw Error("build_vocab: empty corpus");
  if (max_size <= static_cast<std::size_t>(kNumSpecials)) throw Error("build_vocab: max_size must exceed 6");
  if (min_freq < 1) throw Error("build_vocab: min_freq must be >= 1");

  std::map<std::string, std::size_t> freq;
  const auto count = [&](std::string_view text) {
    for (std::string& t : tokenize(text)) ++freq[std::move(t)];
  };
  for (const Conversation& c : corpus) {
    for (const Utterance& u : c.utterances) {
      count(u.speaker);
      ++freq[":"];
      count(u.text);
    }
    if (c.summary) count(*c.summary);
  }

  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  std::vector<std::string> admitted;
  for (auto& [tok, n] : ranked) {
    if (admitted.size() + kNumSpecials >= max_size) break;
    if (n < min_freq) break;
    admitted.push_back(tok);
  }
  return Vocab::from_tokens(admitted);
}

Moments moments(std::span<const double> values) {
  Moments m;
  m.count = values.size();
  if (values.empty()) return m;
  double sum = 0;
  m.min = values.front();
  m.max = values.front();
  for (double v : values) {
    sum += v;
    m.min = std::min(m.min, v);
    m.max = std::max(m.max, v);
  }
  m.mean = sum / static_cast<double>(values.size());
  double ss = 0;
  for (double v : values) ss += (v - m.mean) * (v - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(values.size()));
  // Exact equality keeps std == 0 iff all values are equal.
  if (m.min == m.max) {
    m.std = 0;
    m.mean = m.min;
  }
  return m;
}

CorpusStats corpus_stats(std::span<const std::pair<std::string, std::vector<Conversation>>> splits) {
  if (splits.empty()) throw Error("corpus_stats: no splits given");
  CorpusStats out;
  for (const auto& [name, convs] : splits) {
    std::vector<double> participants, turns, reflen;
    for (const Conversation& c : convs) {
      std::set<std::string> speakers;
      for (const Utterance& u : c.utterances) speakers.insert(u.speaker);
      participants.push_back(static_cast<double>(speakers.size()));
      turns.push_back(static_cast<double>(c.size()));
      if (c.summary) reflen.push_back(static_cast<double>(tokenize(*c.summary).size()));
    }
    out.push_back({name, convs.size(), moments(participants), moments(turns), moments(reflen)});
  }
  return out;
}

void write_stats_csv(std::ostream& os, const CorpusStats& stats) {
  os << "split,conversations,participants_mean,participants_std,participants_min,participants_max,"
        "turns_mean,turns_std,turns_min,turns_max,reflen_mean,reflen_std,reflen_min,reflen_max\n";
  const auto put = [&](const Moments& m) { os << ',' << m.mean << ',' << m.std << ',' << m.min << ',' << m.max; };
  for (const SplitStats& s : stats) {
    os << s.split << ',' << s.conversations;
    put(s.participants);
    put(s.turns);
    put(s.reference_length);
    os << '\n';
  }
}

namespace {

Conversation from_canonical(const json& j) {
  Conversation c;
  c.id = j.at("id").get<std::string>();
  for (const json& u : j.at("dialogue")) {
    Utterance utt{u.at("speaker").get<std::string>(), u.at("text").get<std::string>()};
    if (utt.speaker.empty() || utt.speaker.find('\n') != std::string::npos)
      throw FormatError("conversation '" + c.id + "': invalid speaker name");
    c.utterances.push_back(std::move(utt));
  }
  if (c.utterances.empty()) throw FormatError("conversation '" + c.id + "': no utterances");
  if (j.contains("summary") && !j.at("summary").is_null()) c.summary = j.at("summary").get<std::string>();
  return c;
}

void check_unique_ids(const std::vector<Conversation>& convs) {
  std::set<std::string> seen;
  for (const Conversation& c : convs)
    if (!seen.insert(c.id).second) throw FormatError("duplicate conversation id '" + c.id + "'");
}

}  // namespace

std::vector<Conversation> read_jsonl(std::istream& is) {
  std::vector<Conversation> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(from_canonical(json::parse(line)));
    } catch (const json::exception& e) {
      throw FormatError("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  check_unique_ids(out);
  return out;
}

std::vector<Conversation> read_jsonl_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  return read_jsonl(in);
}

void write_jsonl(std::ostream& os, std::span<const Conversation> convs) {
  for (const Conversation& c : convs) {
    json dialogue = json::array();
    for (const Utterance& u : c.utterances) dialogue.push_back({{"speaker", u.speaker}, {"text", u.text}});
    json j = {{"id", c.id}, {"dialogue", std::move(dialogue)}};
    j["summary"] = c.summary ? json(*c.summary) : json(nullptr);
    os << j.dump() << '\n';
  }
}

std::vector<Conversation> read_samsum_json(std::istream& is) {
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::exception& e) {
    throw FormatError(std::string("SAMSum JSON: ") + e.what());
  }
  if (!doc.is_array()) throw FormatError("SAMSum JSON: top level must be an array");
  std::vector<Conversation> out;
  for (const json& rec : doc) {
    std::string id = rec.at("id").is_string() ? rec.at("id").get<std::string>() : rec.at("id").dump();
    Conversation c = parse_raw(rec.at("dialogue").get<std::string>(), std::move(id));
    if (rec.contains("summary") && rec.at("summary").is_string()) c.summary = rec.at("summary").get<std::string>();
    out.push_back(std::move(c));
  }
  check_unique_ids(out);
  return out;
}

std::vector<Conversation> read_corpus_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path + "'");
  char first = 0;
  while (in.get(first) && is_space_byte(static_cast<unsigned char>(first))) {
  }
  in.clear();
  in.seekg(0);
  return first == '[' ? read_samsum_json(in) : read_jsonl(in);
}

}  // namespace mvsum::corpus
