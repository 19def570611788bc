#include "mvsum/views.hpp"

#include <algorithm>
#include <string>

#include "json.hpp"
#include "mvsum/error.hpp"

namespace mvsum::views {

std::string_view to_string(ViewKind kind) {
  switch (kind) {
    case ViewKind::global: return "global";
    case ViewKind::discrete: return "discrete";
    case ViewKind::topic: return "topic";
    case ViewKind::stage: return "stage";
  }
  return "?";
}

ViewKind parse_view_kind(std::string_view name) {
  for (ViewKind k : {ViewKind::global, ViewKind::discrete, ViewKind::topic, ViewKind::stage})
    if (to_string(k) == name) return k;
  throw Error("unknown view kind '" + std::string(name) + "' (expected global, discrete, topic or stage)");
}

std::vector<ViewKind> parse_view_list(std::string_view names) {
  std::vector<ViewKind> kinds;
  std::size_t pos = 0;
  while (pos <= names.size()) {
    std::size_t comma = names.find(',', pos);
    if (comma == std::string_view::npos) comma = names.size();
    const ViewKind k = parse_view_kind(names.substr(pos, comma - pos));
    if (std::find(kinds.begin(), kinds.end(), k) != kinds.end())
      throw Error("view kind '" + std::string(to_string(k)) + "' listed twice");
    kinds.push_back(k);
    pos = comma + 1;
  }
  return kinds;
}

std::string join_view_list(const std::vector<ViewKind>& kinds) {
  std::string out;
  for (ViewKind k : kinds) {
    if (!out.empty()) out += ',';
    out += to_string(k);
  }
  return out;
}

View build_view(const corpus::Conversation& conv, ViewKind kind, const std::optional<Segmentation>& seg) {
  const std::size_t m = conv.size();
  if (m == 0) throw Error("build_view: conversation '" + conv.id + "' has no utterances");
  View v{kind, {}};
  switch (kind) {
    case ViewKind::global:
      v.segmentation = {{0, m - 1}};
      break;
    case ViewKind::discrete:
      for (std::size_t i = 0; i < m; ++i) v.segmentation.push_back({i, i});
      break;
    case ViewKind::topic:
    case ViewKind::stage:
      if (!seg) throw Error("build_view: " + std::string(to_string(kind)) + " view requires a segmentation");
      if (!is_partition(*seg, m))
        throw Error("build_view: segmentation does not partition the " + std::to_string(m) + " utterances of '" +
                    conv.id + "'");
      v.segmentation = *seg;
      break;
  }
  return v;
}

ViewTokenSeq render_view(const View& view, const corpus::Conversation& conv, const corpus::Vocab& vocab,
                         std::size_t max_src_len) {
  ViewTokenSeq seq{view.kind, {}, {}};
  const int colon = vocab.encode(":");
  for (const Block& b : view.segmentation) {
    seq.blk_positions.push_back(seq.tokens.size());
    seq.tokens.push_back(corpus::kBlk);
    for (std::size_t i = b.start; i <= b.end; ++i) {
      const corpus::Utterance& u = conv.utterances.at(i);
      seq.tokens.push_back(corpus::kUtt);
      for (const std::string& t : corpus::tokenize(u.speaker)) seq.tokens.push_back(vocab.encode(t));
      seq.tokens.push_back(colon);
      for (const std::string& t : corpus::tokenize(u.text)) seq.tokens.push_back(vocab.encode(t));
    }
  }
  if (seq.tokens.empty()) throw Error("render_view: no tokens for '" + conv.id + "'");
  if (seq.tokens.size() > max_src_len) {
    seq.tokens.resize(max_src_len);
    std::erase_if(seq.blk_positions, [&](std::size_t p) { return p >= max_src_len; });
  }
  if (seq.tokens.empty()) throw Error("render_view: truncation left no tokens");
  return seq;
}

std::string to_json_line(const std::string& id, const ViewTokenSeq& seq) {
  nlohmann::json j = {{"id", id}, {"view", to_string(seq.kind)}, {"tokens", seq.tokens}, {"blk_positions", seq.blk_positions}};
  return j.dump();
}

std::string blocks_json_line(const std::string& id, ViewKind kind, const Segmentation& seg) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const Block& b : seg) blocks.push_back({b.start + 1, b.end + 1});
  return nlohmann::json{{"id", id}, {"view", to_string(kind)}, {"blocks", std::move(blocks)}}.dump();
}

}  // namespace mvsum::views
