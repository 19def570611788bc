#pragma once

// The four conversation views and their rendering into encoder input: every
// block opens with a shared block token, every utterance with an utterance
// token followed by "speaker : text".

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mvsum/corpus.hpp"
#include "mvsum/segmentation.hpp"

namespace mvsum::views {

enum class ViewKind { global, discrete, topic, stage };

std::string_view to_string(ViewKind kind);
ViewKind parse_view_kind(std::string_view name);

// Comma-separated kind list, e.g. "topic,stage". Rejects empty lists and duplicates.
std::vector<ViewKind> parse_view_list(std::string_view names);
std::string join_view_list(const std::vector<ViewKind>& kinds);

struct View {
  ViewKind kind;
  Segmentation segmentation;
};

// Topic and stage views take `seg` verbatim and require it; global and
// discrete views are derived from the utterance count.
View build_view(const corpus::Conversation& conv, ViewKind kind, const std::optional<Segmentation>& seg = std::nullopt);

struct ViewTokenSeq {
  ViewKind kind;
  std::vector<int> tokens;
  std::vector<std::size_t> blk_positions;
};

inline constexpr std::size_t kDefaultMaxSrcLen = 256;

ViewTokenSeq render_view(const View& view, const corpus::Conversation& conv, const corpus::Vocab& vocab,
                         std::size_t max_src_len = kDefaultMaxSrcLen);

// Debug export line: {"id", "view", "tokens", "blk_positions"}.
std::string to_json_line(const std::string& id, const ViewTokenSeq& seq);

// Segmentation export line: {"id", "view", "blocks": [[start,end],...]}, 1-based inclusive.
std::string blocks_json_line(const std::string& id, ViewKind kind, const Segmentation& seg);

}  // namespace mvsum::views
