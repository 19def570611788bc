#pragma once

// View extraction for a conversation: derives each requested segmentation
// (C99 for topics, the stage HMM for stages) and renders it to tokens.

#include <optional>
#include <span>
#include <vector>

#include "mvsum/corpus.hpp"
#include "mvsum/embed.hpp"
#include "mvsum/stagehmm.hpp"
#include "mvsum/topicseg.hpp"
#include "mvsum/views.hpp"

namespace mvsum::pipeline {

struct Segmenters {
  std::optional<topicseg::C99Config> c99;
  std::optional<stage::HmmModel> hmm;
};

// `utterance_vectors` is required whenever topic or stage views are requested.
std::vector<views::View> extract_views(const corpus::Conversation& conv, std::span<const views::ViewKind> kinds,
                                       const embed::EmbeddingMatrix* utterance_vectors, const Segmenters& seg);

std::vector<views::ViewTokenSeq> render_views(const corpus::Conversation& conv, std::span<const views::ViewKind> kinds,
                                              const embed::EmbeddingMatrix* utterance_vectors, const Segmenters& seg,
                                              const corpus::Vocab& vocab, std::size_t max_src_len);

}  // namespace mvsum::pipeline
