#include "mvsum/pipeline.hpp"

#include <string>

#include "mvsum/error.hpp"

namespace mvsum::pipeline {

std::vector<views::View> extract_views(const corpus::Conversation& conv, std::span<const views::ViewKind> kinds,
                                       const embed::EmbeddingMatrix* e, const Segmenters& seg) {
  std::vector<views::View> out;
  for (views::ViewKind kind : kinds) {
    std::optional<Segmentation> s;
    if (kind == views::ViewKind::topic || kind == views::ViewKind::stage) {
      if (!e) throw Error("no utterance vectors for '" + conv.id + "' (needed by the " + std::string(to_string(kind)) + " view)");
      if (kind == views::ViewKind::topic) {
        if (!seg.c99) throw Error("topic view requested without a C99 configuration");
        s = topicseg::topic_view(conv, *e, *seg.c99);
      } else {
        if (!seg.hmm) throw Error("stage view requested without a stage HMM");
        s = stage::stage_view(conv, *e, *seg.hmm);
      }
    }
    out.push_back(views::build_view(conv, kind, s));
  }
  return out;
}

std::vector<views::ViewTokenSeq> render_views(const corpus::Conversation& conv, std::span<const views::ViewKind> kinds,
                                              const embed::EmbeddingMatrix* e, const Segmenters& seg,
                                              const corpus::Vocab& vocab, std::size_t max_src_len) {
  std::vector<views::ViewTokenSeq> out;
  for (const views::View& v : extract_views(conv, kinds, e, seg))
    out.push_back(views::render_view(v, conv, vocab, max_src_len));
  return out;
}

}  // namespace mvsum::pipeline
