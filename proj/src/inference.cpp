#include "mvsum/inference.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "mvsum/error.hpp"

namespace mvsum::inference {

namespace {

struct Candidate {
  double score;
  int token;
  std::size_t parent;
  double log_prob;
};

bool better(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.token != b.token) return a.token < b.token;
  return a.parent < b.parent;
}

std::vector<int> with_bos(int bos, const std::vector<int>& tokens) {
  std::vector<int> prefix{bos};
  prefix.insert(prefix.end(), tokens.begin(), tokens.end());
  return prefix;
}

}  // namespace

Hypothesis beam_search(const StepFn& step, const BeamOptions& opts, BeamTrace* trace) {
  if (opts.beam < 1) throw Error("beam_search: beam must be at least 1");
  if (opts.max_len < 1) throw Error("beam_search: max_len must be at least 1");
  std::vector<Hypothesis> open{Hypothesis{}};
  std::vector<Hypothesis> closed;
  for (std::size_t len = 1; len <= opts.max_len && !open.empty() && closed.size() < opts.beam; ++len) {
    std::vector<Candidate> cands;
    for (std::size_t r = 0; r < open.size(); ++r) {
      const std::vector<double> lp = step(with_bos(opts.bos, open[r].tokens));
      for (std::size_t tok = 0; tok < lp.size(); ++tok) {
        if (std::isnan(lp[tok])) throw NumericError("beam_search: NaN log-probability");
        if (lp[tok] == -INFINITY) continue;
        const double total = open[r].log_prob + lp[tok];
        cands.push_back({total / static_cast<double>(len), static_cast<int>(tok), r, total});
      }
    }
    const std::size_t keep = std::min(opts.beam, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), better);
    cands.resize(keep);
    std::vector<Hypothesis> next;
    if (trace) trace->emplace_back();
    for (const Candidate& c : cands) {
      Hypothesis h = open[c.parent];
      h.tokens.push_back(c.token);
      h.log_prob = c.log_prob;
      h.score = c.score;
      h.closed = c.token == opts.eos || len == opts.max_len;
      if (trace) trace->back().push_back(h.score);
      (h.closed ? closed : next).push_back(std::move(h));
    }
    open = std::move(next);
  }
  // Stable: among equal scores the hypothesis closed first wins.
  const auto& pool = closed.empty() ? open : closed;
  if (pool.empty()) throw Error("beam_search: every continuation has zero probability");
  return *std::max_element(pool.begin(), pool.end(),
                           [](const Hypothesis& a, const Hypothesis& b) { return a.score < b.score; });
}

std::vector<int> greedy(const StepFn& step, const BeamOptions& opts) {
  std::vector<int> out;
  while (out.size() < opts.max_len) {
    const std::vector<double> lp = step(with_bos(opts.bos, out));
    if (lp.empty()) throw Error("greedy: empty distribution");
    out.push_back(static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin()));
    if (out.back() == opts.eos) break;
  }
  return out;
}

template <typename T>
StepFn model_step(const model::MultiViewModel<T>& m, ad::Tape<T>& tape, const model::DecodeContext<T>& ctx) {
  if (tape.recording()) throw Error("model_step: tape must not record");
  return [&m, &tape, &ctx](std::span<const int> prefix) {
    const std::size_t mark = tape.size();
    const auto& row = ad::log_softmax(m.decode(tape, ctx, prefix, true)).value();
    std::vector<double> lp(row.data.begin(), row.data.end());
    tape.truncate(mark);
    return lp;
  };
}

std::string detokenize(std::span<const int> tokens, const corpus::Vocab& vocab) {
  std::string out;
  for (int t : tokens) {
    if (t == corpus::kBos || t == corpus::kEos) continue;
    if (!out.empty()) out += ' ';
    out += vocab.decode(t);
  }
  return out;
}

Summary summarize(const corpus::Conversation& conv, const model::MultiViewModel<float>& m, const corpus::Vocab& vocab,
                  const embed::EmbeddingMatrix* e, const pipeline::Segmenters& seg, const BeamOptions& opts) {
  const auto& cfg = m.config();
  const auto seqs = pipeline::render_views(conv, cfg.views, e, seg, vocab, cfg.max_src_len);
  ad::Tape<float> tape(false);
  std::vector<model::EncodedView<float>> enc;
  for (const auto& s : seqs) enc.push_back(m.encode_view(tape, s));
  const auto ctx = m.prepare(tape, std::move(enc));
  BeamOptions o = opts;
  o.max_len = std::min(o.max_len, cfg.max_tgt_len);
  Summary out;
  out.tokens = beam_search(model_step(m, tape, ctx), o).tokens;
  out.text = detokenize(out.tokens, vocab);
  out.view_weights = m.mean_view_weights(ctx);
  return out;
}

template StepFn model_step<float>(const model::MultiViewModel<float>&, ad::Tape<float>&,
                                  const model::DecodeContext<float>&);
template StepFn model_step<double>(const model::MultiViewModel<double>&, ad::Tape<double>&,
                                   const model::DecodeContext<double>&);

}  // namespace mvsum::inference
