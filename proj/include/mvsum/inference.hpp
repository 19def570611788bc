#pragma once

// Length-normalised beam search over any next-token log-probability function,
// and the end-to-end summarize path on top of a trained model.

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mvsum/corpus.hpp"
#include "mvsum/embed.hpp"
#include "mvsum/model.hpp"
#include "mvsum/pipeline.hpp"

namespace mvsum::inference {

struct BeamOptions {
  std::size_t beam = 4;
  std::size_t max_len = 100;  // generated tokens, </s> included
  int bos = corpus::kBos;
  int eos = corpus::kEos;
};

// Log-probabilities over the vocabulary for the token following `prefix`
// (which starts with <s>).
using StepFn = std::function<std::vector<double>(std::span<const int> prefix)>;

struct Hypothesis {
  std::vector<int> tokens;  // generated tokens, without <s>
  double log_prob = 0;
  double score = 0;         // log_prob / tokens.size()
  bool closed = false;
};

// Scores of the hypotheses kept after every expansion step, best first.
using BeamTrace = std::vector<std::vector<double>>;

// Ties rank the smaller token id first, then the better-ranked parent.
Hypothesis beam_search(const StepFn& step, const BeamOptions& opts, BeamTrace* trace = nullptr);

// Argmax decoding; ties go to the smaller token id.
std::vector<int> greedy(const StepFn& step, const BeamOptions& opts);

// Step function backed by a prepared decoder context. The tape must be
// non-recording; nodes created per step are dropped again.
template <typename T>
StepFn model_step(const model::MultiViewModel<T>& m, ad::Tape<T>& tape, const model::DecodeContext<T>& ctx);

// Space-joined tokens with <s> and </s> removed.
std::string detokenize(std::span<const int> tokens, const corpus::Vocab& vocab);

struct Summary {
  std::string text;
  std::vector<int> tokens;
  std::vector<double> view_weights;  // sharpened, averaged over decoder layers
};

Summary summarize(const corpus::Conversation& conv, const model::MultiViewModel<float>& m, const corpus::Vocab& vocab,
                  const embed::EmbeddingMatrix* utterance_vectors, const pipeline::Segmenters& seg,
                  const BeamOptions& opts);

}  // namespace mvsum::inference
