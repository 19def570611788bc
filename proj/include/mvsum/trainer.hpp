#pragma once

// Teacher-forced training with two Adam parameter groups, global gradient
// clipping, a flat key = value config format and the memorisation smoke run.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mvsum/corpus.hpp"
#include "mvsum/embed.hpp"
#include "mvsum/model.hpp"
#include "mvsum/pipeline.hpp"

namespace mvsum::trainer {

struct TrainConfig {
  double base_lr = 1e-3;
  double aux_lr = 3e-3;
  std::size_t batch_size = 8;
  std::size_t max_steps = 2000;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;
  std::size_t eval_every = 0;  // 0 = only at the end
  bool shuffle = true;         // reshuffle the example order every epoch

  void validate() const;
};

struct Example {
  std::string id;
  std::vector<views::ViewTokenSeq> views;
  std::vector<int> summary;  // summary tokens without <s> / </s>
};

// Decoder input (<s> + summary) and targets (summary + </s>), truncated so
// both fit max_tgt_len.
std::pair<std::vector<int>, std::vector<int>> teacher_forcing_pair(std::span<const int> summary, std::size_t max_tgt_len);

std::vector<Example> make_examples(std::span<const corpus::Conversation> convs, std::span<const views::ViewKind> kinds,
                                   const embed::EmbeddingTable& vectors, const pipeline::Segmenters& seg,
                                   const corpus::Vocab& vocab, const model::ModelConfig& cfg);

struct StepRecord {
  std::size_t step = 0;
  double loss = 0;
  double grad_norm = 0;  // before clipping
};

// Returning false stops training after the current step.
using StepCallback = std::function<bool(const StepRecord&)>;

// Rescales all gradients to at most max_norm in global L2 norm; returns the norm before scaling.
template <typename T>
double clip_gradients(std::span<ad::Parameter<T>* const> params, double max_norm);

// Token-mean loss over a batch, built on `tape`.
template <typename T>
ad::Var<T> batch_loss(ad::Tape<T>& tape, const model::MultiViewModel<T>& m, std::span<const Example* const> batch);

template <typename T>
std::vector<StepRecord> train(model::MultiViewModel<T>& m, std::span<const Example> data, const TrainConfig& cfg,
                              const StepCallback& on_step = {});

// Fraction of target tokens whose teacher-forced argmax is correct.
template <typename T>
double token_accuracy(const model::MultiViewModel<T>& m, std::span<const Example> data);

template <typename T>
double mean_loss(const model::MultiViewModel<T>& m, std::span<const Example> data);

void write_loss_csv(std::ostream& os, std::span<const StepRecord> curve);

// '#' starts a comment; blank lines are skipped; later keys win.
std::map<std::string, std::string> parse_key_values(std::istream& is);
std::map<std::string, std::string> parse_key_values_file(const std::string& path);

// Applies recognised training and model keys; throws on unknown keys or bad values.
void apply_config(const std::map<std::string, std::string>& kv, TrainConfig& train, model::ModelConfig& model);

// Template dialogues in which one speaker arranges to meet another at a place;
// the summary is "X will meet Y at the Z .".
std::vector<corpus::Conversation> synthetic_dialogues(std::size_t n, std::uint64_t seed);

struct SmokeOptions {
  std::size_t pairs = 10;
  std::vector<views::ViewKind> views{views::ViewKind::topic, views::ViewKind::stage};
  std::size_t max_steps = 2000;
  double target_accuracy = 0.99;
  double target_loss = 0.1;
  std::uint64_t seed = 7;
  std::size_t eval_every = 25;
};

struct SmokeReport {
  bool passed = false;
  std::size_t steps = 0;
  double final_loss = 0;   // mean teacher-forced loss over all pairs
  double accuracy = 0;
  std::vector<StepRecord> curve;
  std::vector<corpus::Conversation> corpus;
  std::vector<Example> examples;
  corpus::Vocab vocab;
  embed::EmbeddingTable vectors;
  pipeline::Segmenters segmenters;
  std::unique_ptr<model::MultiViewModel<float>> model;
};

// Trains on a tiny synthetic set until accuracy and loss targets hold (checked
// every eval_every steps) or max_steps is reached.
SmokeReport overfit_smoke(const SmokeOptions& opts);

}  // namespace mvsum::trainer
