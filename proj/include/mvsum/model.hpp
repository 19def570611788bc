#pragma once

// Multi-view encoder-decoder. One shared transformer encoder reads each
// rendered view; an LSTM over the block-token states gives a vector per view;
// each decoder layer weighs the views by a sharpened softmax over those
// vectors and mixes the per-view cross-attention outputs accordingly.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mvsum/autograd.hpp"
#include "mvsum/views.hpp"

namespace mvsum::model {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::size_t d_ff = 128;
  std::size_t max_src_len = 256;
  std::size_t max_tgt_len = 100;
  double temperature = 0.2;
  std::vector<views::ViewKind> views{views::ViewKind::topic, views::ViewKind::stage};
  std::uint64_t seed = 1;
  double init_std = 0.02;

  void validate() const;
};

enum class ParamGroup { base, aux };

// LSTM aggregator and view-importance parameters train at the auxiliary rate.
ParamGroup group_of(const std::string& param_name);

template <typename T>
struct EncodedView {
  ad::Var<T> hidden;        // tokens x d_model
  ad::Var<T> block_states;  // blocks x d_model, rows of hidden at block tokens
  ad::Var<T> view_vector;   // 1 x d_model, final LSTM state over block_states
  std::vector<std::uint8_t> key_mask;  // 1 for real tokens, 0 for padding
};

// Keys carry no bias: it would shift every score in a row equally.
struct AttentionParams {
  std::size_t wq, bq, wk, wv, bv, wo, bo;
};

struct FeedForwardParams {
  std::size_t w1, b1, w2, b2;
};

struct NormParams {
  std::size_t gain, bias;
};

struct EncoderLayer {
  AttentionParams self;
  NormParams ln1;
  FeedForwardParams ffn;
  NormParams ln2;
};

struct DecoderLayer {
  AttentionParams self;
  NormParams ln1;
  AttentionParams cross;  // shared by every view
  NormParams ln2;
  FeedForwardParams ffn;
  NormParams ln3;
  std::size_t imp_w, imp_b, imp_v;  // view importance
};

// Per-view cross-attention keys and values for every decoder layer plus the
// sharpened view weights, computed once per conversation.
template <typename T>
struct DecodeContext {
  std::vector<EncodedView<T>> views;
  std::vector<std::vector<ad::Var<T>>> keys;    // layer x view
  std::vector<std::vector<ad::Var<T>>> values;  // layer x view
  std::vector<ad::Var<T>> weights;              // layer -> 1 x K
};

template <typename T>
class MultiViewModel {
 public:
  explicit MultiViewModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  std::vector<ad::Parameter<T>>& params() { return params_; }
  const std::vector<ad::Parameter<T>>& params() const { return params_; }
  std::vector<ad::Parameter<T>*> param_ptrs();
  std::vector<ad::Parameter<T>*> param_ptrs(ParamGroup group);
  ad::Parameter<T>* find(const std::string& name);
  void zero_grad();

  // `valid_len` < tokens.size() marks the tail as padding hidden from attention.
  EncodedView<T> encode_view(ad::Tape<T>& tape, std::span<const int> tokens, std::span<const std::size_t> blk_positions,
                             std::size_t valid_len) const;
  EncodedView<T> encode_view(ad::Tape<T>& tape, const views::ViewTokenSeq& seq) const;

  // Softmax importance over view vectors for one decoder layer (1 x K), before sharpening.
  ad::Var<T> view_importance(ad::Tape<T>& tape, std::span<const ad::Var<T>> view_vectors, std::size_t layer) const;

  DecodeContext<T> prepare(ad::Tape<T>& tape, std::vector<EncodedView<T>> views) const;

  // Mixed cross-attention output for one decoder layer.
  ad::Var<T> multi_view_attention(ad::Tape<T>& tape, ad::Var<T> dec_states, const DecodeContext<T>& ctx,
                                  std::size_t layer) const;

  // Logits (L x vocab) for prev_tokens, which must start with <s>. With
  // last_only the output is the final row only.
  ad::Var<T> decode(ad::Tape<T>& tape, const DecodeContext<T>& ctx, std::span<const int> prev_tokens,
                    bool last_only = false) const;

  // Plain encoder-decoder path with one view and no importance weighting.
  ad::Var<T> decode_single_view(ad::Tape<T>& tape, const EncodedView<T>& view, std::span<const int> prev_tokens) const;

  // Sharpened per-layer weights averaged over layers.
  std::vector<double> mean_view_weights(const DecodeContext<T>& ctx) const;

 private:
  std::size_t add_param(const std::string& name, std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                        bool random, double fill = 0.0);
  AttentionParams add_attention(const std::string& prefix, std::mt19937_64& rng);
  FeedForwardParams add_ffn(const std::string& prefix, std::mt19937_64& rng);
  NormParams add_norm(const std::string& prefix, std::mt19937_64& rng);

  ad::Var<T> p(ad::Tape<T>& tape, std::size_t idx) const;
  ad::Var<T> embed(ad::Tape<T>& tape, std::span<const int> tokens) const;
  ad::Var<T> attend(ad::Tape<T>& tape, ad::Var<T> queries_in, ad::Var<T> keys, ad::Var<T> values,
                    const AttentionParams& ap, const std::vector<std::uint8_t>* mask) const;
  std::pair<ad::Var<T>, ad::Var<T>> project_kv(ad::Tape<T>& tape, ad::Var<T> memory, const AttentionParams& ap) const;
  ad::Var<T> feed_forward(ad::Tape<T>& tape, ad::Var<T> x, const FeedForwardParams& fp) const;
  ad::Var<T> norm(ad::Tape<T>& tape, ad::Var<T> x, const NormParams& np) const;
  void check_prev_tokens(std::span<const int> prev_tokens) const;
  template <typename CrossFn>
  ad::Var<T> run_decoder(ad::Tape<T>& tape, std::span<const int> prev_tokens, bool last_only, CrossFn cross) const;

  ModelConfig cfg_;
  // Filled once by the constructor; ops hold indices, never pointers.
  mutable std::vector<ad::Parameter<T>> params_;
  std::size_t tok_embed_ = 0;
  std::vector<EncoderLayer> enc_;
  std::size_t lstm_w_ih_ = 0, lstm_w_hh_ = 0, lstm_b_ = 0;
  std::vector<DecoderLayer> dec_;
  std::size_t w_out_ = 0;
  ad::Tensor<T> positions_;  // max(max_src_len, max_tgt_len) x d_model
};

// Sinusoidal position table (rows x d).
template <typename T>
ad::Tensor<T> positional_encoding(std::size_t rows, std::size_t d);

// Sum of -log P(target) over non-pad positions and the number of such positions.
template <typename T>
std::pair<ad::Var<T>, std::size_t> nll_sum(ad::Var<T> logits, std::span<const int> targets, int pad_id);

// Mean token negative log-likelihood; throws when every target is padding.
template <typename T>
ad::Var<T> nll_loss(ad::Var<T> logits, std::span<const int> targets, int pad_id);

// Central-difference check of every parameter of a miniature model
// (d_model 8, two heads, one layer each side, vocabulary 20, two views).
ModelConfig miniature_config(std::uint64_t seed, double init_std);
ad::GradCheckReport miniature_grad_check(std::uint64_t seed = 1, double init_std = 0.5, double eps = 1e-5);

extern template class MultiViewModel<float>;
extern template class MultiViewModel<double>;

}  // namespace mvsum::model
