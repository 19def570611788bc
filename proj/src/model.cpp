#include "mvsum/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "mvsum/corpus.hpp"
#include "mvsum/error.hpp"

namespace mvsum::model {

using ad::Tape;
using ad::Tensor;
using ad::Var;

void ModelConfig::validate() const {
  if (vocab_size <= static_cast<std::size_t>(corpus::kNumSpecials))
    throw Error("model config: vocab_size must exceed the special-token count");
  if (d_model == 0 || heads == 0 || d_model % heads != 0)
    throw Error("model config: d_model (" + std::to_string(d_model) + ") must be a positive multiple of heads (" +
                std::to_string(heads) + ")");
  if (enc_layers == 0 || dec_layers == 0 || d_ff == 0) throw Error("model config: layer counts and d_ff must be positive");
  if (max_src_len == 0 || max_tgt_len < 2) throw Error("model config: max_src_len >= 1 and max_tgt_len >= 2 required");
  if (!(temperature > 0) || !std::isfinite(temperature)) throw Error("model config: temperature must be positive");
  if (views.empty() || views.size() > 4) throw Error("model config: need 1 to 4 view kinds");
  if (std::set<views::ViewKind>(views.begin(), views.end()).size() != views.size())
    throw Error("model config: duplicate view kind");
  if (!(init_std > 0)) throw Error("model config: init_std must be positive");
}

ParamGroup group_of(const std::string& name) {
  return name.starts_with("lstm.") || name.starts_with("mv.") ? ParamGroup::aux : ParamGroup::base;
}

template <typename T>
Tensor<T> positional_encoding(std::size_t rows, std::size_t d) {
  Tensor<T> pe(rows, d);
  for (std::size_t pos = 0; pos < rows; ++pos)
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe(pos, i) = static_cast<T>(std::sin(angle));
      if (i + 1 < d) pe(pos, i + 1) = static_cast<T>(std::cos(angle));
    }
  return pe;
}

template <typename T>
MultiViewModel<T>::MultiViewModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  const std::size_t d = cfg_.d_model;
  tok_embed_ = add_param("embed.tokens", cfg_.vocab_size, d, rng, true);
  for (std::size_t l = 0; l < cfg_.enc_layers; ++l) {
    const std::string pre = "enc." + std::to_string(l) + ".";
    EncoderLayer layer;
    layer.self = add_attention(pre + "self.", rng);
    layer.ln1 = add_norm(pre + "ln1.", rng);
    layer.ffn = add_ffn(pre + "ffn.", rng);
    layer.ln2 = add_norm(pre + "ln2.", rng);
    enc_.push_back(layer);
  }
  lstm_w_ih_ = add_param("lstm.w_ih", d, 4 * d, rng, true);
  lstm_w_hh_ = add_param("lstm.w_hh", d, 4 * d, rng, true);
  lstm_b_ = add_param("lstm.bias", 1, 4 * d, rng, false);
  for (std::size_t l = 0; l < cfg_.dec_layers; ++l) {
    const std::string pre = "dec." + std::to_string(l) + ".";
    DecoderLayer layer;
    layer.self = add_attention(pre + "self.", rng);
    layer.ln1 = add_norm(pre + "ln1.", rng);
    layer.cross = add_attention(pre + "cross.", rng);
    layer.ln2 = add_norm(pre + "ln2.", rng);
    layer.ffn = add_ffn(pre + "ffn.", rng);
    layer.ln3 = add_norm(pre + "ln3.", rng);
    const std::string mv = "mv." + std::to_string(l) + ".";
    layer.imp_w = add_param(mv + "w", d, d, rng, true);
    layer.imp_b = add_param(mv + "b", 1, d, rng, false);
    layer.imp_v = add_param(mv + "v", d, 1, rng, true);
    dec_.push_back(layer);
  }
  w_out_ = add_param("out.w_p", d, cfg_.vocab_size, rng, true);
  positions_ = positional_encoding<T>(std::max(cfg_.max_src_len, cfg_.max_tgt_len), d);
}

template <typename T>
std::size_t MultiViewModel<T>::add_param(const std::string& name, std::size_t rows, std::size_t cols,
                                         std::mt19937_64& rng, bool random, double fill) {
  Tensor<T> value = random ? ad::normal_tensor<T>(rows, cols, cfg_.init_std, rng) : Tensor<T>(rows, cols, T(fill));
  params_.emplace_back(name, std::move(value));
  return params_.size() - 1;
}

template <typename T>
AttentionParams MultiViewModel<T>::add_attention(const std::string& pre, std::mt19937_64& rng) {
  const std::size_t d = cfg_.d_model;
  AttentionParams ap;
  ap.wq = add_param(pre + "wq", d, d, rng, true);
  ap.bq = add_param(pre + "bq", 1, d, rng, false);
  ap.wk = add_param(pre + "wk", d, d, rng, true);
  ap.wv = add_param(pre + "wv", d, d, rng, true);
  ap.bv = add_param(pre + "bv", 1, d, rng, false);
  ap.wo = add_param(pre + "wo", d, d, rng, true);
  ap.bo = add_param(pre + "bo", 1, d, rng, false);
  return ap;
}

template <typename T>
FeedForwardParams MultiViewModel<T>::add_ffn(const std::string& pre, std::mt19937_64& rng) {
  FeedForwardParams fp;
  fp.w1 = add_param(pre + "w1", cfg_.d_model, cfg_.d_ff, rng, true);
  fp.b1 = add_param(pre + "b1", 1, cfg_.d_ff, rng, false);
  fp.w2 = add_param(pre + "w2", cfg_.d_ff, cfg_.d_model, rng, true);
  fp.b2 = add_param(pre + "b2", 1, cfg_.d_model, rng, false);
  return fp;
}

template <typename T>
NormParams MultiViewModel<T>::add_norm(const std::string& pre, std::mt19937_64& rng) {
  return {add_param(pre + "gain", 1, cfg_.d_model, rng, false, 1.0), add_param(pre + "bias", 1, cfg_.d_model, rng, false)};
}

template <typename T>
std::vector<ad::Parameter<T>*> MultiViewModel<T>::param_ptrs() {
  std::vector<ad::Parameter<T>*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

template <typename T>
std::vector<ad::Parameter<T>*> MultiViewModel<T>::param_ptrs(ParamGroup group) {
  std::vector<ad::Parameter<T>*> out;
  for (auto& p : params_)
    if (group_of(p.name) == group) out.push_back(&p);
  return out;
}

template <typename T>
ad::Parameter<T>* MultiViewModel<T>::find(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

template <typename T>
void MultiViewModel<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
Var<T> MultiViewModel<T>::p(Tape<T>& tape, std::size_t idx) const {
  return tape.param(params_[idx]);
}

template <typename T>
Var<T> MultiViewModel<T>::embed(Tape<T>& tape, std::span<const int> tokens) const {
  for (int t : tokens)
    if (t < 0 || static_cast<std::size_t>(t) >= cfg_.vocab_size)
      throw Error("token id " + std::to_string(t) + " outside vocabulary of " + std::to_string(cfg_.vocab_size));
  const std::size_t n = tokens.size();
  Var<T> x = ad::scale(ad::embedding_lookup(p(tape, tok_embed_), tokens), static_cast<T>(std::sqrt(double(cfg_.d_model))));
  Tensor<T> pe(n, cfg_.d_model);
  std::copy(positions_.data.begin(), positions_.data.begin() + n * cfg_.d_model, pe.data.begin());
  return ad::add_constant(x, pe);
}

template <typename T>
std::pair<Var<T>, Var<T>> MultiViewModel<T>::project_kv(Tape<T>& tape, Var<T> memory, const AttentionParams& ap) const {
  Var<T> k = ad::matmul(memory, p(tape, ap.wk));
  Var<T> v = ad::add(ad::matmul(memory, p(tape, ap.wv)), p(tape, ap.bv));
  return {k, v};
}

template <typename T>
Var<T> MultiViewModel<T>::attend(Tape<T>& tape, Var<T> queries_in, Var<T> keys, Var<T> values, const AttentionParams& ap,
                                 const std::vector<std::uint8_t>* mask) const {
  const std::size_t dh = cfg_.d_model / cfg_.heads;
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  Var<T> q = ad::add(ad::matmul(queries_in, p(tape, ap.wq)), p(tape, ap.bq));
  std::vector<Var<T>> heads;
  heads.reserve(cfg_.heads);
  for (std::size_t h = 0; h < cfg_.heads; ++h) {
    Var<T> scores = ad::scale(ad::matmul_nt(ad::slice_cols(q, h * dh, dh), ad::slice_cols(keys, h * dh, dh)), inv_sqrt);
    Var<T> probs = mask ? ad::masked_softmax(scores, std::span<const std::uint8_t>(*mask)) : ad::softmax(scores);
    heads.push_back(ad::matmul(probs, ad::slice_cols(values, h * dh, dh)));
  }
  Var<T> joined = heads.size() == 1 ? heads[0] : ad::concat_cols(std::span<const Var<T>>(heads));
  return ad::add(ad::matmul(joined, p(tape, ap.wo)), p(tape, ap.bo));
}

template <typename T>
Var<T> MultiViewModel<T>::feed_forward(Tape<T>& tape, Var<T> x, const FeedForwardParams& fp) const {
  Var<T> h = ad::relu(ad::add(ad::matmul(x, p(tape, fp.w1)), p(tape, fp.b1)));
  return ad::add(ad::matmul(h, p(tape, fp.w2)), p(tape, fp.b2));
}

template <typename T>
Var<T> MultiViewModel<T>::norm(Tape<T>& tape, Var<T> x, const NormParams& np) const {
  return ad::layer_norm(x, p(tape, np.gain), p(tape, np.bias));
}

template <typename T>
EncodedView<T> MultiViewModel<T>::encode_view(Tape<T>& tape, std::span<const int> tokens,
                                              std::span<const std::size_t> blk_positions, std::size_t valid_len) const {
  const std::size_t n = tokens.size();
  if (n == 0) throw Error("encode_view: empty token sequence");
  if (n > cfg_.max_src_len)
    throw Error("encode_view: " + std::to_string(n) + " tokens exceed max_src_len " + std::to_string(cfg_.max_src_len));
  if (valid_len == 0 || valid_len > n) throw Error("encode_view: valid length must be in [1, sequence length]");
  if (blk_positions.empty()) throw Error("encode_view: view has no block tokens");
  for (std::size_t b : blk_positions)
    if (b >= valid_len) throw Error("encode_view: block position " + std::to_string(b) + " falls in padding");

  EncodedView<T> ev;
  ev.key_mask.assign(n, 0);
  std::fill(ev.key_mask.begin(), ev.key_mask.begin() + valid_len, 1);
  std::vector<std::uint8_t> mask_storage;
  const std::vector<std::uint8_t>* mask = nullptr;
  if (valid_len < n) {
    mask_storage.reserve(n * n);
    for (std::size_t i = 0; i < n; ++i) mask_storage.insert(mask_storage.end(), ev.key_mask.begin(), ev.key_mask.end());
    mask = &mask_storage;
  }

  Var<T> x = embed(tape, tokens);
  for (const EncoderLayer& layer : enc_) {
    auto [k, v] = project_kv(tape, x, layer.self);
    x = norm(tape, ad::add(x, attend(tape, x, k, v, layer.self, mask)), layer.ln1);
    x = norm(tape, ad::add(x, feed_forward(tape, x, layer.ffn)), layer.ln2);
  }
  ev.hidden = x;
  ev.block_states = ad::gather_rows(x, blk_positions);

  const std::size_t d = cfg_.d_model;
  const ad::LstmParams<T> lp{p(tape, lstm_w_ih_), p(tape, lstm_w_hh_), p(tape, lstm_b_)};
  Var<T> h = tape.constant(Tensor<T>(1, d));
  Var<T> c = tape.constant(Tensor<T>(1, d));
  for (std::size_t r = 0; r < blk_positions.size(); ++r)
    std::tie(h, c) = ad::lstm_cell(ad::slice_rows(ev.block_states, r, 1), h, c, lp);
  ev.view_vector = h;
  return ev;
}

template <typename T>
EncodedView<T> MultiViewModel<T>::encode_view(Tape<T>& tape, const views::ViewTokenSeq& seq) const {
  return encode_view(tape, seq.tokens, seq.blk_positions, seq.tokens.size());
}

template <typename T>
Var<T> MultiViewModel<T>::view_importance(Tape<T>& tape, std::span<const Var<T>> view_vectors, std::size_t layer) const {
  if (view_vectors.empty()) throw Error("view_importance: no views");
  const DecoderLayer& dl = dec_.at(layer);
  Var<T> stacked = view_vectors.size() == 1 ? view_vectors[0] : ad::concat_rows(view_vectors);
  Var<T> u = ad::tanh(ad::add(ad::matmul(stacked, p(tape, dl.imp_w)), p(tape, dl.imp_b)));
  Var<T> logits = ad::matmul(u, p(tape, dl.imp_v));  // K x 1
  return ad::transpose(ad::softmax(logits, 0));
}

template <typename T>
DecodeContext<T> MultiViewModel<T>::prepare(Tape<T>& tape, std::vector<EncodedView<T>> views) const {
  if (views.empty()) throw Error("prepare: no encoded views");
  DecodeContext<T> ctx;
  ctx.views = std::move(views);
  std::vector<Var<T>> vectors;
  for (const auto& v : ctx.views) vectors.push_back(v.view_vector);
  for (const DecoderLayer& dl : dec_) {
    std::vector<Var<T>> ks, vs;
    for (const auto& v : ctx.views) {
      auto [k, val] = project_kv(tape, v.hidden, dl.cross);
      ks.push_back(k);
      vs.push_back(val);
    }
    ctx.keys.push_back(std::move(ks));
    ctx.values.push_back(std::move(vs));
    const std::size_t layer = ctx.weights.size();
    ctx.weights.push_back(ad::sharpen(view_importance(tape, vectors, layer), static_cast<T>(cfg_.temperature)));
  }
  return ctx;
}

namespace {

std::vector<std::uint8_t> cross_mask(std::size_t queries, const std::vector<std::uint8_t>& key_mask) {
  std::vector<std::uint8_t> m;
  m.reserve(queries * key_mask.size());
  for (std::size_t i = 0; i < queries; ++i) m.insert(m.end(), key_mask.begin(), key_mask.end());
  return m;
}

bool has_padding(const std::vector<std::uint8_t>& key_mask) {
  return std::find(key_mask.begin(), key_mask.end(), 0) != key_mask.end();
}

}  // namespace

template <typename T>
Var<T> MultiViewModel<T>::multi_view_attention(Tape<T>& tape, Var<T> dec_states, const DecodeContext<T>& ctx,
                                               std::size_t layer) const {
  const DecoderLayer& dl = dec_.at(layer);
  const std::size_t k_views = ctx.views.size();
  if (ctx.weights.at(layer).cols() != k_views) throw ShapeError("multi_view_attention: weight count differs from view count");
  Var<T> mixed;
  for (std::size_t k = 0; k < k_views; ++k) {
    const auto& km = ctx.views[k].key_mask;
    if (km.size() != ctx.views[k].hidden.rows()) throw ShapeError("multi_view_attention: mask length differs from view length");
    std::vector<std::uint8_t> mask;
    if (has_padding(km)) mask = cross_mask(dec_states.rows(), km);
    Var<T> a = attend(tape, dec_states, ctx.keys[layer][k], ctx.values[layer][k], dl.cross, mask.empty() ? nullptr : &mask);
    Var<T> term = ad::mul(a, ad::slice_cols(ctx.weights[layer], k, 1));
    mixed = k == 0 ? term : ad::add(mixed, term);
  }
  return mixed;
}

template <typename T>
void MultiViewModel<T>::check_prev_tokens(std::span<const int> prev) const {
  if (prev.empty() || prev[0] != corpus::kBos) throw Error("decoder input must start with <s>");
  if (prev.size() > cfg_.max_tgt_len)
    throw Error("decoder input of " + std::to_string(prev.size()) + " tokens exceeds max_tgt_len " +
                std::to_string(cfg_.max_tgt_len));
}

template <typename T>
template <typename CrossFn>
Var<T> MultiViewModel<T>::run_decoder(Tape<T>& tape, std::span<const int> prev, bool last_only, CrossFn cross) const {
  check_prev_tokens(prev);
  const std::size_t n = prev.size();
  std::vector<std::uint8_t> causal(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) causal[i * n + j] = 1;
  Var<T> x = embed(tape, prev);
  for (std::size_t l = 0; l < dec_.size(); ++l) {
    const DecoderLayer& dl = dec_[l];
    auto [k, v] = project_kv(tape, x, dl.self);
    x = norm(tape, ad::add(x, attend(tape, x, k, v, dl.self, &causal)), dl.ln1);
    x = norm(tape, ad::add(x, cross(x, l)), dl.ln2);
    x = norm(tape, ad::add(x, feed_forward(tape, x, dl.ffn)), dl.ln3);
  }
  if (last_only) x = ad::slice_rows(x, n - 1, 1);
  return ad::matmul(x, p(tape, w_out_));
}

template <typename T>
Var<T> MultiViewModel<T>::decode(Tape<T>& tape, const DecodeContext<T>& ctx, std::span<const int> prev,
                                 bool last_only) const {
  return run_decoder(tape, prev, last_only,
                     [&](Var<T> x, std::size_t l) { return multi_view_attention(tape, x, ctx, l); });
}

template <typename T>
Var<T> MultiViewModel<T>::decode_single_view(Tape<T>& tape, const EncodedView<T>& view, std::span<const int> prev) const {
  return run_decoder(tape, prev, false, [&](Var<T> x, std::size_t l) {
    const DecoderLayer& dl = dec_[l];
    auto [k, v] = project_kv(tape, view.hidden, dl.cross);
    std::vector<std::uint8_t> mask;
    if (has_padding(view.key_mask)) mask = cross_mask(x.rows(), view.key_mask);
    return attend(tape, x, k, v, dl.cross, mask.empty() ? nullptr : &mask);
  });
}

template <typename T>
std::vector<double> MultiViewModel<T>::mean_view_weights(const DecodeContext<T>& ctx) const {
  std::vector<double> mean(ctx.views.size(), 0.0);
  for (const Var<T>& w : ctx.weights)
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += static_cast<double>(w.value().data[k]);
  for (double& m : mean) m /= static_cast<double>(ctx.weights.size());
  return mean;
}

template <typename T>
std::pair<Var<T>, std::size_t> nll_sum(Var<T> logits, std::span<const int> targets, int pad_id) {
  if (targets.size() != logits.rows())
    throw ShapeError("nll: " + std::to_string(targets.size()) + " targets for " + std::to_string(logits.rows()) +
                     " logit rows");
  std::vector<std::size_t> rows, cols;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] == pad_id) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= logits.cols())
      throw Error("nll: target id " + std::to_string(targets[i]) + " outside vocabulary");
    rows.push_back(i);
    cols.push_back(static_cast<std::size_t>(targets[i]));
  }
  if (rows.empty()) throw Error("nll: every target position is padding");
  Var<T> lp = ad::log_softmax(ad::gather_rows(logits, std::span<const std::size_t>(rows)));
  return {ad::scale(ad::sum(ad::pick(lp, std::span<const std::size_t>(cols))), T(-1)), rows.size()};
}

template <typename T>
Var<T> nll_loss(Var<T> logits, std::span<const int> targets, int pad_id) {
  auto [total, count] = nll_sum(logits, targets, pad_id);
  return ad::scale(total, T(1) / static_cast<T>(count));
}

template class MultiViewModel<float>;
template class MultiViewModel<double>;
template Tensor<float> positional_encoding<float>(std::size_t, std::size_t);
template Tensor<double> positional_encoding<double>(std::size_t, std::size_t);
template std::pair<Var<float>, std::size_t> nll_sum<float>(Var<float>, std::span<const int>, int);
template std::pair<Var<double>, std::size_t> nll_sum<double>(Var<double>, std::span<const int>, int);
template Var<float> nll_loss<float>(Var<float>, std::span<const int>, int);
template Var<double> nll_loss<double>(Var<double>, std::span<const int>, int);

}  // namespace mvsum::model
