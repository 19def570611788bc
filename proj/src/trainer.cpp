#include "mvsum/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>

#include "mvsum/error.hpp"
#include "mvsum/stagehmm.hpp"

namespace mvsum::trainer {

using ad::Tape;
using ad::Var;

void TrainConfig::validate() const {
  if (!(base_lr > 0) || !(aux_lr > 0)) throw Error("train config: learning rates must be positive");
  if (batch_size == 0) throw Error("train config: batch_size must be at least 1");
  if (max_steps == 0) throw Error("train config: max_steps must be at least 1");
  if (!(clip_norm > 0)) throw Error("train config: clip norm must be positive");
}

std::pair<std::vector<int>, std::vector<int>> teacher_forcing_pair(std::span<const int> summary, std::size_t max_tgt_len) {
  const std::size_t keep = std::min(summary.size(), max_tgt_len - 1);
  std::vector<int> prev{corpus::kBos};
  prev.insert(prev.end(), summary.begin(), summary.begin() + keep);
  std::vector<int> target(summary.begin(), summary.begin() + keep);
  target.push_back(corpus::kEos);
  return {prev, target};
}

std::vector<Example> make_examples(std::span<const corpus::Conversation> convs, std::span<const views::ViewKind> kinds,
                                   const embed::EmbeddingTable& vectors, const pipeline::Segmenters& seg,
                                   const corpus::Vocab& vocab, const model::ModelConfig& cfg) {
  std::vector<Example> out;
  out.reserve(convs.size());
  for (const corpus::Conversation& c : convs) {
    if (!c.summary) throw Error("conversation '" + c.id + "' has no reference summary");
    auto it = vectors.find(c.id);
    const embed::EmbeddingMatrix* e = it == vectors.end() ? nullptr : &it->second;
    Example ex;
    ex.id = c.id;
    ex.views = pipeline::render_views(c, kinds, e, seg, vocab, cfg.max_src_len);
    ex.summary = vocab.encode(corpus::tokenize(*c.summary));
    out.push_back(std::move(ex));
  }
  return out;
}

template <typename T>
double clip_gradients(std::span<ad::Parameter<T>* const> params, double max_norm) {
  double sq = 0;
  for (const auto* p : params)
    for (T g : p->grad.data) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto* p : params)
      for (T& g : p->grad.data) g = static_cast<T>(g * s);
  }
  return norm;
}

namespace {

template <typename T>
model::DecodeContext<T> encode_all(Tape<T>& tape, const model::MultiViewModel<T>& m, const Example& ex) {
  if (ex.views.size() != m.config().views.size())
    throw Error("example '" + ex.id + "' has " + std::to_string(ex.views.size()) + " views, model expects " +
                std::to_string(m.config().views.size()));
  std::vector<model::EncodedView<T>> enc;
  for (const auto& v : ex.views) enc.push_back(m.encode_view(tape, v));
  return m.prepare(tape, std::move(enc));
}

}  // namespace

template <typename T>
Var<T> batch_loss(Tape<T>& tape, const model::MultiViewModel<T>& m, std::span<const Example* const> batch) {
  if (batch.empty()) throw Error("batch_loss: empty batch");
  Var<T> total;
  std::size_t count = 0;
  for (const Example* ex : batch) {
    auto ctx = encode_all(tape, m, *ex);
    auto [prev, target] = teacher_forcing_pair(ex->summary, m.config().max_tgt_len);
    auto [s, n] = model::nll_sum(m.decode(tape, ctx, prev), target, corpus::kPad);
    total = total.valid() ? ad::add(total, s) : s;
    count += n;
  }
  return ad::scale(total, T(1) / static_cast<T>(count));
}

template <typename T>
std::vector<StepRecord> train(model::MultiViewModel<T>& m, std::span<const Example> data, const TrainConfig& cfg,
                              const StepCallback& on_step) {
  cfg.validate();
  if (data.empty()) throw Error("train: empty dataset");
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  if (cfg.shuffle) std::shuffle(order.begin(), order.end(), rng);
  std::size_t pos = 0;

  auto all = m.param_ptrs();
  auto base = m.param_ptrs(model::ParamGroup::base);
  auto aux = m.param_ptrs(model::ParamGroup::aux);
  ad::Adam<T> opt_base, opt_aux;
  const std::size_t batch_size = std::min(cfg.batch_size, data.size());

  std::vector<StepRecord> curve;
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    std::vector<const Example*> batch;
    while (batch.size() < batch_size) {
      if (pos == order.size()) {
        pos = 0;
        if (cfg.shuffle) std::shuffle(order.begin(), order.end(), rng);
      }
      batch.push_back(&data[order[pos++]]);
    }
    m.zero_grad();
    StepRecord rec{step, 0, 0};
    try {
      Tape<T> tape;
      Var<T> loss = batch_loss(tape, m, std::span<const Example* const>(batch));
      rec.loss = static_cast<double>(loss.value().data[0]);
      tape.backward(loss);
    } catch (const NumericError& e) {
      throw NumericError("training aborted at step " + std::to_string(step) + ": " + e.what());
    }
    if (!std::isfinite(rec.loss)) throw NumericError("training aborted at step " + std::to_string(step) + ": non-finite loss");
    rec.grad_norm = clip_gradients<T>(all, cfg.clip_norm);
    opt_base.step(base, cfg.base_lr);
    opt_aux.step(aux, cfg.aux_lr);
    curve.push_back(rec);
    if (on_step && !on_step(rec)) break;
  }
  return curve;
}

template <typename T>
double token_accuracy(const model::MultiViewModel<T>& m, std::span<const Example> data) {
  std::size_t hit = 0, total = 0;
  for (const Example& ex : data) {
    Tape<T> tape(false);
    auto ctx = encode_all(tape, m, ex);
    auto [prev, target] = teacher_forcing_pair(ex.summary, m.config().max_tgt_len);
    const auto& logits = m.decode(tape, ctx, prev).value();
    for (std::size_t i = 0; i < target.size(); ++i) {
      const T* row = logits.row(i);
      const auto best = static_cast<int>(std::max_element(row, row + logits.cols) - row);
      hit += best == target[i];
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

template <typename T>
double mean_loss(const model::MultiViewModel<T>& m, std::span<const Example> data) {
  if (data.empty()) throw Error("mean_loss: empty dataset");
  std::vector<const Example*> all;
  for (const Example& ex : data) all.push_back(&ex);
  Tape<T> tape(false);
  return static_cast<double>(batch_loss(tape, m, std::span<const Example* const>(all)).value().data[0]);
}

void write_loss_csv(std::ostream& os, std::span<const StepRecord> curve) {
  os << "step,loss,grad_norm\n";
  os.precision(9);
  for (const StepRecord& r : curve) os << r.step << ',' << r.loss << ',' << r.grad_norm << '\n';
}

namespace {

std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  s.erase(0, s.find_first_not_of(ws));
  s.erase(s.find_last_not_of(ws) + 1);
  return s;
}

}  // namespace

std::map<std::string, std::string> parse_key_values(std::istream& is) {
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw FormatError("config line " + std::to_string(lineno) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::map<std::string, std::string> parse_key_values_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config file " + path);
  return parse_key_values(in);
}

namespace {

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || !std::isfinite(d)) throw Error("config: '" + key + "' needs a number, got '" + v + "'");
  return d;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
    throw Error("config: '" + key + "' needs a non-negative integer, got '" + v + "'");
  return std::stoull(v);
}

}  // namespace

void apply_config(const std::map<std::string, std::string>& kv, TrainConfig& t, model::ModelConfig& m) {
  for (const auto& [key, v] : kv) {
    if (key == "base_lr") t.base_lr = to_double(key, v);
    else if (key == "aux_lr") t.aux_lr = to_double(key, v);
    else if (key == "batch_size") t.batch_size = to_uint(key, v);
    else if (key == "max_steps") t.max_steps = to_uint(key, v);
    else if (key == "clip_norm") t.clip_norm = to_double(key, v);
    else if (key == "seed") t.seed = m.seed = to_uint(key, v);
    else if (key == "eval_every") t.eval_every = to_uint(key, v);
    else if (key == "shuffle") {
      if (v != "true" && v != "false") throw Error("config: 'shuffle' must be true or false");
      t.shuffle = v == "true";
    } else if (key == "d_model") m.d_model = to_uint(key, v);
    else if (key == "heads") m.heads = to_uint(key, v);
    else if (key == "enc_layers") m.enc_layers = to_uint(key, v);
    else if (key == "dec_layers") m.dec_layers = to_uint(key, v);
    else if (key == "d_ff") m.d_ff = to_uint(key, v);
    else if (key == "max_src_len") m.max_src_len = to_uint(key, v);
    else if (key == "max_tgt_len") m.max_tgt_len = to_uint(key, v);
    else if (key == "temperature") m.temperature = to_double(key, v);
    else if (key == "init_std") m.init_std = to_double(key, v);
    else if (key == "views") m.views = views::parse_view_list(v);
    else throw Error("config: unknown key '" + key + "'");
  }
}

std::vector<corpus::Conversation> synthetic_dialogues(std::size_t n, std::uint64_t seed) {
  std::vector<std::string> names{"Amanda", "Tom",  "Lucy", "Mark", "Sara", "John",
                                 "Emma",   "Paul", "Kate", "Ben",  "Nina", "Oscar"};
  std::vector<std::string> places{"cinema", "park",   "office", "cafe",  "library", "station",
                                  "gym",    "beach",  "museum", "mall",  "bakery",  "harbour"};
  std::mt19937_64 rng(seed);
  std::shuffle(names.begin(), names.end(), rng);
  std::shuffle(places.begin(), places.end(), rng);
  std::vector<corpus::Conversation> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string& x = names[i % names.size()];
    const std::string& y = names[(i + 1 + i / names.size()) % names.size()];
    const std::string& z = places[i % places.size()];
    corpus::Conversation c;
    c.id = "synth-" + std::to_string(i + 1);
    c.utterances = {{x, "hi " + y + " !"},
                    {y, "hello " + x + " , how are you ?"},
                    {x, "fine thanks . are you free tomorrow ?"},
                    {y, "yes , i am free all day ."},
                    {x, "great , let's meet at the " + z + " ."},
                    {y, "ok , see you at the " + z + " then ."},
                    {x, "bye !"}};
    c.summary = x + " will meet " + y + " at the " + z + " .";
    out.push_back(std::move(c));
  }
  return out;
}

SmokeReport overfit_smoke(const SmokeOptions& opts) {
  SmokeReport rep;
  rep.corpus = synthetic_dialogues(opts.pairs, opts.seed);
  rep.vocab = corpus::build_vocab(rep.corpus, 10000, 1);

  const auto tfidf = embed::fit_tfidf(rep.corpus, 64, opts.seed);
  rep.vectors = embed::embed_corpus(tfidf, rep.corpus);
  rep.segmenters.c99 = topicseg::C99Config{};
  std::vector<embed::EmbeddingMatrix> seqs;
  for (const auto& c : rep.corpus) seqs.push_back(rep.vectors.at(c.id));
  rep.segmenters.hmm = stage::em_fit(stage::initial_model(4, seqs), seqs).model;

  model::ModelConfig mc;
  mc.vocab_size = rep.vocab.size();
  mc.views = opts.views;
  mc.seed = opts.seed;
  rep.model = std::make_unique<model::MultiViewModel<float>>(mc);
  rep.examples = make_examples(rep.corpus, mc.views, rep.vectors, rep.segmenters, rep.vocab, mc);

  TrainConfig tc;
  tc.max_steps = opts.max_steps;
  tc.seed = opts.seed;
  tc.shuffle = false;
  rep.curve = train<float>(*rep.model, rep.examples, tc, [&](const StepRecord& r) {
    if (opts.eval_every == 0 || r.step % opts.eval_every != 0) return true;
    rep.accuracy = token_accuracy(*rep.model, std::span<const Example>(rep.examples));
    if (rep.accuracy < opts.target_accuracy) return true;
    rep.final_loss = mean_loss(*rep.model, std::span<const Example>(rep.examples));
    return rep.final_loss >= opts.target_loss;
  });
  rep.steps = rep.curve.size();
  rep.accuracy = token_accuracy(*rep.model, std::span<const Example>(rep.examples));
  rep.final_loss = mean_loss(*rep.model, std::span<const Example>(rep.examples));
  rep.passed = rep.accuracy >= opts.target_accuracy && rep.final_loss < opts.target_loss;
  return rep;
}

template double clip_gradients<float>(std::span<ad::Parameter<float>* const>, double);
template double clip_gradients<double>(std::span<ad::Parameter<double>* const>, double);
template Var<float> batch_loss<float>(Tape<float>&, const model::MultiViewModel<float>&, std::span<const Example* const>);
template Var<double> batch_loss<double>(Tape<double>&, const model::MultiViewModel<double>&,
                                        std::span<const Example* const>);
template std::vector<StepRecord> train<float>(model::MultiViewModel<float>&, std::span<const Example>,
                                             const TrainConfig&, const StepCallback&);
template std::vector<StepRecord> train<double>(model::MultiViewModel<double>&, std::span<const Example>,
                                              const TrainConfig&, const StepCallback&);
template double token_accuracy<float>(const model::MultiViewModel<float>&, std::span<const Example>);
template double token_accuracy<double>(const model::MultiViewModel<double>&, std::span<const Example>);
template double mean_loss<float>(const model::MultiViewModel<float>&, std::span<const Example>);
template double mean_loss<double>(const model::MultiViewModel<double>&, std::span<const Example>);

}  // namespace mvsum::trainer
