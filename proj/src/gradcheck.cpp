#include <algorithm>
#include <functional>
#include <random>

#include "mvsum/corpus.hpp"
#include "mvsum/model.hpp"

namespace mvsum::model {

ModelConfig miniature_config(std::uint64_t seed, double init_std) {
  ModelConfig c;
  c.vocab_size = 20;
  c.d_model = 8;
  c.heads = 2;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.d_ff = 16;
  c.max_src_len = 12;
  c.max_tgt_len = 6;
  c.views = {views::ViewKind::topic, views::ViewKind::stage};
  c.seed = seed;
  c.init_std = init_std;
  return c;
}

ad::GradCheckReport miniature_grad_check(std::uint64_t seed, double init_std, double eps) {
  MultiViewModel<double> m(miniature_config(seed, init_std));
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  std::uniform_int_distribution<int> word(corpus::kNumSpecials, 19);

  // Two views with independent contents (so the per-view attention outputs
  // differ and the importance path carries signal), in 2 and 3 blocks.
  const auto render = [&](std::vector<std::size_t> cuts) {
    std::vector<int> words(9);
    for (int& w : words) w = word(rng);
    views::ViewTokenSeq s{views::ViewKind::topic, {}, {}};
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (std::find(cuts.begin(), cuts.end(), i) != cuts.end()) {
        s.blk_positions.push_back(s.tokens.size());
        s.tokens.push_back(corpus::kBlk);
      }
      s.tokens.push_back(words[i]);
    }
    return s;
  };
  const views::ViewTokenSeq topic = render({0, 5});
  const views::ViewTokenSeq stage = render({0, 3, 6});
  std::vector<int> prev{corpus::kBos}, target;
  for (int i = 0; i < 4; ++i) prev.push_back(word(rng));
  target.assign(prev.begin() + 1, prev.end());
  target.push_back(corpus::kEos);

  const std::function<ad::Var<double>(ad::Tape<double>&)> loss = [&](ad::Tape<double>& tape) {
    std::vector<EncodedView<double>> enc{m.encode_view(tape, topic), m.encode_view(tape, stage)};
    auto ctx = m.prepare(tape, std::move(enc));
    return nll_loss(m.decode(tape, ctx, prev), target, corpus::kPad);
  };
  const auto params = m.param_ptrs();
  return ad::grad_check<double>(loss, params, eps);
}

}  // namespace mvsum::model
