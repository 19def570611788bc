#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "mvsum/error.hpp"
#include "mvsum/inference.hpp"
#include "mvsum/trainer.hpp"

using namespace mvsum;
using namespace mvsum::inference;

namespace {

// Deterministic pseudo-random next-token distribution keyed by the prefix.
StepFn random_lm(std::uint64_t seed, std::size_t vocab, double spread = 2.0) {
  return [=](std::span<const int> prefix) {
    std::uint64_t h = seed * 0x9e3779b97f4a7c15ULL;
    for (int t : prefix) h = (h ^ std::uint64_t(t + 1)) * 0x100000001b3ULL;
    std::mt19937_64 rng(h);
    std::normal_distribution<double> g(0, spread);
    std::vector<double> z(vocab);
    double mx = -1e300;
    for (double& x : z) mx = std::max(mx, x = g(rng));
    double s = 0;
    for (double x : z) s += std::exp(x - mx);
    for (double& x : z) x = x - mx - std::log(s);
    return z;
  };
}

struct Best {
  std::vector<int> tokens;
  double score = -1e300;
};

// Every complete sequence: ends in eos, or reaches max_len.
void enumerate(const StepFn& step, const BeamOptions& o, std::vector<int>& cur, double lp, Best& best) {
  std::vector<int> prefix{o.bos};
  prefix.insert(prefix.end(), cur.begin(), cur.end());
  const auto dist = step(prefix);
  for (std::size_t t = 0; t < dist.size(); ++t) {
    cur.push_back(int(t));
    const double total = lp + dist[t];
    if (int(t) == o.eos || cur.size() == o.max_len) {
      const double score = total / double(cur.size());
      if (score > best.score) best = {cur, score};
    } else {
      enumerate(step, o, cur, total, best);
    }
    cur.pop_back();
  }
}

StepFn table_lm(std::map<std::vector<int>, std::vector<double>> table, std::size_t vocab) {
  return [table, vocab](std::span<const int> prefix) {
    std::vector<double> lp(vocab, -INFINITY);
    auto it = table.find(std::vector<int>(prefix.begin(), prefix.end()));
    if (it != table.end())
      for (std::size_t i = 0; i < vocab; ++i)
        if (it->second[i] > 0) lp[i] = std::log(it->second[i]);
    return lp;
  };
}

}  // namespace

TEST_CASE("beam 1 equals greedy decoding") {
  for (std::uint64_t s = 1; s <= 40; ++s) {
    auto step = random_lm(s, 5 + s % 7, 0.5 + double(s % 4));
    BeamOptions o;
    o.beam = 1;
    o.max_len = 3 + s % 9;
    CHECK(beam_search(step, o).tokens == greedy(step, o));
  }
}

TEST_CASE("beam search finds the non-greedy optimum") {
  // ids: a=6, b=7, c=8, d=9; eos=2; bos=1
  std::vector<double> first(10, 0.0), after_a(10, 0.0), after_b(10, 0.0), end(10, 0.0);
  first[6] = 0.6;
  first[7] = 0.4;
  after_a[8] = 0.5;
  after_a[9] = 0.5;
  after_b[8] = 0.99;
  after_b[9] = 0.01;
  end[corpus::kEos] = 1.0;
  auto step = table_lm({{{1}, first},
                        {{1, 6}, after_a},
                        {{1, 7}, after_b},
                        {{1, 6, 8}, end},
                        {{1, 6, 9}, end},
                        {{1, 7, 8}, end},
                        {{1, 7, 9}, end}},
                       10);
  BeamOptions o;
  o.beam = 2;
  o.max_len = 10;
  auto h = beam_search(step, o);
  CHECK(h.tokens == std::vector<int>{7, 8, corpus::kEos});
  CHECK(h.score == doctest::Approx((std::log(0.4) + std::log(0.99)) / 3));
  CHECK(greedy(step, o) == std::vector<int>{6, 8, corpus::kEos});
}

TEST_CASE("wide beams agree with exhaustive search") {
  for (std::uint64_t s = 1; s <= 25; ++s) {
    auto step = random_lm(100 + s, 4, 1.5);
    BeamOptions o;
    o.beam = 1000;
    o.max_len = 1 + s % 4;
    Best best;
    std::vector<int> cur;
    enumerate(step, o, cur, 0.0, best);
    auto h = beam_search(step, o);
    CHECK(h.tokens == best.tokens);
    CHECK(h.score == doctest::Approx(best.score).epsilon(1e-12));
  }
}

TEST_CASE("beam invariants") {
  for (std::uint64_t s = 1; s <= 30; ++s) {
    auto step = random_lm(500 + s, 6, 1.0);
    BeamOptions o;
    o.beam = 1 + s % 5;
    o.max_len = 2 + s % 6;
    BeamTrace trace;
    auto h = beam_search(step, o, &trace);
    CHECK(h.tokens.size() <= o.max_len);
    if (h.tokens.size() < o.max_len) CHECK(h.tokens.back() == corpus::kEos);
    CHECK(h.score == doctest::Approx(h.log_prob / double(h.tokens.size())));
    for (const auto& row : trace) {
      CHECK(row.size() <= o.beam);
      for (std::size_t i = 1; i < row.size(); ++i) CHECK(row[i] <= row[i - 1]);
    }
    BeamTrace again;
    CHECK(beam_search(step, o, &again).tokens == h.tokens);
    CHECK(again == trace);
  }
}

TEST_CASE("beam search errors and ties") {
  auto step = random_lm(1, 5);
  BeamOptions o;
  o.beam = 0;
  CHECK_THROWS(beam_search(step, o));
  o.beam = 2;
  CHECK_THROWS_AS(beam_search([](std::span<const int>) { return std::vector<double>{0.0, std::nan("")}; }, o),
                  NumericError);
  // uniform distribution: ties go to the smaller token id
  auto flat = [](std::span<const int>) { return std::vector<double>(5, std::log(0.2)); };
  o.max_len = 4;
  CHECK(beam_search(flat, o).tokens == std::vector<int>{0, 0, 0, 0});
  CHECK(greedy(flat, o) == std::vector<int>{0, 0, 0, 0});
  o.beam = 1;
  CHECK(beam_search(flat, o).tokens == std::vector<int>{0, 0, 0, 0});
}

TEST_CASE("detokenize") {
  const std::vector<std::string> t{"amy", "meets", "."};
  auto v = corpus::Vocab::from_tokens(t);
  const std::vector<int> ids{corpus::kBos, 6, 7, 8, corpus::kEos};
  CHECK(detokenize(ids, v) == "amy meets .");
  CHECK(detokenize(std::vector<int>{corpus::kEos}, v).empty());
}

TEST_CASE("summarize with one global view matches a single-view reference decode") {
  auto convs = trainer::synthetic_dialogues(3, 2);
  auto vocab = corpus::build_vocab(convs, 1000, 1);
  model::ModelConfig mc;
  mc.vocab_size = vocab.size();
  mc.d_model = 16;
  mc.heads = 2;
  mc.d_ff = 32;
  mc.max_tgt_len = 12;
  mc.views = {views::ViewKind::global};
  mc.init_std = 0.2;
  model::MultiViewModel<float> m(mc);
  pipeline::Segmenters none;
  for (const auto& c : convs) {
    BeamOptions o;
    o.beam = 3;
    auto s = summarize(c, m, vocab, nullptr, none, o);

    auto seq = views::render_view(views::build_view(c, views::ViewKind::global), c, vocab, mc.max_src_len);
    ad::Tape<float> tape(false);
    auto ev = m.encode_view(tape, seq);
    StepFn ref = [&](std::span<const int> prefix) {
      const std::size_t mark = tape.size();
      auto logits = m.decode_single_view(tape, ev, prefix);
      auto row = ad::slice_rows(ad::log_softmax(logits), prefix.size() - 1, 1).value().data;
      tape.truncate(mark);
      return std::vector<double>(row.begin(), row.end());
    };
    o.max_len = mc.max_tgt_len;
    CHECK(s.tokens == beam_search(ref, o).tokens);
    CHECK(s.view_weights == std::vector<double>{1.0});
    CHECK(s.tokens.size() <= mc.max_tgt_len);
    CHECK(summarize(c, m, vocab, nullptr, none, o).text == s.text);
  }
  CHECK_THROWS(summarize(corpus::Conversation{}, m, vocab, nullptr, none, {}));

  auto two = mc;
  two.views = {views::ViewKind::topic};
  model::MultiViewModel<float> mt(two);
  CHECK_THROWS(summarize(convs[0], mt, vocab, nullptr, none, {}));
}
