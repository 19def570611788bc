#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "mvsum/corpus.hpp"
#include "mvsum/error.hpp"
#include "mvsum/model.hpp"

using namespace mvsum;
using namespace mvsum::model;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

ModelConfig small_config(std::vector<views::ViewKind> kinds = {views::ViewKind::topic, views::ViewKind::stage},
                         std::uint64_t seed = 3) {
  ModelConfig c;
  c.vocab_size = 30;
  c.d_model = 16;
  c.heads = 4;
  c.enc_layers = 2;
  c.dec_layers = 2;
  c.d_ff = 32;
  c.max_src_len = 40;
  c.max_tgt_len = 12;
  c.views = std::move(kinds);
  c.seed = seed;
  c.init_std = 0.3;
  return c;
}

views::ViewTokenSeq random_view(std::mt19937_64& rng, std::size_t len, std::size_t blocks, std::size_t vocab) {
  std::uniform_int_distribution<int> w(corpus::kNumSpecials, int(vocab) - 1);
  views::ViewTokenSeq s{views::ViewKind::topic, {}, {}};
  for (std::size_t i = 0; i < len; ++i) {
    if (i % ((len + blocks - 1) / blocks) == 0) {
      s.blk_positions.push_back(s.tokens.size());
      s.tokens.push_back(corpus::kBlk);
    } else {
      s.tokens.push_back(w(rng));
    }
  }
  return s;
}

std::vector<int> random_prefix(std::mt19937_64& rng, std::size_t len, std::size_t vocab) {
  std::uniform_int_distribution<int> w(corpus::kNumSpecials, int(vocab) - 1);
  std::vector<int> p{corpus::kBos};
  while (p.size() < len) p.push_back(w(rng));
  return p;
}

}  // namespace

TEST_CASE("config validation") {
  auto c = small_config();
  CHECK_NOTHROW(c.validate());
  auto bad = c;
  bad.heads = 3;
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.temperature = 0;
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.views = {};
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.views = {views::ViewKind::topic, views::ViewKind::topic};
  CHECK_THROWS(bad.validate());
  bad = c;
  bad.vocab_size = 6;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("parameter layout and groups") {
  MultiViewModel<float> m(small_config());
  std::set<std::string> names;
  for (const auto& p : m.params()) CHECK(names.insert(p.name).second);
  auto base = m.param_ptrs(ParamGroup::base), aux = m.param_ptrs(ParamGroup::aux);
  CHECK(base.size() + aux.size() == m.params().size());
  std::set<const void*> seen;
  for (auto* p : base) CHECK(seen.insert(p).second);
  for (auto* p : aux) CHECK(seen.insert(p).second);
  for (auto* p : aux) CHECK((p->name.starts_with("lstm.") || p->name.starts_with("mv.")));
  // One importance triple per decoder layer.
  for (int l = 0; l < 2; ++l) {
    const std::string mv = "mv." + std::to_string(l) + ".";
    REQUIRE(m.find(mv + "w"));
    CHECK(m.find(mv + "w")->value.rows == 16);
    CHECK(m.find(mv + "b")->value.cols == 16);
    CHECK(m.find(mv + "v")->value.rows == 16);
    CHECK(m.find(mv + "v")->value.cols == 1);
  }
  CHECK(!m.find("mv.2.w"));
  CHECK(m.find("out.w_p")->value.cols == 30);
  CHECK(m.find("lstm.w_ih")->value.cols == 64);
  for (const auto& p : m.params())
    if (p.name.ends_with(".bias") && !p.name.starts_with("lstm.") && p.name.find(".ln") == std::string::npos)
      for (float x : p.value.data) CHECK(x == 0.0f);
  CHECK(m.find("enc.0.ln1.gain")->value.data == std::vector<float>(16, 1.0f));
  CHECK(group_of("mv.0.w") == ParamGroup::aux);
  CHECK(group_of("dec.0.cross.wq") == ParamGroup::base);
}

TEST_CASE("positional encoding") {
  auto pe = positional_encoding<double>(4, 6);
  for (std::size_t i = 0; i < 6; i += 2) {
    CHECK(pe(0, i) == 0.0);
    CHECK(pe(0, i + 1) == 1.0);
  }
  CHECK(pe(1, 0) == doctest::Approx(std::sin(1.0)));
}

TEST_CASE("encode_view block states and view vector") {
  MultiViewModel<double> m(small_config());
  std::mt19937_64 rng(1);
  Tape<double> t;
  auto one = random_view(rng, 7, 1, 30);
  auto ev = m.encode_view(t, one);
  CHECK(ev.hidden.rows() == 7);
  CHECK(ev.block_states.rows() == 1);
  ad::LstmParams<double> lp{t.param(*m.find("lstm.w_ih")), t.param(*m.find("lstm.w_hh")), t.param(*m.find("lstm.bias"))};
  auto zero = t.constant(Tensor<double>(1, 16));
  auto [h, c] = ad::lstm_cell(ad::slice_rows(ev.hidden, 0, 1), zero, zero, lp);
  CHECK(h.value() == ev.view_vector.value());

  auto three = random_view(rng, 12, 3, 30);
  auto e3 = m.encode_view(t, three);
  CHECK(e3.block_states.rows() == three.blk_positions.size());
  for (std::size_t b = 0; b < three.blk_positions.size(); ++b)
    for (std::size_t j = 0; j < 16; ++j)
      CHECK(e3.block_states.value()(b, j) == e3.hidden.value()(three.blk_positions[b], j));

  CHECK_THROWS(m.encode_view(t, std::vector<int>{}, std::vector<std::size_t>{}, 0));
  CHECK_THROWS(m.encode_view(t, std::vector<int>(41, 7), std::vector<std::size_t>{0}, 41));
  CHECK_THROWS(m.encode_view(t, std::vector<int>{4, 30}, std::vector<std::size_t>{0}, 2));
}

TEST_CASE("padding is invisible to real positions") {
  MultiViewModel<double> m(small_config());
  std::mt19937_64 rng(2);
  auto v = random_view(rng, 8, 2, 30);
  auto a = v.tokens, b = v.tokens;
  a.insert(a.end(), {9, 17});
  b.insert(b.end(), {17, 9});
  Tape<double> t(false);
  auto ea = m.encode_view(t, a, v.blk_positions, 8);
  auto eb = m.encode_view(t, b, v.blk_positions, 8);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 16; ++j) CHECK(ea.hidden.value()(i, j) == eb.hidden.value()(i, j));
  CHECK(ea.view_vector.value() == eb.view_vector.value());
  CHECK(ea.key_mask == std::vector<std::uint8_t>{1, 1, 1, 1, 1, 1, 1, 1, 0, 0});
}

TEST_CASE("one encoder serves every view kind") {
  MultiViewModel<double> m(small_config());
  std::mt19937_64 rng(3);
  auto v = random_view(rng, 9, 3, 30);
  auto w = v;
  w.kind = views::ViewKind::stage;
  Tape<double> t(false);
  CHECK(m.encode_view(t, v).hidden.value() == m.encode_view(t, w).hidden.value());
}

TEST_CASE("view importance") {
  MultiViewModel<double> m(small_config());
  std::mt19937_64 rng(4);
  Tape<double> t(false);
  auto ev = m.encode_view(t, random_view(rng, 9, 3, 30));
  std::vector<Var<double>> same{ev.view_vector, ev.view_vector, ev.view_vector};
  for (double a : m.view_importance(t, same, 0).value().data) CHECK(a == doctest::Approx(1.0 / 3).epsilon(1e-15));
  std::vector<Var<double>> single{ev.view_vector};
  CHECK(m.view_importance(t, single, 1).value().data == std::vector<double>{1.0});

  auto e2 = m.encode_view(t, random_view(rng, 11, 2, 30));
  auto e3 = m.encode_view(t, random_view(rng, 6, 1, 30));
  std::vector<Var<double>> three{ev.view_vector, e2.view_vector, e3.view_vector};
  auto alpha = m.view_importance(t, three, 0).value().data;
  double total = 0;
  for (double a : alpha) total += a;
  CHECK(std::abs(total - 1) < 1e-12);
  const auto argmax = std::max_element(alpha.begin(), alpha.end()) - alpha.begin();
  auto* v = m.find("mv.0.v");
  for (double s : {0.1, 3.0, 25.0}) {
    auto saved = v->value;
    for (double& x : v->value.data) x *= s;
    auto scaled = m.view_importance(t, three, 0).value().data;
    CHECK(std::max_element(scaled.begin(), scaled.end()) - scaled.begin() == argmax);
    v->value = saved;
  }
}

TEST_CASE("sharpening") {
  Tape<double> t(false);
  auto s = ad::sharpen(t.constant(Tensor<double>(1, 2, std::vector<double>{0.6, 0.4})), 0.2);
  CHECK(std::abs(s.value().data[0] - 0.88364) < 1e-5);
  CHECK(std::abs(s.value().data[1] - 0.11636) < 1e-5);
  CHECK(s.value().data[0] == doctest::Approx(0.07776 / 0.088).epsilon(1e-12));
  auto id = ad::sharpen(t.constant(Tensor<double>(1, 2, std::vector<double>{0.6, 0.4})), 1.0);
  CHECK(std::abs(id.value().data[0] - 0.6) < 1e-12);
  CHECK(std::abs(id.value().data[1] - 0.4) < 1e-12);
  for (double temp : {0.05, 0.2, 3.0}) {
    auto h = ad::sharpen(t.constant(Tensor<double>(1, 2, 0.5)), temp);
    CHECK(h.value().data == std::vector<double>{0.5, 0.5});
  }
  auto z = ad::sharpen(t.constant(Tensor<double>(1, 3, std::vector<double>{0.0, 0.7, 0.3})), 0.2);
  CHECK(z.value().data[0] == 0.0);
}

TEST_CASE("multi-view mixing") {
  MultiViewModel<double> m(small_config());
  std::mt19937_64 rng(5);
  Tape<double> t(false);
  auto v = random_view(rng, 10, 2, 30);
  auto prev = random_prefix(rng, 5, 30);
  auto single = m.decode_single_view(t, m.encode_view(t, v), prev);
  std::vector<EncodedView<double>> twins{m.encode_view(t, v), m.encode_view(t, v)};
  auto ctx = m.prepare(t, twins);
  auto mixed = m.decode(t, ctx, prev);
  for (std::size_t i = 0; i < mixed.value().size(); ++i)
    CHECK(std::abs(mixed.value().data[i] - single.value().data[i]) < 1e-12);
  auto w = m.mean_view_weights(ctx);
  CHECK(w == std::vector<double>{0.5, 0.5});
}

TEST_CASE("K=1 decode matches the single-view path bit for bit") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    MultiViewModel<float> m(small_config({views::ViewKind::global}, seed));
    std::mt19937_64 rng(seed);
    Tape<float> t(false);
    auto v = random_view(rng, 5 + seed * 3, 1 + seed % 3, 30);
    auto prev = random_prefix(rng, 1 + seed * 2, 30);
    auto ref = m.decode_single_view(t, m.encode_view(t, v), prev);
    std::vector<EncodedView<float>> one{m.encode_view(t, v)};
    auto ctx = m.prepare(t, one);
    CHECK(ctx.weights[0].value().data == std::vector<float>{1.0f});
    CHECK(m.decode(t, ctx, prev).value() == ref.value());
  }
}

TEST_CASE("decoder contracts") {
  MultiViewModel<double> m(small_config());
  std::mt19937_64 rng(6);
  Tape<double> t(false);
  std::vector<EncodedView<double>> views{m.encode_view(t, random_view(rng, 10, 2, 30)),
                                         m.encode_view(t, random_view(rng, 14, 4, 30))};
  auto ctx = m.prepare(t, views);
  auto prev = random_prefix(rng, 8, 30);
  auto logits = m.decode(t, ctx, prev);
  CHECK(logits.rows() == 8);
  CHECK(logits.cols() == 30);
  auto probs = ad::softmax(logits);
  for (std::size_t i = 0; i < 8; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 30; ++j) s += probs.value()(i, j);
    CHECK(std::abs(s - 1) < 1e-6);
  }
  CHECK(m.decode(t, ctx, prev).value() == logits.value());
  auto last = m.decode(t, ctx, prev, true);
  CHECK(std::equal(last.value().data.begin(), last.value().data.end(), logits.value().row(7)));

  for (std::size_t j = 1; j < 8; ++j) {
    auto changed = prev;
    changed[j] = changed[j] == 7 ? 8 : 7;
    auto other = m.decode(t, ctx, changed);
    for (std::size_t i = 0; i < j; ++i)
      CHECK(std::equal(other.value().row(i), other.value().row(i) + 30, logits.value().row(i)));
  }

  CHECK_THROWS(m.decode(t, ctx, std::vector<int>{7, 8}));
  CHECK_THROWS(m.decode(t, ctx, std::vector<int>{corpus::kBos, 30}));
  CHECK_THROWS(m.decode(t, ctx, random_prefix(rng, 13, 30)));
  CHECK_THROWS(m.prepare(t, {}));
}

TEST_CASE("negative log-likelihood") {
  Tape<double> t;
  const std::vector<int> targets{3, 7, 19};
  auto uniform = nll_loss(t.constant(Tensor<double>(3, 20, 0.25)), targets, corpus::kPad);
  CHECK(uniform.value().data[0] == doctest::Approx(std::log(20.0)).epsilon(1e-12));
  CHECK(std::abs(uniform.value().data[0] - 2.9957) < 1e-4);

  Tensor<double> sharp(3, 20, -15.0);
  for (std::size_t i = 0; i < 3; ++i) sharp(i, targets[i]) = 15.0;
  CHECK(nll_loss(t.constant(sharp), targets, corpus::kPad).value().data[0] < 1e-9);

  const std::vector<int> padded{3, corpus::kPad, corpus::kPad};
  auto [total, count] = nll_sum(t.constant(Tensor<double>(3, 20, 0.0)), padded, corpus::kPad);
  CHECK(count == 1);
  CHECK(total.value().data[0] == doctest::Approx(std::log(20.0)));
  const std::vector<int> all_pad(3, corpus::kPad);
  CHECK_THROWS(nll_loss(t.constant(Tensor<double>(3, 20)), all_pad, corpus::kPad));
  CHECK_THROWS(nll_loss(t.constant(Tensor<double>(2, 20)), targets, corpus::kPad));

  std::mt19937_64 rng(7);
  for (int i = 0; i < 20; ++i)
    CHECK(nll_loss(t.constant(ad::normal_tensor<double>(3, 20, 5.0, rng)), targets, corpus::kPad).value().data[0] >= 0);
}

TEST_CASE("miniature end-to-end gradient check") {
  auto rep = miniature_grad_check(2);
  CAPTURE(rep.worst_param);
  CHECK(rep.max_rel_error < 1e-4);
  MultiViewModel<double> mini(miniature_config(2, 0.5));
  std::size_t coords = 0;
  for (const auto& p : mini.params()) coords += p.value.size();
  CHECK(rep.coordinates == coords);
}
