#include <doctest.h>

#include <random>

#include <nlohmann/json.hpp>

#include "mvsum/pipeline.hpp"
#include "mvsum/views.hpp"
#include "oracles.hpp"

using namespace mvsum;
using namespace mvsum::views;

namespace {

corpus::Conversation conv_n(std::size_t m, std::string text = "hi there") {
  corpus::Conversation c;
  c.id = "c" + std::to_string(m);
  for (std::size_t i = 0; i < m; ++i) c.utterances.push_back({i % 2 ? "b" : "a", text});
  return c;
}

corpus::Vocab vocab_for(const corpus::Conversation& c) {
  return corpus::build_vocab(std::span(&c, 1), 1000, 1);
}

std::size_t count_blk(const ViewTokenSeq& s) {
  return std::size_t(std::count(s.tokens.begin(), s.tokens.end(), int(corpus::kBlk)));
}

}  // namespace

TEST_CASE("view kinds parse and print") {
  for (ViewKind k : {ViewKind::global, ViewKind::discrete, ViewKind::topic, ViewKind::stage})
    CHECK(parse_view_kind(to_string(k)) == k);
  CHECK_THROWS(parse_view_kind("section"));
  CHECK(parse_view_list("topic,stage") == std::vector<ViewKind>{ViewKind::topic, ViewKind::stage});
  CHECK(join_view_list({ViewKind::topic, ViewKind::stage}) == "topic,stage");
  CHECK_THROWS(parse_view_list(""));
  CHECK_THROWS(parse_view_list("topic,topic"));
}

TEST_CASE("build_view segmentations") {
  auto c = conv_n(3);
  CHECK(build_view(c, ViewKind::global).segmentation == Segmentation{{0, 2}});
  CHECK(build_view(c, ViewKind::discrete).segmentation == Segmentation{{0, 0}, {1, 1}, {2, 2}});
  Segmentation seg{{0, 1}, {2, 2}};
  CHECK(build_view(c, ViewKind::topic, seg).segmentation == seg);
  CHECK(build_view(c, ViewKind::stage, seg).segmentation == seg);
  CHECK_THROWS(build_view(c, ViewKind::topic));
  CHECK_THROWS(build_view(c, ViewKind::stage, Segmentation{{0, 0}, {2, 2}}));
  CHECK_THROWS(build_view(corpus::Conversation{}, ViewKind::global));
}

TEST_CASE("render_view token layout") {
  corpus::Conversation c;
  c.id = "x";
  c.utterances = {{"A", "hi"}};
  auto v = vocab_for(c);
  auto s = render_view(build_view(c, ViewKind::global), c, v);
  CHECK(s.tokens == std::vector<int>{corpus::kBlk, corpus::kUtt, v.encode("a"), v.encode(":"), v.encode("hi")});
  CHECK(s.blk_positions == std::vector<std::size_t>{0});

  auto three = conv_n(3);
  auto tv = vocab_for(three);
  auto d = render_view(build_view(three, ViewKind::discrete), three, tv);
  CHECK(count_blk(d) == 3);
  CHECK(d.blk_positions.size() == 3);
}

TEST_CASE("render_view truncation contract") {
  // 60 blocks of blk, utt, speaker, ":", "w": 300 tokens.
  auto c = conv_n(60, "w");
  auto v = vocab_for(c);
  auto full = render_view(build_view(c, ViewKind::discrete), c, v, 1000);
  CHECK(full.tokens.size() == 60 * 5);
  auto cut = render_view(build_view(c, ViewKind::discrete), c, v, 256);
  CHECK(cut.tokens.size() == 256);
  CHECK(std::equal(cut.tokens.begin(), cut.tokens.end(), full.tokens.begin()));
  for (std::size_t p : cut.blk_positions) {
    CHECK(p < 256);
    CHECK(cut.tokens[p] == corpus::kBlk);
  }
  CHECK(count_blk(cut) == cut.blk_positions.size());
}

TEST_CASE("rendering invariants on random segmentations") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng() % 12;
    auto c = conv_n(m, trial % 2 ? "see you at 8pm !" : "ok");
    auto v = vocab_for(c);
    std::vector<std::size_t> cuts;
    for (std::size_t i = 1; i < m; ++i)
      if (rng() % 3 == 0) cuts.push_back(i);
    auto seg = from_boundaries(cuts, m);
    const std::size_t max_len = 4 + rng() % 80;
    auto s = render_view(build_view(c, ViewKind::topic, seg), c, v, max_len);
    CHECK(s.tokens.size() <= max_len);
    CHECK(s.tokens[0] == corpus::kBlk);
    CHECK(count_blk(s) == s.blk_positions.size());
    CHECK(std::is_sorted(s.blk_positions.begin(), s.blk_positions.end()));
    if (s.tokens.size() < max_len) CHECK(s.blk_positions.size() == seg.size());
    CHECK(s.tokens == render_view(build_view(c, ViewKind::topic, seg), c, v, max_len).tokens);
    // Distinct segmentations of the same conversation render differently when nothing is cut.
    auto g = render_view(build_view(c, ViewKind::global), c, v, 10000);
    auto d = render_view(build_view(c, ViewKind::discrete), c, v, 10000);
    if (m > 1) CHECK(g.tokens != d.tokens);
  }
}

TEST_CASE("JSON export lines") {
  auto c = conv_n(2);
  auto v = vocab_for(c);
  auto s = render_view(build_view(c, ViewKind::discrete), c, v);
  auto j = nlohmann::json::parse(to_json_line("c2", s));
  CHECK(j["view"] == "discrete");
  CHECK(j["blk_positions"].size() == 2);
  auto b = nlohmann::json::parse(blocks_json_line("c2", ViewKind::topic, {{0, 0}, {1, 1}}));
  CHECK(b["blocks"] == nlohmann::json::array({{1, 1}, {2, 2}}));
}

TEST_CASE("pipeline extraction needs vectors and segmenters") {
  auto c = conv_n(4);
  auto v = vocab_for(c);
  pipeline::Segmenters none;
  const std::vector<ViewKind> gd{ViewKind::global, ViewKind::discrete};
  auto views = pipeline::extract_views(c, gd, nullptr, none);
  CHECK(views.size() == 2);
  const std::vector<ViewKind> ts{ViewKind::topic, ViewKind::stage};
  CHECK_THROWS(pipeline::extract_views(c, ts, nullptr, none));
  embed::EmbeddingMatrix e{"c4", 4, 2, {1, 0, 1, 0, 0, 1, 0, 1}};
  CHECK_THROWS(pipeline::extract_views(c, ts, &e, none));  // no segmenters
  pipeline::Segmenters seg{topicseg::C99Config{}, stage::left_to_right(2, 2)};
  auto ok = pipeline::render_views(c, ts, &e, seg, v, 256);
  REQUIRE(ok.size() == 2);
  CHECK(ok[0].kind == ViewKind::topic);
  CHECK(ok[1].kind == ViewKind::stage);
}
