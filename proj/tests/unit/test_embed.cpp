#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "mvsum/embed.hpp"
#include "mvsum/error.hpp"
#include "oracles.hpp"

using namespace mvsum;
using namespace mvsum::embed;

namespace {

corpus::Conversation conv_of(std::string id, std::vector<std::string> texts) {
  corpus::Conversation c;
  c.id = std::move(id);
  for (auto& t : texts) c.utterances.push_back({"spk", std::move(t)});
  return c;
}

double norm(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::vector<corpus::Conversation> small_corpus() {
  return {conv_of("a", {"we meet at the park", "see you at the park", "", "qqq zzz"}),
          conv_of("b", {"dinner tonight ?", "sure , dinner at eight", "we meet at the park"})};
}

}  // namespace

TEST_CASE("idf values") {
  std::vector<corpus::Conversation> c{conv_of("x", {"a b", "a"})};
  auto m = fit_tfidf(c, 8, 1);
  CHECK(m.num_docs == 2);
  CHECK(m.idf[m.token_index.at("a")] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.idf[m.token_index.at("b")] == doctest::Approx(std::log(1.5) + 1).epsilon(1e-12));
  CHECK(m.idf[m.token_index.at("b")] == doctest::Approx(1.4055).epsilon(1e-4));
  for (double v : m.idf) CHECK(v > 0);
  CHECK_THROWS(fit_tfidf(std::vector<corpus::Conversation>{}, 8, 1));
  CHECK_THROWS(fit_tfidf(c, 7, 1));
}

TEST_CASE("projection is fixed by the seed") {
  auto corpus = small_corpus();
  auto m1 = fit_tfidf(corpus, 16, 42), m2 = fit_tfidf(corpus, 16, 42), m3 = fit_tfidf(corpus, 16, 43);
  CHECK(m1.projection == m2.projection);
  CHECK(m1.projection != m3.projection);
  auto e1 = embed_corpus(m1, corpus), e2 = embed_corpus(m2, corpus);
  for (const auto& [id, e] : e1) CHECK(e.data == e2.at(id).data);
}

TEST_CASE("embedding rows match a direct tf-idf projection") {
  auto corpus = small_corpus();
  auto m = fit_tfidf(corpus, 16, 3);
  auto e = embed_conversation(m, corpus[1]);
  for (std::size_t i = 0; i < corpus[1].size(); ++i) {
    std::vector<double> raw(16, 0.0);
    for (const auto& t : corpus::tokenize(corpus[1].utterances[i].text)) {
      const std::size_t idx = m.token_index.at(t);
      for (std::size_t j = 0; j < 16; ++j) raw[j] += m.idf[idx] * m.projection[idx * 16 + j];
    }
    const double n = norm(raw);
    for (std::size_t j = 0; j < 16; ++j) CHECK(e.row(i)[j] == doctest::Approx(raw[j] / n).epsilon(1e-12));
  }
}

TEST_CASE("unit rows, zero rows and cosine") {
  auto corpus = small_corpus();
  auto m = fit_tfidf(std::span(corpus).subspan(1), 32, 9);  // conversation a is unseen
  auto e = embed_conversation(m, corpus[0]);
  for (std::size_t i = 0; i < e.rows; ++i) {
    const double n = norm(e.row(i));
    if (n != 0) {
      CHECK(std::abs(n - 1) < 1e-9);
      CHECK(cosine(e.row(i), e.row(i)) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  CHECK(norm(e.row(2)) == 0);  // empty text
  CHECK(norm(e.row(3)) == 0);  // only unseen tokens
  CHECK(cosine(e.row(3), e.row(0)) == 0);
  CHECK(cosine(e.row(0), e.row(1)) == cosine(e.row(1), e.row(0)));

  auto eb = embed_conversation(m, corpus[1]);
  // "we meet at the park" in both conversations
  CHECK(std::vector<double>(e.row(0).begin(), e.row(0).end()) == std::vector<double>(eb.row(2).begin(), eb.row(2).end()));

  std::vector<double> z(4, 0.0);
  normalize(z);
  CHECK(z == std::vector<double>(4, 0.0));
}

TEST_CASE("embedding JSONL round trip") {
  auto corpus = small_corpus();
  auto t = embed_corpus(fit_tfidf(corpus, 8, 1), corpus);
  std::stringstream ss;
  write_embeddings(ss, t);
  auto back = read_embeddings(ss);
  REQUIRE(back.size() == t.size());
  for (const auto& [id, e] : t) {
    CHECK(back.at(id).rows == e.rows);
    for (std::size_t i = 0; i < e.data.size(); ++i) CHECK(back.at(id).data[i] == doctest::Approx(e.data[i]).epsilon(1e-15));
  }
}

namespace {

void write_external(const std::filesystem::path& path, const std::vector<corpus::Conversation>& convs, std::size_t dim,
                    std::mt19937_64& rng, std::size_t drop_row_of = SIZE_MAX, std::size_t bad_dim_of = SIZE_MAX) {
  std::normal_distribution<double> g(0, 3);
  std::ofstream f(path);
  f.precision(17);
  for (std::size_t c = 0; c < convs.size(); ++c) {
    const std::size_t d = c == bad_dim_of ? dim / 2 : dim;
    const std::size_t rows = convs[c].size() - (c == drop_row_of ? 1 : 0);
    f << "{\"id\":\"" << convs[c].id << "\",\"dim\":" << d << ",\"vectors\":[";
    for (std::size_t i = 0; i < rows; ++i) {
      f << (i ? ",[" : "[");
      for (std::size_t j = 0; j < d; ++j) f << (j ? "," : "") << g(rng);
      f << "]";
    }
    f << "]}\n";
  }
}

}  // namespace

TEST_CASE("load_external accepts a 768-dimensional ten-conversation file") {
  std::vector<corpus::Conversation> convs;
  for (int i = 0; i < 10; ++i) {
    std::vector<std::string> texts;
    for (int j = 0; j <= i % 4; ++j) texts.push_back("utterance " + std::to_string(j));
    convs.push_back(conv_of("c" + std::to_string(i), texts));
  }
  auto dir = oracle::temp_dir("embed");
  std::mt19937_64 rng(11);
  write_external(dir / "ok.jsonl", convs, 768, rng);
  auto t = load_external((dir / "ok.jsonl").string(), convs);
  CHECK(t.size() == 10);
  for (const auto& c : convs) {
    const auto& e = t.at(c.id);
    CHECK(e.dim == 768);
    CHECK(e.rows == c.size());
    for (std::size_t i = 0; i < e.rows; ++i) CHECK(std::abs(norm(e.row(i)) - 1) < 1e-9);
  }
  CHECK_NOTHROW(validate(t, convs));

  write_external(dir / "short.jsonl", convs, 768, rng, 3);
  try {
    load_external((dir / "short.jsonl").string(), convs);
    FAIL("expected a row count error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("row count mismatch") != std::string::npos);
    CHECK(std::string(e.what()).find("c3") != std::string::npos);
  }

  write_external(dir / "dim.jsonl", convs, 768, rng, SIZE_MAX, 5);
  CHECK_THROWS_AS(load_external((dir / "dim.jsonl").string(), convs), FormatError);

  auto fewer = convs;
  fewer.push_back(conv_of("missing", {"x"}));
  CHECK_THROWS_AS(load_external((dir / "ok.jsonl").string(), fewer), FormatError);
  CHECK_THROWS(load_external((dir / "nope.jsonl").string(), convs));
  std::filesystem::remove_all(dir);
}
