#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "mvsum/error.hpp"
#include "mvsum/stagehmm.hpp"
#include "oracles.hpp"

using namespace mvsum;
using namespace mvsum::stage;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

embed::EmbeddingMatrix obs_of(std::size_t dim, std::vector<double> data) {
  return {"o", data.size() / dim, dim, std::move(data)};
}

// Draws sequences from a planted left-to-right model.
std::vector<embed::EmbeddingMatrix> sample_corpus(const HmmModel& m, std::size_t count, std::mt19937_64& rng) {
  std::vector<embed::EmbeddingMatrix> out;
  std::uniform_real_distribution<double> u(0, 1);
  for (std::size_t c = 0; c < count; ++c) {
    const std::size_t n = 8 + rng() % 8;
    embed::EmbeddingMatrix e{"s" + std::to_string(c), n, m.dim, std::vector<double>(n * m.dim)};
    std::size_t s = 0;
    for (std::size_t t = 0; t < n; ++t) {
      if (t > 0 && s + 1 < m.states && u(rng) < std::exp(m.log_transition(s, s + 1))) ++s;
      for (std::size_t j = 0; j < m.dim; ++j) {
        std::normal_distribution<double> g(m.means[s * m.dim + j], std::sqrt(m.variances[s * m.dim + j]));
        e.data[t * m.dim + j] = g(rng);
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

TEST_CASE("left_to_right skeleton and invariant checks") {
  auto m = left_to_right(4, 3);
  CHECK_NOTHROW(check_invariants(m));
  for (std::size_t i = 0; i < 4; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      row += std::exp(m.log_transition(i, j));
      if (j != i && j != i + 1) CHECK(m.log_transition(i, j) == -kInf);
    }
    CHECK(std::abs(row - 1) < 1e-12);
  }
  CHECK(m.log_transition(3, 3) == 0.0);
  CHECK(m.log_init[0] == 0.0);
  for (std::size_t k = 1; k < 4; ++k) CHECK(m.log_init[k] == -kInf);

  auto skip = m;
  skip.log_trans[0 * 4 + 2] = std::log(0.1);
  CHECK_THROWS(check_invariants(skip));
  auto unnorm = m;
  unnorm.log_trans[0] = std::log(0.7);
  CHECK_THROWS(check_invariants(unnorm));
  auto start = m;
  start.log_init[1] = std::log(0.5);
  CHECK_THROWS(check_invariants(start));
  auto var = m;
  var.variances[2] = 1e-4;
  CHECK_THROWS(check_invariants(var));
}

TEST_CASE("forward-backward single observation") {
  std::mt19937_64 rng(2);
  auto m = oracle::random_hmm(3, 2, rng);
  auto o = obs_of(2, {0.3, -0.4});
  auto p = forward_backward(m, o);
  CHECK(p.loglik == doctest::Approx(oracle::log_gauss_diag({0.3, -0.4}, m, 0)).epsilon(1e-12));
  CHECK(p.gamma == std::vector<double>{1, 0, 0});
}

TEST_CASE("forward-backward agrees with path enumeration") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t k = 1 + rng() % 3, n = 1 + rng() % 6, d = 1 + rng() % 3;
    auto m = oracle::random_hmm(k, d, rng);
    auto o = oracle::random_obs(n, d, rng);
    auto brute = oracle::hmm_brute_force(m, o);
    auto p = forward_backward(m, o);
    CHECK(std::abs(p.loglik - brute.loglik) < 1e-9);
    REQUIRE(p.gamma.size() == n * k);
    for (std::size_t t = 0; t < n; ++t) {
      double row = 0;
      for (std::size_t s = 0; s < k; ++s) row += p.gamma[t * k + s];
      CHECK(std::abs(row - 1) < 1e-9);
    }
    // Posterior of each (t, state) against enumeration.
    const auto paths = oracle::legal_paths(n, k);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t s = 0; s < k; ++s) {
        double mass = 0;
        for (const auto& path : paths)
          if (path[t] == s) mass += std::exp(oracle::path_log_score(m, o, path) - brute.loglik);
        CHECK(std::abs(p.gamma[t * k + s] - mass) < 1e-9);
      }
    for (std::size_t t = 0; t + 1 < n; ++t) {
      double total = 0;
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) total += p.xi[(t * k + a) * k + b];
      CHECK(std::abs(total - 1) < 1e-9);
    }
  }
}

TEST_CASE("forward-backward errors") {
  auto m = left_to_right(2, 2);
  CHECK_THROWS(forward_backward(m, embed::EmbeddingMatrix{"e", 0, 2, {}}));
  CHECK_THROWS_AS(forward_backward(m, obs_of(2, {0.1, std::nan("")})), NumericError);
  CHECK_THROWS_AS(forward_backward(m, obs_of(3, {0.1, 0.2, 0.3})), ShapeError);
}

TEST_CASE("viterbi examples") {
  auto m = left_to_right(2, 1);
  m.means = {0.0, 10.0};
  auto a = viterbi(m, obs_of(1, {0.0, 10.0}));
  CHECK(a.path == std::vector<std::size_t>{0, 1});
  CHECK(a.segmentation == Segmentation{{0, 0}, {1, 1}});

  CHECK(viterbi(m, obs_of(1, {10.0})).path == std::vector<std::size_t>{0});

  auto sticky = left_to_right(3, 1);
  sticky.log_trans[0] = std::log(0.8);
  sticky.log_trans[1] = std::log(0.2);
  sticky.log_trans[4] = std::log(0.8);
  sticky.log_trans[5] = std::log(0.2);
  auto s = viterbi(sticky, obs_of(1, {0.5, 0.5, 0.5, 0.5}));
  CHECK(s.path == std::vector<std::size_t>(4, 0));

  // self = advance = 0.5 and identical emissions: paths 00 and 01 tie.
  auto tie = left_to_right(3, 1);
  CHECK(viterbi(tie, obs_of(1, {0.0, 0.0})).path == std::vector<std::size_t>{0, 0});
}

TEST_CASE("viterbi agrees with enumerated argmax and emits legal paths") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 80; ++trial) {
    const std::size_t k = 1 + rng() % 3, n = 1 + rng() % 6, d = 1 + rng() % 2;
    auto m = oracle::random_hmm(k, d, rng);
    auto o = oracle::random_obs(n, d, rng);
    auto brute = oracle::hmm_brute_force(m, o);
    auto v = viterbi(m, o);
    CHECK(v.path == brute.best);
    CHECK(std::abs(v.log_score - brute.best_score) < 1e-9);
    CHECK(v.path[0] == 0);
    for (std::size_t t = 1; t < n; ++t) CHECK((v.path[t] == v.path[t - 1] || v.path[t] == v.path[t - 1] + 1));
    CHECK(is_partition(v.segmentation, n));
    CHECK(v.segmentation.size() <= k);
  }
}

TEST_CASE("initial model uses equal chunks") {
  std::vector<embed::EmbeddingMatrix> seqs{obs_of(1, {1, 1, 5, 5}), obs_of(1, {1, 5})};
  auto m = initial_model(2, seqs);
  CHECK(m.means == std::vector<double>{1, 5});
  CHECK(m.variances == std::vector<double>{kVarianceFloor, kVarianceFloor});
  CHECK_NOTHROW(check_invariants(m));
}

TEST_CASE("EM recovers a planted model with monotone likelihood") {
  std::mt19937_64 rng(123);
  auto truth = left_to_right(3, 2);
  truth.means = {0, 0, 3, 0, 0, 3};
  truth.variances = std::vector<double>(6, 0.1);
  for (std::size_t s = 0; s < 2; ++s) {
    truth.log_trans[s * 3 + s] = std::log(0.7);
    truth.log_trans[s * 3 + s + 1] = std::log(0.3);
  }
  auto data = sample_corpus(truth, 80, rng);
  auto res = em_fit(initial_model(3, data), data, {100, 1e-8});
  for (std::size_t i = 1; i < res.loglik.size(); ++i) CHECK(res.loglik[i] - res.loglik[i - 1] >= -1e-8);
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(res.model.means[i] - truth.means[i]) < 0.1);
  CHECK_NOTHROW(check_invariants(res.model));
}

TEST_CASE("EM monotone over twenty iterations on random data") {
  std::mt19937_64 rng(5);
  std::vector<embed::EmbeddingMatrix> data;
  for (int i = 0; i < 30; ++i) {
    auto e = oracle::random_obs(2 + rng() % 10, 4, rng);
    for (std::size_t t = 0; t < e.rows; ++t) embed::normalize(e.row(t));
    data.push_back(e);
  }
  auto res = em_fit(initial_model(4, data), data, {20, -1.0});
  CHECK(res.iterations == 20);
  CHECK(res.loglik.size() == 21);
  for (std::size_t i = 1; i < res.loglik.size(); ++i) CHECK(res.loglik[i] - res.loglik[i - 1] >= -1e-8);
}

TEST_CASE("EM degenerate corpora") {
  std::vector<embed::EmbeddingMatrix> same;
  for (int i = 0; i < 5; ++i) same.push_back(obs_of(2, {0.6, 0.8, 0.6, 0.8, 0.6, 0.8}));
  auto res = em_fit(initial_model(3, same), same);
  for (double v : res.model.variances) CHECK(v == kVarianceFloor);
  CHECK(res.iterations <= 50);

  std::mt19937_64 rng(1);
  std::vector<embed::EmbeddingMatrix> singles;
  for (int i = 0; i < 6; ++i) singles.push_back(oracle::random_obs(1, 2, rng));
  auto init = initial_model(3, singles);
  auto fit = em_fit(init, singles);
  for (std::size_t s = 1; s < 3; ++s)
    for (std::size_t j = 0; j < 2; ++j) {
      CHECK(fit.model.means[s * 2 + j] == init.means[s * 2 + j]);
      CHECK(fit.model.variances[s * 2 + j] == init.variances[s * 2 + j]);
    }
  for (std::size_t i = 0; i < 9; ++i) CHECK(fit.model.log_trans[i] == init.log_trans[i]);
}

TEST_CASE("stage_view, top words and model JSON") {
  corpus::Conversation c;
  c.id = "one";
  c.utterances = {{"a", "hello there"}};
  auto m = left_to_right(4, 2);
  CHECK(stage_view(c, obs_of(2, {0.6, 0.8}), m) == Segmentation{{0, 0}});
  CHECK_THROWS(stage_view(c, obs_of(2, {0.6, 0.8, 0.6, 0.8}), m));

  std::mt19937_64 rng(3);
  auto r = oracle::random_hmm(3, 2, rng);
  std::stringstream ss;
  save_model(ss, r);
  auto back = load_model(ss);
  CHECK(back.states == 3);
  CHECK(back.dim == 2);
  for (std::size_t i = 0; i < r.means.size(); ++i) CHECK(back.means[i] == doctest::Approx(r.means[i]).epsilon(1e-14));
  for (std::size_t i = 0; i < r.log_trans.size(); ++i) {
    if (std::isinf(r.log_trans[i])) CHECK(std::isinf(back.log_trans[i]));
    else CHECK(back.log_trans[i] == doctest::Approx(r.log_trans[i]).epsilon(1e-12));
  }
  std::istringstream bad("{\"K\": 2}");
  CHECK_THROWS_AS(load_model(bad), FormatError);

  corpus::Conversation two;
  two.id = "t";
  two.utterances = {{"a", "hello hello"}, {"b", "bye"}};
  auto lr = left_to_right(2, 1);
  lr.means = {0, 10};
  embed::EmbeddingTable table{{"t", obs_of(1, {0, 10})}};
  auto words = top_words(lr, std::vector<corpus::Conversation>{two}, table, 3);
  REQUIRE(words.size() == 2);
  CHECK(words[0].front() == "hello");
  CHECK(words[1].front() == "bye");
}
