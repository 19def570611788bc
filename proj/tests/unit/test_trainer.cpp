#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "mvsum/error.hpp"
#include "mvsum/trainer.hpp"

using namespace mvsum;
using namespace mvsum::trainer;

namespace {

// Synthetic corpus, segmenters and examples from a one-step smoke run.
SmokeReport smoke_data(std::size_t pairs, std::vector<views::ViewKind> kinds = {views::ViewKind::topic,
                                                                                  views::ViewKind::stage}) {
  SmokeOptions o;
  o.pairs = pairs;
  o.views = std::move(kinds);
  o.max_steps = 1;
  return overfit_smoke(o);
}

}  // namespace

TEST_CASE("teacher forcing pairs") {
  const std::vector<int> s{7, 8, 9};
  auto [prev, target] = teacher_forcing_pair(s, 100);
  CHECK(prev == std::vector<int>{corpus::kBos, 7, 8, 9});
  CHECK(target == std::vector<int>{7, 8, 9, corpus::kEos});
  auto [p2, t2] = teacher_forcing_pair(s, 3);
  CHECK(p2.size() == 3);
  CHECK(t2.size() == 3);
  CHECK(p2[0] == corpus::kBos);
  for (std::size_t i = 0; i + 1 < p2.size(); ++i) CHECK(p2[i + 1] == t2[i]);
}

TEST_CASE("gradient clipping") {
  ad::Parameter<double> a("a", ad::Tensor<double>(1, 2)), b("b", ad::Tensor<double>(1, 1));
  a.grad.data = {3.0, 0.0};
  b.grad.data = {4.0};
  std::vector<ad::Parameter<double>*> ps{&a, &b};
  CHECK(clip_gradients<double>(ps, 1.0) == doctest::Approx(5.0));
  const double n = std::sqrt(a.grad.data[0] * a.grad.data[0] + b.grad.data[0] * b.grad.data[0]);
  CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(a.grad.data[0] / b.grad.data[0] == doctest::Approx(0.75));
  a.grad.data = {0.3, 0.4};
  b.grad.data = {0.0};
  CHECK(clip_gradients<double>(ps, 1.0) == doctest::Approx(0.5));
  CHECK(a.grad.data == std::vector<double>{0.3, 0.4});
}

TEST_CASE("synthetic dialogues") {
  auto d = synthetic_dialogues(10, 7);
  REQUIRE(d.size() == 10);
  std::set<std::string> ids;
  for (const auto& c : d) {
    CHECK(ids.insert(c.id).second);
    CHECK(c.size() == 7);
    REQUIRE(c.summary);
    CHECK(c.summary->find(" will meet ") != std::string::npos);
  }
  auto again = synthetic_dialogues(10, 7);
  CHECK(*again[3].summary == *d[3].summary);
}

TEST_CASE("config parsing") {
  std::istringstream in("# comment\nbase_lr = 0.002\n\n batch_size= 4 \nviews = topic,stage\nshuffle = false\nbase_lr=0.005\n");
  auto kv = parse_key_values(in);
  CHECK(kv.at("base_lr") == "0.005");
  TrainConfig tc;
  model::ModelConfig mc;
  apply_config(kv, tc, mc);
  CHECK(tc.base_lr == 0.005);
  CHECK(tc.batch_size == 4);
  CHECK(!tc.shuffle);
  CHECK(mc.views.size() == 2);
  CHECK_THROWS(apply_config({{"learning_rate", "1"}}, tc, mc));
  CHECK_THROWS(apply_config({{"batch_size", "-2"}}, tc, mc));
  CHECK_THROWS(apply_config({{"base_lr", "fast"}}, tc, mc));
  std::istringstream bad("no equals sign\n");
  CHECK_THROWS_AS(parse_key_values(bad), FormatError);
  TrainConfig z;
  z.batch_size = 0;
  CHECK_THROWS(z.validate());
  z = {};
  z.aux_lr = 0;
  CHECK_THROWS(z.validate());
}

TEST_CASE("examples need summaries") {
  auto rep = smoke_data(2);
  auto convs = rep.corpus;
  convs[1].summary.reset();
  model::ModelConfig mc = rep.model->config();
  CHECK_THROWS(make_examples(convs, mc.views, rep.vectors, rep.segmenters, rep.vocab, mc));
  auto ok = make_examples(rep.corpus, mc.views, rep.vectors, rep.segmenters, rep.vocab, mc);
  REQUIRE(ok.size() == 2);
  CHECK(ok[0].views.size() == 2);
  CHECK(ok[0].summary == rep.vocab.encode(corpus::tokenize(*rep.corpus[0].summary)));
}

TEST_CASE("first step loss is close to ln V") {
  auto rep = smoke_data(10);
  model::MultiViewModel<float> fresh(rep.model->config());
  TrainConfig tc;
  tc.max_steps = 1;
  auto curve = train<float>(fresh, rep.examples, tc);
  const double lnv = std::log(double(rep.vocab.size()));
  CHECK(std::abs(curve[0].loss - lnv) < 0.1 * lnv);
  CHECK(curve[0].grad_norm > 0);
  std::ostringstream os;
  write_loss_csv(os, curve);
  CHECK(os.str().rfind("step,loss,grad_norm\n1,", 0) == 0);
}

TEST_CASE("fixed batch loss strictly decreases over ten steps") {
  auto rep = smoke_data(10);
  model::MultiViewModel<float> m(rep.model->config());
  TrainConfig tc;
  tc.batch_size = rep.examples.size();
  tc.max_steps = 10;
  tc.shuffle = false;
  auto curve = train<float>(m, rep.examples, tc);
  REQUIRE(curve.size() == 10);
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].loss < curve[i - 1].loss);
}

TEST_CASE("training is deterministic in double precision") {
  auto rep = smoke_data(4);
  auto run = [&] {
    model::MultiViewModel<double> m(rep.model->config());
    TrainConfig tc;
    tc.batch_size = 3;
    tc.max_steps = 6;
    tc.shuffle = true;
    auto curve = train<double>(m, rep.examples, tc);
    std::vector<double> out;
    for (const auto& r : curve) out.insert(out.end(), {r.loss, r.grad_norm});
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("training errors") {
  auto rep = smoke_data(2);
  model::MultiViewModel<float> m(rep.model->config());
  TrainConfig tc;
  CHECK_THROWS(train<float>(m, std::span<const Example>(), tc));
  tc.max_steps = 5;
  m.find("out.w_p")->value.data[3] = std::numeric_limits<float>::quiet_NaN();
  try {
    train<float>(m, rep.examples, tc);
    FAIL("expected an abort");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("training aborted at step 1") != std::string::npos);
  }
}

TEST_CASE("callback stops training") {
  auto rep = smoke_data(2);
  model::MultiViewModel<float> m(rep.model->config());
  TrainConfig tc;
  tc.max_steps = 50;
  auto curve = train<float>(m, rep.examples, tc, [](const StepRecord& r) { return r.step < 3; });
  CHECK(curve.size() == 3);
}

TEST_CASE("a single pair is memorised within 300 steps") {
  SmokeOptions o;
  o.pairs = 1;
  o.max_steps = 300;
  o.eval_every = 10;
  auto rep = overfit_smoke(o);
  CHECK(rep.passed);
  CHECK(rep.steps < 300);
}

TEST_CASE("the global view alone also memorises ten pairs") {
  SmokeOptions o;
  o.views = {views::ViewKind::global};
  auto rep = overfit_smoke(o);
  CAPTURE(rep.steps);
  CHECK(rep.passed);
  CHECK(rep.accuracy >= 0.99);
  CHECK(rep.final_loss < 0.1);
}
