#include <doctest.h>

#include <cmath>

#include "fmm/data.hpp"
#include "fmm/error.hpp"

using namespace fmm;
using namespace fmm::data;

namespace {

int count_evidence(const TaskConfig& c, const Observation& o, int label) {
  const auto ev = c.evidence_tokens(label);
  int n = 0;
  for (int t : o.tokens) n += std::find(ev.begin(), ev.end(), t) != ev.end() ? 1 : 0;
  return n;
}

}  // namespace

TEST_CASE("keyword task: one evidence token of the label's class") {
  TaskConfig c;
  c.train_size = 300;
  const auto s = generate(c);
  CHECK(s.train.size() == 300);
  CHECK(s.validation.size() == 1000);
  CHECK(s.test.size() == 200);
  const ModelConfig mc = c.model_config({});
  for (const auto& o : s.train.observations) {
    CHECK_NOTHROW(validate_observation(o, mc));
    CHECK(count_evidence(c, o, o.label) == 1);
    CHECK(count_evidence(c, o, 1 - o.label) == 0);
    // Masking the evidence leaves only filler, identical in law across labels.
    for (int p : o.maskable) CHECK(o.tokens[static_cast<std::size_t>(p)] >= 3);
  }
}

TEST_CASE("redundant task: exactly r copies") {
  TaskConfig c;
  c.kind = TaskKind::RedundantKeyword;
  c.redundancy = 3;
  c.train_size = 200;
  for (const auto& o : generate(c).train.observations) CHECK(count_evidence(c, o, o.label) == 3);
}

TEST_CASE("vocabulary too small") {
  TaskConfig c;
  c.vocab_size = 7;  // 3 specials + 4 evidence, no filler left
  CHECK_THROWS_AS(generate(c), ConfigError);
  c.vocab_size = 64;
  c.redundancy = 2;  // keyword task requires r = 1
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("label and length are independent") {
  TaskConfig c;
  const auto ds = generate_split(c, Split::Train, 10000);
  double ml = 0, my = 0;
  for (const auto& o : ds.observations) {
    ml += o.length;
    my += o.label;
  }
  ml /= 10000;
  my /= 10000;
  double sxy = 0, sxx = 0, syy = 0;
  for (const auto& o : ds.observations) {
    sxy += (o.length - ml) * (o.label - my);
    sxx += (o.length - ml) * (o.length - ml);
    syy += (o.label - my) * (o.label - my);
  }
  CHECK(std::abs(sxy / std::sqrt(sxx * syy)) < 0.05);
}

TEST_CASE("generation is reproducible and splits differ") {
  TaskConfig c;
  c.train_size = 50;
  const auto a = generate(c);
  const auto b = generate(c);
  CHECK(encode_dataset(a.train, c) == encode_dataset(b.train, c));
  CHECK(a.train.observations[0] != a.validation.observations[0]);
}

TEST_CASE("metrics") {
  const int y[] = {0, 1, 1, 0};
  const int all[] = {0, 1, 1, 0};
  const int comp[] = {1, 0, 0, 1};
  CHECK(evaluate_metric(all, y, Metric::Accuracy, 2) == 1.0);
  CHECK(evaluate_metric(all, y, Metric::MacroF1, 2) == 1.0);
  CHECK(evaluate_metric(comp, y, Metric::Accuracy, 2) == 0.0);
  // Reference from an independent implementation (tests/oracles).
  const int labels[] = {0, 0, 0, 1, 1, 2, 2, 2, 2, 0};
  const int preds[] = {0, 0, 1, 1, 2, 2, 2, 0, 2, 0};
  CHECK(evaluate_metric(preds, labels, Metric::MacroF1, 3) == doctest::Approx(0.6666666666666666).epsilon(1e-12));
  const int short_preds[] = {0};
  CHECK_THROWS_AS(evaluate_metric(short_preds, y, Metric::Accuracy, 2), ContractError);
}

TEST_CASE("class majority") {
  Dataset ds;
  for (int i = 0; i < 10; ++i) {
    Observation o;
    o.label = i < 7 ? 0 : 1;
    ds.observations.push_back(o);
  }
  CHECK(class_majority(ds, Metric::Accuracy, 2) == doctest::Approx(0.7));
  // Constant predictor: F1(class 0) = 14/17, F1(class 1) = 0.
  CHECK(class_majority(ds, Metric::MacroF1, 2) == doctest::Approx(7.0 / 17.0).epsilon(1e-12));
  for (int i = 0; i < 4; ++i) ds.observations[static_cast<std::size_t>(i)].label = 1;
  // 3 zeros vs 7 ones; then a 5/5 tie goes to class 0.
  CHECK(class_majority(ds, Metric::Accuracy, 2) == doctest::Approx(0.7));
  ds.observations[9].label = 0;
  ds.observations[8].label = 0;
  CHECK(class_majority(ds, Metric::Accuracy, 2) == doctest::Approx(0.5));
  Dataset empty;
  CHECK_THROWS(class_majority(empty, Metric::Accuracy, 2));

  TaskConfig c;
  c.priors = {0.7, 0.3};
  c.test_size = 4000;
  const auto t = generate(c).test;
  CHECK(class_majority(t, Metric::Accuracy, 2) == doctest::Approx(0.7).epsilon(0.03));
}

TEST_CASE("dataset file round trip") {
  TaskConfig c;
  c.train_size = 20;
  const auto ds = generate(c).train;
  nlohmann::json header;
  const auto back = decode_dataset(encode_dataset(ds, c, {{"k", 1}}), &header);
  CHECK(back == ds);
  CHECK(header.at("version") == 1);
  CHECK(header.at("extra").at("k") == 1);
  CHECK_THROWS_AS(decode_dataset("{\"format\":\"nope\"}\n"), FormatError);
}
