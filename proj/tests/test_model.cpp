#include <doctest.h>

#include <cmath>
#include <random>

#include "tale/grad_check.hpp"
#include "tale/model.hpp"

using namespace tale;

namespace {

ModelConfig small_config(std::size_t d = 8, WeightVariant variant = WeightVariant::polynomial) {
  ModelConfig cfg;
  cfg.d = d;
  cfg.dz = 4;
  cfg.n_demographics = 2;
  cfg.time_weight.variant = variant;
  cfg.loss.n_mc = 8;
  return cfg;
}

ModelState small_model(std::size_t n_codes, std::uint64_t seed, ModelConfig cfg) {
  auto vocab = std::make_shared<CodeVocabulary>(random_vocabulary(n_codes, 4, seed));
  return ModelState(vocab, cfg, seed);
}

EventSequence toy_sequence(std::size_t n_codes, std::size_t m, double gap = 0.4) {
  EventSequence s;
  for (std::size_t j = 0; j < m; ++j) s.events.push_back({gap * static_cast<double>(j), j % n_codes});
  s.horizon = gap * static_cast<double>(m);
  s.demographics = {0.3, 0.7};
  s.patient_id = "toy";
  return s;
}

void zero_final_layer(std::vector<Param*> group) {
  Param* w = group[group.size() - 2];
  Param* b = group[group.size() - 1];
  w->value.assign(w->size(), 0.0);
  b->value.assign(b->size(), 0.0);
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("intensity is non-negative for random models") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto model = small_model(5, seed, small_config());
    auto seq = toy_sequence(5, 6);
    for (double t : {0.0, 0.5, 1.3, 2.3}) CHECK(intensity(model, seq, t) >= 0.0);
  }
}

TEST_CASE("zeroed final intensity layer gives softplus(0) = ln 2") {
  auto model = small_model(5, 1, small_config());
  zero_final_layer(model.group("g_head"));
  auto seq = toy_sequence(5, 4);
  CHECK(intensity(model, seq, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("zeroed code head gives 0.5 probabilities of vocabulary width") {
  auto model = small_model(5, 2, small_config());
  zero_final_layer(model.group("f_head"));
  auto seq = toy_sequence(5, 4);
  auto probs = code_probs(model, seq, 1.0);
  REQUIRE(probs.size() == 5);
  for (double p : probs) CHECK(p == 0.5);
}

TEST_CASE("empty history is an error for intensity and code probabilities") {
  auto model = small_model(4, 3, small_config());
  EventSequence seq;
  seq.events = {{1.0, 0}, {2.0, 1}};
  seq.horizon = 2.0;
  seq.demographics = {0.1, 0.2};
  CHECK_THROWS_AS(intensity(model, seq, 0.5), DataError);
  CHECK_THROWS_AS(code_probs(model, seq, 0.5), DataError);
}

TEST_CASE("constant-intensity time loss has the closed form c^2 - 2cn/T") {
  // lambda == 0.5 over a 5-event sequence with T = 10
  Param theta("theta", {1});
  theta.value[0] = std::log(std::exp(0.5) - 1.0);  // softplus^-1(0.5)
  EventSequence seq = toy_sequence(3, 5, 1.0);
  seq.horizon = 10.0;

  Tape tape;
  auto lambda_at = [&](double, bool) -> std::optional<Tensor> {
    return softplus(reshape(tape.leaf(theta), {}));
  };
  double loss = loss_time_with(lambda_at, seq, 100000, 7).scalar();
  CHECK(loss == doctest::Approx(-0.25).epsilon(1e-9));
  CHECK(std::abs(loss + 0.25) < 0.01);  // Monte Carlo bound from the spec of the check
}

TEST_CASE("gradient descent on a constant intensity recovers n/T within 2%") {
  EventSequence seq = toy_sequence(3, 5, 1.0);
  seq.horizon = 10.0;
  Param theta("theta", {1});
  theta.value[0] = 0.3;
  double lr = 0.05;
  for (int step = 0; step < 4000; ++step) {
    theta.zero_grad();
    Tape tape;
    auto lambda_at = [&](double, bool) -> std::optional<Tensor> {
      return softplus(reshape(tape.leaf(theta), {}));
    };
    Tensor loss = loss_time_with(lambda_at, seq, 64, 1234 + step);
    tape.backward(loss);
    tape.flush_param_grads();
    theta.value[0] -= lr * theta.grad[0];
  }
  double c = std::log1p(std::exp(theta.value[0]));
  double target = 5.0 / 10.0;
  CHECK(std::abs(c - target) / target < 0.02);
}

TEST_CASE("model time loss skips the first event in the event sum") {
  auto cfg = small_config();
  cfg.loss.n_mc = 4;
  auto model = small_model(4, 5, cfg);
  // two events at t=0: both lack strictly-prior history, so only later events count
  EventSequence seq;
  seq.events = {{0.0, 0}, {0.0, 1}, {0.6, 2}, {1.1, 3}};
  seq.horizon = 1.5;
  seq.demographics = {0.5, 0.5};
  CHECK(std::isfinite(loss_time(model, seq, 16, 3)));

  EventSequence only_t0;
  only_t0.events = {{0.0, 0}, {0.0, 1}};
  only_t0.horizon = 1.0;
  only_t0.demographics = {0.5, 0.5};
  // event sum empty, MC term still evaluable
  CHECK(std::isfinite(loss_time(model, only_t0, 16, 3)));
}

TEST_CASE("focal code loss matches hand-evaluated values") {
  // all probabilities 0.5 with one positive and one negative code
  auto model = small_model(2, 6, small_config());
  zero_final_layer(model.group("f_head"));
  EventSequence seq;
  seq.events = {{0.0, 0}, {0.4, 0}, {0.9, 1}};
  seq.horizon = 1.0;
  seq.demographics = {0.3, 0.7};
  double loss = loss_code(model, seq, 1);
  double per_code = 0.25 * 0.25 * 0.95 * std::log(2.0);
  CHECK(loss == doctest::Approx(2.0 * per_code).epsilon(1e-12));
  CHECK(per_code == doctest::Approx(0.04116).epsilon(1e-3));

  // single code predicted at p = 0.95
  auto cfg1 = small_config();
  auto vocab1 = std::make_shared<CodeVocabulary>(random_vocabulary(1, 4, 7));
  ModelState m1(vocab1, cfg1, 7);
  for (Param* p : m1.group("f_head")) p->value.assign(p->size(), 0.0);
  m1.group("f_head").back()->value[0] = std::log(19.0);  // sigmoid -> 0.95
  EventSequence s1;
  s1.events = {{0.0, 0}, {0.4, 0}, {0.9, 0}};
  s1.horizon = 1.0;
  s1.demographics = {0.3, 0.7};
  double l1 = loss_code(m1, s1, 1);
  double expected = -0.25 * 0.95 * 0.05 * 0.05 * std::log(0.95);
  CHECK(l1 == doctest::Approx(expected).epsilon(1e-9));
  CHECK(expected == doctest::Approx(3.05e-5).epsilon(2e-3));
}

TEST_CASE("focal loss on a positive code strictly decreases as p rises") {
  auto vocab = std::make_shared<CodeVocabulary>(random_vocabulary(1, 4, 8));
  ModelState model(vocab, small_config(), 8);
  for (Param* p : model.group("f_head")) p->value.assign(p->size(), 0.0);
  EventSequence seq;
  seq.events = {{0.0, 0}, {0.4, 0}, {0.9, 0}};
  seq.horizon = 1.0;
  seq.demographics = {0.3, 0.7};
  double prev = 1e300;
  for (double logit = -3.0; logit <= 6.0; logit += 0.5) {
    model.group("f_head").back()->value[0] = logit;
    double l = loss_code(model, seq, 1);
    CHECK(l < prev);
    prev = l;
  }
}

TEST_CASE("code loss preconditions") {
  auto model = small_model(3, 9, small_config());
  auto seq = toy_sequence(3, 4);
  CHECK_THROWS_AS(loss_code(model, seq, 0), DataError);   // no prior history
  CHECK_THROWS_AS(loss_code(model, seq, 3), DataError);   // no later timestamp
  CHECK_THROWS_AS(loss_code(model, seq, 99), DataError);  // out of range
  CHECK(code_query_indices(seq) == std::vector<std::size_t>{1, 2});
  CHECK(code_target(seq, 1) == std::vector<std::size_t>{2});
}

TEST_CASE("joint loss is additive and respects gamma") {
  auto cfg = small_config();
  cfg.loss.n_mc = 8;
  cfg.loss.gamma_mix = 0.0;
  auto model = small_model(4, 10, cfg);
  auto seq = toy_sequence(4, 5);

  double j0 = loss_joint(model, seq, 42);
  double t0 = loss_time(model, seq, 8, 42);
  CHECK(j0 == t0);

  auto cfg2 = cfg;
  cfg2.loss.gamma_mix = 0.7;
  ModelState model2(model.vocab_ptr(), cfg2, 10);
  Tape tape;
  auto enc = model2.encoder(tape, seq);
  auto parts = loss_joint_t(tape, model2, enc, seq, 42);
  CHECK(parts.total.scalar() ==
        doctest::Approx(parts.time.scalar() + 0.7 * parts.code.scalar()).epsilon(1e-12));
}

TEST_CASE("task loss closed forms and class-weight validation") {
  auto model = small_model(4, 11, small_config());
  model.add_task_head("demo");
  auto& head = model.task_head("demo");
  for (auto& layer : head.layers) {
    layer.w.value.assign(layer.w.size(), 0.0);
    layer.b.value.assign(layer.b.size(), 0.0);
  }
  std::vector<EventSequence> seqs{toy_sequence(4, 5)};
  std::vector<TaskInstance> one{{0, 1.5, 1}};
  // p = 0.5, y = 1, w = 1
  CHECK(loss_task(model, "demo", seqs, one, 1.0) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // near-perfect positive prediction drives the loss under 1e-5
  head.layers.back().b.value[0] = 20.0;
  CHECK(loss_task(model, "demo", seqs, one, 1.0) < 1e-5);

  CHECK_THROWS_AS(loss_task(model, "demo", seqs, one, 0.0), ConfigError);  // single class, auto w

  std::vector<TaskInstance> both{{0, 1.5, 1}, {0, 1.9, 0}};
  CHECK(std::isfinite(loss_task(model, "demo", seqs, both)));
}

TEST_CASE("joint loss gradients agree with finite differences") {
  auto cfg = small_config(8);
  cfg.loss.n_mc = 4;
  auto model = small_model(4, 12, cfg);
  auto seq = toy_sequence(4, 4);

  auto eval = [&](bool with_grad) {
    Tape tape;
    auto enc = model.encoder(tape, seq);
    auto parts = loss_joint_t(tape, model, enc, seq, 99);
    if (with_grad) {
      tape.backward(parts.total);
      tape.flush_param_grads();
    }
    return parts.total.scalar();
  };
  // spot-check a slice through every stage of the pipeline
  std::vector<Param*> params;
  params.push_back(&model.q_base());
  for (Param* p : model.wfn().params()) params.push_back(p);
  auto gq = model.group("proj_q");
  params.push_back(gq[0]);
  params.push_back(gq[1]);
  auto gg = model.group("g_head");
  params.push_back(gg[0]);
  params.push_back(gg[1]);
  auto gf = model.group("f_head");
  params.push_back(gf[0]);
  params.push_back(gf[1]);
  CHECK(grad_check(eval, params, 1e-3).max_rel_err < 1e-4);
}

TEST_CASE("task loss gradients reach the temporal weights") {
  auto model = small_model(4, 13, small_config());
  model.add_task_head("t");
  std::vector<EventSequence> seqs{toy_sequence(4, 5), toy_sequence(4, 6, 0.3)};
  std::vector<TaskInstance> insts{{0, 1.5, 1}, {1, 1.4, 0}};
  auto eval = [&](bool with_grad) {
    Tape tape;
    Tensor loss = loss_task_t(tape, model, "t", seqs, insts);
    if (with_grad) {
      tape.backward(loss);
      tape.flush_param_grads();
    }
    return loss.scalar();
  };
  std::vector<Param*> params = model.wfn().params();
  params.push_back(&model.q_base());
  model.task_head("t").collect(params);
  CHECK(grad_check(eval, params, 1e-3).max_rel_err < 1e-4);
}

TEST_SUITE_END();
