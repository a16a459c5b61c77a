#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "tale/train.hpp"

using namespace tale;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

ModelConfig train_test_config() {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.dz = 4;
  cfg.n_demographics = 2;
  cfg.loss.n_mc = 8;
  return cfg;
}

std::vector<EventSequence> poisson_data(std::size_t n, double rate, double T, std::uint64_t seed,
                                        std::size_t n_codes = 4) {
  SimulateParams p;
  p.kind = ProcessKind::const_poisson;
  p.rate = rate;
  std::vector<EventSequence> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(simulate(p, T, n_codes, seed_mix(seed, i)).first);
  return out;
}

ModelState fresh_model(std::uint64_t seed, ModelConfig cfg = train_test_config()) {
  auto vocab = std::make_shared<CodeVocabulary>(random_vocabulary(4, 4, 99));
  return ModelState(vocab, cfg, seed);
}

std::vector<std::vector<double>> param_values(ModelState& m) {
  std::vector<std::vector<double>> out;
  for (Param* p : m.all_params()) out.push_back(p->value);
  return out;
}

TrainConfig quick_train(int epochs = 2, double lr = 1e-3) {
  TrainConfig tc;
  tc.pretrain_epochs = epochs;
  tc.pretrain_lr = lr;
  tc.batch_size = 4;
  tc.seed = 7;
  return tc;
}

}  // namespace

TEST_SUITE_BEGIN("train");

TEST_CASE("adam leaves parameters alone under zero gradients but advances time") {
  auto model = fresh_model(1);
  AdamState adam;
  TrainConfig tc;
  auto before = param_values(model);
  for (Param* p : model.all_params()) p->zero_grad();
  std::map<std::string, double> lr;
  for (const auto& g : model.group_names()) lr[g] = 0.1;
  adam_step(model, adam, tc, lr);
  CHECK(param_values(model) == before);
  CHECK(adam.steps_taken() == 1);
  CHECK(adam.slot(*model.all_params()[0]).t == 1);
}

TEST_CASE("one adam step on theta^2 from 1.0 lands near 0.9") {
  // grad = 2, mhat = 2, vhat = 4 -> update ~ lr * 2 / (2 + eps)
  auto model = fresh_model(2);
  AdamState adam;
  TrainConfig tc;
  Param* p = model.group("q_base")[0];
  p->value.assign(p->size(), 1.0);
  for (Param* q : model.all_params()) q->zero_grad();
  for (auto& g : p->grad) g = 2.0;
  std::map<std::string, double> lr{{"q_base", 0.1}};
  adam_step(model, adam, tc, lr);
  for (double v : p->value) CHECK(v == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("constant positive gradient drives a parameter down monotonically") {
  auto model = fresh_model(3);
  AdamState adam;
  TrainConfig tc;
  Param* p = model.group("q_base")[0];
  std::map<std::string, double> lr{{"q_base", 0.01}};
  double prev = p->value[0];
  for (int step = 0; step < 20; ++step) {
    for (Param* q : model.all_params()) q->zero_grad();
    for (auto& g : p->grad) g = 1.5;
    adam_step(model, adam, tc, lr);
    CHECK(p->value[0] < prev);
    prev = p->value[0];
  }
}

TEST_CASE("frozen groups are skipped and NaN gradients name the group") {
  auto model = fresh_model(4);
  AdamState adam;
  TrainConfig tc;
  model.set_frozen("q_base", true);
  Param* p = model.group("q_base")[0];
  auto before = p->value;
  for (Param* q : model.all_params()) q->zero_grad();
  for (auto& g : p->grad) g = 5.0;
  std::map<std::string, double> lr{{"q_base", 0.1}};
  adam_step(model, adam, tc, lr);
  CHECK(p->value == before);

  model.set_frozen("q_base", false);
  p->grad[0] = std::nan("");
  CHECK_THROWS_WITH_AS(adam_step(model, adam, tc, lr), doctest::Contains("q_base"),
                       TrainingError);
}

TEST_CASE("a single sequence for one epoch takes exactly one optimizer step") {
  auto model = fresh_model(5);
  AdamState adam;
  auto data = poisson_data(1, 1.5, 6.0, 21);
  TrainConfig tc = quick_train(1);
  tc.batch_size = 16;
  auto res = pretrain(model, adam, data, {}, tc);
  CHECK(res.optimizer_steps == 1);
  CHECK(res.epochs_completed == 1);
  CHECK(model.pretrained());
}

TEST_CASE("pretraining never touches the vocabulary embeddings") {
  auto model = fresh_model(6);
  auto before = model.vocab().embeddings;
  AdamState adam;
  auto data = poisson_data(6, 1.5, 6.0, 22);
  auto res = pretrain(model, adam, data, {}, quick_train(2));
  CHECK(res.epochs_completed == 2);
  CHECK(model.vocab().embeddings == before);
}

TEST_CASE("pretraining is bitwise deterministic in config and seed") {
  auto data = poisson_data(8, 1.5, 6.0, 23);
  auto run = [&] {
    auto model = fresh_model(7);
    AdamState adam;
    pretrain(model, adam, data, {}, quick_train(2));
    return param_values(model);
  };
  CHECK(run() == run());
}

TEST_CASE("validation loss decreases on most seeds for poisson data") {
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto data = poisson_data(24, 2.0, 6.0, 100 + seed);
    auto parts = split(data, 0.7, 0.1, 0.2, seed);
    auto cfg = train_test_config();
    cfg.loss.gamma_mix = 0.0;  // isolate the intensity objective
    auto model = fresh_model(seed, cfg);
    AdamState adam;
    TrainConfig tc = quick_train(6, 3e-3);
    tc.seed = seed;
    auto res = pretrain(model, adam, parts.train, parts.val, tc);
    REQUIRE(res.log.size() >= 2);
    double first = 0, last = 0;
    for (const auto& row : res.log) {
      if (row.split != "val") continue;
      if (row.epoch == 0) first = row.loss_joint;
      last = row.loss_joint;
    }
    improved += last < first;
  }
  CHECK(improved >= 4);
}

TEST_CASE("divergence restores the last good parameters and stops") {
  auto model = fresh_model(8);
  AdamState adam;
  auto data = poisson_data(4, 1.5, 6.0, 24);
  TrainConfig tc = quick_train(3, 1e308);  // guaranteed blow-up
  tc.clip_norm = 0.0;
  auto before = param_values(model);
  auto res = pretrain(model, adam, data, {}, tc);
  CHECK(res.diverged);
  CHECK(param_values(model) == before);
  CHECK_FALSE(model.pretrained());
}

TEST_CASE("loss log is append-only csv with the expected columns") {
  auto model = fresh_model(9);
  AdamState adam;
  auto data = poisson_data(4, 1.5, 6.0, 25);
  auto path = tmp_path("tale_loss_log.csv");
  std::filesystem::remove(path);
  pretrain(model, adam, data, data, quick_train(1), path);
  auto model2 = fresh_model(10);
  AdamState adam2;
  pretrain(model2, adam2, data, data, quick_train(1), path);
  std::ifstream in(path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 5);  // header + 2 runs x (train+val)
  CHECK(lines[0] == "epoch,split,loss_time,loss_code,loss_joint");
  CHECK(lines[1].substr(0, 8) == "0,train,");
  CHECK(lines[2].substr(0, 6) == "0,val,");
}

TEST_CASE("checkpoint round trip continues training bitwise") {
  auto data = poisson_data(8, 1.5, 6.0, 26);
  TrainConfig tc = quick_train(3);

  auto straight = fresh_model(11);
  AdamState adam_a;
  pretrain(straight, adam_a, data, {}, tc);

  auto resumed = fresh_model(11);
  AdamState adam_b;
  TrainConfig tc2 = tc;
  tc2.pretrain_epochs = 2;
  pretrain(resumed, adam_b, data, {}, tc2);
  auto path = tmp_path("tale_ckpt_rt.bin");
  save_checkpoint(resumed, adam_b, tc, 2, path);

  Checkpoint ckpt = load_checkpoint(path);
  CHECK(ckpt.epochs_done == 2);
  AdamState adam_c = ckpt.adam;
  pretrain(ckpt.model, adam_c, data, {}, ckpt.train, "", ckpt.epochs_done);

  auto a = param_values(straight);
  auto b = param_values(ckpt.model);
  CHECK(a == b);
}

TEST_CASE("checkpoint preserves values, optimizer state, and flags exactly") {
  auto model = fresh_model(12);
  AdamState adam;
  auto data = poisson_data(4, 1.5, 6.0, 27);
  pretrain(model, adam, data, {}, quick_train(1));
  model.add_task_head("demo");
  model.set_frozen("f_head", true);
  auto path = tmp_path("tale_ckpt_exact.bin");
  save_checkpoint(model, adam, quick_train(1), 1, path);
  Checkpoint ckpt = load_checkpoint(path);
  CHECK(param_values(ckpt.model) == param_values(model));
  CHECK(ckpt.model.pretrained());
  CHECK(ckpt.model.frozen("f_head"));
  CHECK(ckpt.model.has_task_head("demo"));
  CHECK(ckpt.adam.slots().size() == adam.slots().size());
  for (const auto& [name, slot] : adam.slots()) {
    const auto& other = ckpt.adam.slots().at(name);
    CHECK(other.t == slot.t);
    CHECK(other.m == slot.m);
    CHECK(other.v == slot.v);
  }
}

TEST_CASE("finetune updates only wfn, q_base, and the task head") {
  auto data = poisson_data(10, 1.5, 6.0, 28);
  auto model = fresh_model(13);
  AdamState adam;
  pretrain(model, adam, data, {}, quick_train(1));

  std::vector<TaskInstance> insts;
  for (std::size_t i = 0; i < data.size(); ++i)
    insts.push_back({i, data[i].horizon, static_cast<int>(i % 2)});

  std::vector<std::vector<double>> frozen_before;
  for (const auto& g : {"proj_q", "proj_k", "proj_v", "g_head", "f_head"})
    for (Param* p : model.group(g)) frozen_before.push_back(p->value);
  auto qbase_before = model.q_base().value;
  auto wfn_before = model.wfn().params()[0]->value;

  model.add_task_head("demo");
  std::vector<std::vector<double>> task_before;
  for (Param* p : model.group("task:demo")) task_before.push_back(p->value);

  TrainConfig tc = quick_train(1);
  tc.finetune_epochs = 2;
  tc.finetune_lr_pretrained = 1e-3;
  tc.finetune_lr_new = 1e-2;
  auto res = finetune(model, "demo", data, insts, tc);
  CHECK(res.epochs_completed == 2);

  std::vector<std::vector<double>> frozen_after;
  for (const auto& g : {"proj_q", "proj_k", "proj_v", "g_head", "f_head"})
    for (Param* p : model.group(g)) frozen_after.push_back(p->value);
  CHECK(frozen_before == frozen_after);  // bitwise
  CHECK(model.q_base().value != qbase_before);
  CHECK(model.wfn().params()[0]->value != wfn_before);

  std::vector<std::vector<double>> task_after;
  for (Param* p : model.group("task:demo")) task_after.push_back(p->value);
  CHECK(task_before != task_after);
}

TEST_CASE("finetune requires a pretrained model") {
  auto model = fresh_model(14);
  std::vector<EventSequence> seqs = poisson_data(2, 1.5, 6.0, 29);
  std::vector<TaskInstance> insts{{0, seqs[0].horizon, 1}, {1, seqs[1].horizon, 0}};
  CHECK_THROWS_AS(finetune(model, "x", seqs, insts, quick_train(1)), StateError);
}

TEST_SUITE_END();
