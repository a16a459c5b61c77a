#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tale/events.hpp"
#include "tale/model.hpp"

namespace tale {

struct TrainConfig {
  int pretrain_epochs = 10;
  double pretrain_lr = 1e-4;
  int batch_size = 16;
  int finetune_epochs = 5;
  double finetune_lr_pretrained = 1e-5;  // wfn and q_base during finetune
  double finetune_lr_new = 1e-4;         // freshly added task head
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 5.0;  // global gradient norm; <= 0 disables clipping
  std::uint64_t seed = 0;

  void validate() const;
};

// First/second moment buffers keyed by parameter name; step counts advance
// once per optimizer call so bias correction matches the update count.
class AdamState {
 public:
  struct Slot {
    std::vector<double> m, v;
    std::uint64_t t = 0;
  };

  Slot& slot(const Param& p);
  std::map<std::string, Slot>& slots() { return slots_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }
  std::uint64_t steps_taken() const { return steps_; }
  void note_step() { ++steps_; }

 private:
  std::map<std::string, Slot> slots_;
  std::uint64_t steps_ = 0;
};

// One Adam update over every unfrozen group, at the group's learning rate.
// Gradients are clipped jointly to clip_norm beforehand. NaN/Inf gradients
// abort with the offending group named.
void adam_step(ModelState& model, AdamState& state, const TrainConfig& cfg,
               const std::map<std::string, double>& group_lr);

struct EpochLog {
  int epoch = 0;
  std::string split;
  double loss_time = 0.0, loss_code = 0.0, loss_joint = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  bool diverged = false;
  int epochs_completed = 0;
  std::uint64_t optimizer_steps = 0;
};

// Joint pre-training over shuffled minibatches; deterministic given cfg.seed.
// On a non-finite batch loss the parameters are restored to the start of the
// epoch and training stops early with diverged = true.
TrainResult pretrain(ModelState& model, AdamState& adam,
                     const std::vector<EventSequence>& train_split,
                     const std::vector<EventSequence>& val_split, const TrainConfig& cfg,
                     const std::string& log_csv = "", int start_epoch = 0);

// Task fine-tuning: trains the task head at finetune_lr_new and {wfn, q_base}
// at finetune_lr_pretrained; every other group stays frozen and untouched.
TrainResult finetune(ModelState& model, const std::string& task,
                     const std::vector<EventSequence>& sequences,
                     const std::vector<TaskInstance>& instances, const TrainConfig& cfg,
                     double w_k = 0.0, const std::string& log_csv = "");

// ---- checkpoints ----

struct Checkpoint {
  ModelState model;
  AdamState adam;
  TrainConfig train;
  int epochs_done = 0;
};

// Self-contained binary checkpoint: JSON header (dims, configs, group/param
// manifest), embedded vocabulary, float64 parameter and optimizer blobs.
void save_checkpoint(ModelState& model, const AdamState& adam, const TrainConfig& cfg,
                     int epochs_done, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace tale
