#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "tale/attention.hpp"
#include "tale/events.hpp"
#include "tale/nn.hpp"
#include "tale/temporal.hpp"
#include "tale/vocab.hpp"

namespace tale {

struct LossConfig {
  double gamma_mix = 1.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;  // must be a non-negative integer value
  double smooth_pos = 0.95;
  double smooth_neg = 0.05;
  int n_mc = 0;  // Monte Carlo samples per sequence; 0 means max(64, m)
};

struct ModelConfig {
  std::size_t d = 64;        // attention width
  std::size_t dz = 32;       // covariate/history projection width in the heads
  std::size_t window = 1024;  // max events attended per query
  std::size_t n_demographics = 2;
  double max_covariate_days = 3650.0;
  TemporalConfig time_weight;
  LossConfig loss;
};

// Full trainable state: projection heads, base query, temporal weight
// function, intensity head g, code head f, and per-task binary heads.
// The vocabulary embeddings are referenced, never owned or modified.
class ModelState {
 public:
  ModelState(std::shared_ptr<const CodeVocabulary> vocab, ModelConfig cfg, std::uint64_t seed);

  const CodeVocabulary& vocab() const { return *vocab_; }
  std::shared_ptr<const CodeVocabulary> vocab_ptr() const { return vocab_; }
  const ModelConfig& config() const { return cfg_; }

  ProjectionHeads& heads() { return heads_; }
  Param& q_base() { return q_base_; }
  TemporalWeightFn& wfn() { return wfn_; }

  // Fixed groups plus "task:<name>" per registered task head.
  std::vector<std::string> group_names() const;
  std::vector<Param*> group(const std::string& name);
  std::vector<Param*> all_params();
  std::vector<Param*> trainable_params();

  bool frozen(const std::string& group_name) const { return frozen_.count(group_name) > 0; }
  void set_frozen(const std::string& group_name, bool on);
  // Freeze everything except {wfn, q_base, task:<task>}.
  void freeze_for_finetune(const std::string& task);
  void unfreeze_all() { frozen_.clear(); }

  void add_task_head(const std::string& task);
  bool has_task_head(const std::string& task) const { return task_heads_.count(task) > 0; }
  Mlp& task_head(const std::string& task);
  std::vector<std::string> task_names() const;

  bool pretrained() const { return pretrained_; }
  void mark_pretrained() { pretrained_ = true; }
  std::uint64_t seed() const { return seed_; }
  std::vector<std::string> frozen_groups() const { return {frozen_.begin(), frozen_.end()}; }

  SequenceEncoder encoder(Tape& tape, const EventSequence& seq) {
    return SequenceEncoder(tape, *vocab_, heads_, q_base_, wfn_, cfg_.window, seq);
  }

  // Intensity lambda(t) = softplus(g(Z(t), h_t)) >= 0.
  Tensor intensity_at(Tape& tape, SequenceEncoder& enc, const EventSequence& seq, double t,
                      bool inclusive = true);
  // Per-code next-event logits f(Z(t), h_t); probabilities are per-code sigmoids.
  Tensor code_logits_at(Tape& tape, SequenceEncoder& enc, const EventSequence& seq, double t,
                        bool inclusive = true);
  Tensor task_logit_at(Tape& tape, SequenceEncoder& enc, const std::string& task, double t);

 private:
  std::shared_ptr<const CodeVocabulary> vocab_;
  ModelConfig cfg_;
  std::uint64_t seed_ = 0;
  ProjectionHeads heads_;
  Param q_base_;
  TemporalWeightFn wfn_;
  Linear g_z_proj_, g_h_proj_;
  Mlp g_core_;
  Linear f_z_proj_, f_h_proj_;
  Mlp f_core_;
  std::map<std::string, Mlp> task_heads_;
  std::set<std::string> frozen_;
  bool pretrained_ = false;
};

// ---- value-level convenience wrappers (own a private tape) ----

double intensity(ModelState& model, const EventSequence& seq, double t);
std::vector<double> code_probs(ModelState& model, const EventSequence& seq, double t);
double task_score(ModelState& model, const std::string& task, const EventSequence& seq,
                  double t_cut);

// ---- losses ----

// Least-squares intensity loss: mean_u lambda(u)^2 - (2/T) sum_j lambda(t_j),
// u uniform on [0, T] with a fixed seed. lambda_at may return nullopt for
// query points it cannot evaluate (no usable history); those are skipped.
// Event evaluations condition on strictly-prior history, so the first event
// of a sequence never contributes to the event sum.
Tensor loss_time_with(const std::function<std::optional<Tensor>(double t, bool at_event)>& lambda_at,
                      const EventSequence& seq, int n_mc, std::uint64_t seed);

Tensor loss_time_t(Tape& tape, ModelState& model, SequenceEncoder& enc, const EventSequence& seq,
                   int n_mc, std::uint64_t seed);
double loss_time(ModelState& model, const EventSequence& seq, int n_mc, std::uint64_t seed);

// Focal code loss at event index j (0-based, j >= 1 so prior history exists).
// Target: every code observed at the next distinct timestamp after t_j.
Tensor loss_code_t(Tape& tape, ModelState& model, SequenceEncoder& enc, const EventSequence& seq,
                   std::size_t j);
double loss_code(ModelState& model, const EventSequence& seq, std::size_t j);

// Event indices usable as code-loss queries (have prior history and a target).
std::vector<std::size_t> code_query_indices(const EventSequence& seq);
// Multi-hot target set for query j.
std::vector<std::size_t> code_target(const EventSequence& seq, std::size_t j);

struct JointLossParts {
  Tensor total, time, code;
};
// loss_time + gamma_mix * (mean code loss over valid queries).
JointLossParts loss_joint_t(Tape& tape, ModelState& model, SequenceEncoder& enc,
                            const EventSequence& seq, std::uint64_t seed);
double loss_joint(ModelState& model, const EventSequence& seq, std::uint64_t seed);

// Weighted BCE over labeled (sequence, t_cut, label) instances; w_k scales the
// positive terms, 0 selects the #neg/#pos automatic weight.
Tensor loss_task_t(Tape& tape, ModelState& model, const std::string& task,
                   const std::vector<EventSequence>& sequences,
                   const std::vector<TaskInstance>& instances, double w_k = 0.0);
double loss_task(ModelState& model, const std::string& task,
                 const std::vector<EventSequence>& sequences,
                 const std::vector<TaskInstance>& instances, double w_k = 0.0);

}  // namespace tale
