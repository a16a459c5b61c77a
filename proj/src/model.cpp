#include "tale/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "tale/util.hpp"

namespace tale {

namespace {

int integral_gamma(double g) {
  if (g < 0.0 || g != std::floor(g))
    throw ConfigError("loss.focal_gamma must be a non-negative integer, got " + fmt_double(g));
  return static_cast<int>(g);
}

}  // namespace

ModelState::ModelState(std::shared_ptr<const CodeVocabulary> vocab, ModelConfig cfg,
                       std::uint64_t seed)
    : vocab_(std::move(vocab)), cfg_(cfg), seed_(seed) {
  if (!vocab_) throw ContractError("ModelState: null vocabulary");
  if (cfg_.d < 1 || cfg_.dz < 1) throw ConfigError("model dimensions must be >= 1");
  integral_gamma(cfg_.loss.focal_gamma);
  std::mt19937_64 rng(seed_mix(seed, 0x30de1));
  std::size_t d_emb = vocab_->d_emb;
  std::size_t d = cfg_.d, dz = cfg_.dz;
  std::size_t p = cfg_.n_demographics + 1;  // static demographics + elapsed-time entry

  heads_ = ProjectionHeads(d_emb, d, rng);
  q_base_ = Param("q_base", {d});
  // Unit-variance init keeps the aggregation scores spread out enough for the
  // temporal weights to modulate them from the first step.
  std::normal_distribution<double> qdist(0.0, 1.0);
  for (auto& v : q_base_.value) v = qdist(rng);
  wfn_ = TemporalWeightFn(cfg_.time_weight, seed_mix(seed, 0x77f1));

  g_z_proj_ = Linear("g.zproj", p, dz, rng);
  g_h_proj_ = Linear("g.hproj", d, dz, rng);
  g_core_ = Mlp("g.core", {2 * dz, 64, 64, 32, 1}, rng);
  f_z_proj_ = Linear("f.zproj", p, dz, rng);
  f_h_proj_ = Linear("f.hproj", d, dz, rng);
  f_core_ = Mlp("f.core", {2 * dz, 64, 64, vocab_->size()}, rng);
}

std::vector<std::string> ModelState::group_names() const {
  std::vector<std::string> names{"proj_q", "proj_k", "proj_v", "q_base", "wfn", "g_head", "f_head"};
  for (const auto& [task, _] : task_heads_) names.push_back("task:" + task);
  return names;
}

std::vector<Param*> ModelState::group(const std::string& name) {
  std::vector<Param*> out;
  if (name == "proj_q")
    heads_.q.collect(out);
  else if (name == "proj_k")
    heads_.k.collect(out);
  else if (name == "proj_v")
    heads_.v.collect(out);
  else if (name == "q_base")
    out.push_back(&q_base_);
  else if (name == "wfn")
    out = wfn_.params();
  else if (name == "g_head") {
    out.push_back(&g_z_proj_.w);
    out.push_back(&g_z_proj_.b);
    out.push_back(&g_h_proj_.w);
    out.push_back(&g_h_proj_.b);
    g_core_.collect(out);
  } else if (name == "f_head") {
    out.push_back(&f_z_proj_.w);
    out.push_back(&f_z_proj_.b);
    out.push_back(&f_h_proj_.w);
    out.push_back(&f_h_proj_.b);
    f_core_.collect(out);
  } else if (name.rfind("task:", 0) == 0) {
    auto it = task_heads_.find(name.substr(5));
    if (it == task_heads_.end()) throw ContractError("unknown parameter group " + name);
    it->second.collect(out);
  } else {
    throw ContractError("unknown parameter group " + name);
  }
  return out;
}

std::vector<Param*> ModelState::all_params() {
  std::vector<Param*> out;
  for (const auto& g : group_names())
    for (Param* p : group(g)) out.push_back(p);
  return out;
}

std::vector<Param*> ModelState::trainable_params() {
  std::vector<Param*> out;
  for (const auto& g : group_names()) {
    if (frozen(g)) continue;
    for (Param* p : group(g)) out.push_back(p);
  }
  return out;
}

void ModelState::set_frozen(const std::string& group_name, bool on) {
  if (on)
    frozen_.insert(group_name);
  else
    frozen_.erase(group_name);
}

void ModelState::freeze_for_finetune(const std::string& task) {
  frozen_.clear();
  for (const auto& g : group_names())
    if (g != "wfn" && g != "q_base" && g != "task:" + task) frozen_.insert(g);
}

void ModelState::add_task_head(const std::string& task) {
  if (task.empty()) throw ConfigError("task name must be non-empty");
  if (task_heads_.count(task)) return;
  std::mt19937_64 rng(seed_mix(seed_, std::hash<std::string>{}(task)));
  std::size_t d = cfg_.d;
  task_heads_.emplace(task, Mlp("task." + task, {d, std::max<std::size_t>(1, d / 2), 1}, rng));
}

Mlp& ModelState::task_head(const std::string& task) {
  auto it = task_heads_.find(task);
  if (it == task_heads_.end()) throw StateError("no task head '" + task + "'");
  return it->second;
}

std::vector<std::string> ModelState::task_names() const {
  std::vector<std::string> out;
  for (const auto& [t, _] : task_heads_) out.push_back(t);
  return out;
}

namespace {

Tensor covariate_tensor(Tape& tape, const ModelState& model, const EventSequence& seq, double t) {
  std::vector<double> z = covariates_at(seq, t, model.config().max_covariate_days);
  Shape shape{z.size()};
  return tape.constant(std::move(shape), std::move(z));
}

}  // namespace

Tensor ModelState::intensity_at(Tape& tape, SequenceEncoder& enc, const EventSequence& seq,
                                double t, bool inclusive) {
  if (seq.demographics.size() != cfg_.n_demographics)
    throw DataError("sequence has " + std::to_string(seq.demographics.size()) +
                    " demographics, model expects " + std::to_string(cfg_.n_demographics));
  HistoryEncoding h = enc.encode(t, inclusive);
  Tensor z = covariate_tensor(tape, *this, seq, t);
  Tensor zp = gelu(g_z_proj_.apply(tape, z));
  Tensor hp = gelu(g_h_proj_.apply(tape, h.unified));
  Tensor y = g_core_.apply(tape, concat({zp, hp}));
  return softplus(reshape(y, {}));
}

Tensor ModelState::code_logits_at(Tape& tape, SequenceEncoder& enc, const EventSequence& seq,
                                  double t, bool inclusive) {
  if (seq.demographics.size() != cfg_.n_demographics)
    throw DataError("sequence has " + std::to_string(seq.demographics.size()) +
                    " demographics, model expects " + std::to_string(cfg_.n_demographics));
  HistoryEncoding h = enc.encode(t, inclusive);
  Tensor z = covariate_tensor(tape, *this, seq, t);
  Tensor zp = gelu(f_z_proj_.apply(tape, z));
  Tensor hp = gelu(f_h_proj_.apply(tape, h.unified));
  return f_core_.apply(tape, concat({zp, hp}));
}

Tensor ModelState::task_logit_at(Tape& tape, SequenceEncoder& enc, const std::string& task,
                                 double t) {
  HistoryEncoding h = enc.encode(t, true);
  return reshape(task_head(task).apply(tape, h.unified), {});
}

double intensity(ModelState& model, const EventSequence& seq, double t) {
  Tape tape;
  auto enc = model.encoder(tape, seq);
  return model.intensity_at(tape, enc, seq, t).scalar();
}

std::vector<double> code_probs(ModelState& model, const EventSequence& seq, double t) {
  Tape tape;
  auto enc = model.encoder(tape, seq);
  return sigmoid(model.code_logits_at(tape, enc, seq, t)).value();
}

double task_score(ModelState& model, const std::string& task, const EventSequence& seq,
                  double t_cut) {
  Tape tape;
  auto enc = model.encoder(tape, seq);
  return sigmoid(model.task_logit_at(tape, enc, task, t_cut)).scalar();
}

// ---- losses -----------------------------------------------------------------

Tensor loss_time_with(const std::function<std::optional<Tensor>(double, bool)>& lambda_at,
                      const EventSequence& seq, int n_mc, std::uint64_t seed) {
  if (n_mc <= 0) throw ConfigError("loss_time: n_mc must be > 0");
  if (seq.events.empty()) throw DataError("loss_time: empty sequence");
  double T = seq.horizon;
  if (!(T > 0.0)) throw DataError("loss_time: horizon must be > 0");

  std::mt19937_64 rng(seed_mix(seed, 0x10c5));
  std::uniform_real_distribution<double> unif(0.0, T);
  std::vector<Tensor> sq_terms;
  for (int i = 0; i < n_mc; ++i) {
    double u = unif(rng);
    if (auto lam = lambda_at(u, false)) sq_terms.push_back(pow_int(*lam, 2));
  }
  if (sq_terms.empty()) throw DataError("loss_time: no evaluable Monte Carlo points");
  Tensor sq = sq_terms[0];
  for (std::size_t i = 1; i < sq_terms.size(); ++i) sq = add(sq, sq_terms[i]);
  Tensor loss = scale(sq, 1.0 / static_cast<double>(sq_terms.size()));

  std::optional<Tensor> event_sum;
  for (const auto& e : seq.events) {
    auto lam = lambda_at(e.t, true);
    if (!lam) continue;
    event_sum = event_sum ? add(*event_sum, *lam) : *lam;
  }
  if (event_sum) loss = sub(loss, scale(*event_sum, 2.0 / T));
  return loss;
}

Tensor loss_time_t(Tape& tape, ModelState& model, SequenceEncoder& enc, const EventSequence& seq,
                   int n_mc, std::uint64_t seed) {
  auto lambda_at = [&](double t, bool at_event) -> std::optional<Tensor> {
    bool inclusive = !at_event;  // events condition on strictly-prior history
    if (enc.history_size(t, inclusive) == 0) return std::nullopt;
    return model.intensity_at(tape, enc, seq, t, inclusive);
  };
  return loss_time_with(lambda_at, seq, n_mc, seed);
}

double loss_time(ModelState& model, const EventSequence& seq, int n_mc, std::uint64_t seed) {
  Tape tape;
  auto enc = model.encoder(tape, seq);
  return loss_time_t(tape, model, enc, seq, n_mc, seed).scalar();
}

std::vector<std::size_t> code_target(const EventSequence& seq, std::size_t j) {
  if (j >= seq.events.size()) throw DataError("code_target: event index out of range");
  double tj = seq.events[j].t;
  std::size_t k = j + 1;
  while (k < seq.events.size() && seq.events[k].t <= tj) ++k;
  if (k == seq.events.size()) throw DataError("code_target: no later timestamp after event");
  double tk = seq.events[k].t;
  std::vector<std::size_t> target;
  for (std::size_t i = k; i < seq.events.size() && seq.events[i].t == tk; ++i)
    target.push_back(seq.events[i].code);
  std::sort(target.begin(), target.end());
  target.erase(std::unique(target.begin(), target.end()), target.end());
  return target;
}

std::vector<std::size_t> code_query_indices(const EventSequence& seq) {
  std::vector<std::size_t> out;
  for (std::size_t j = 1; j < seq.events.size(); ++j) {
    double tj = seq.events[j].t;
    bool has_next = false;
    for (std::size_t k = j + 1; k < seq.events.size(); ++k)
      if (seq.events[k].t > tj) {
        has_next = true;
        break;
      }
    if (has_next) out.push_back(j);
  }
  return out;
}

Tensor loss_code_t(Tape& tape, ModelState& model, SequenceEncoder& enc, const EventSequence& seq,
                   std::size_t j) {
  if (j >= seq.events.size()) throw DataError("loss_code: event index out of range");
  if (j < 1) throw DataError("loss_code: first event has no prior history");
  std::vector<std::size_t> target = code_target(seq, j);

  const auto& lc = model.config().loss;
  int gamma = integral_gamma(lc.focal_gamma);
  std::size_t C = model.vocab().size();
  std::vector<double> pos_mask(C, 0.0), neg_mask(C, 1.0);
  for (std::size_t c : target) {
    pos_mask[c] = 1.0;
    neg_mask[c] = 0.0;
  }

  Tensor p = sigmoid(model.code_logits_at(tape, enc, seq, seq.events[j].t, true));
  Tensor ones = tape.ones({C});
  Tensor pos = tape.constant({C}, std::move(pos_mask));
  Tensor neg = tape.constant({C}, std::move(neg_mask));
  // q_c is the probability assigned to the observed outcome for code c.
  Tensor q = add(mul(p, pos), mul(sub(ones, p), neg));
  Tensor pos_part = scale(sum(mul(pos, mul(pow_int(sub(ones, q), gamma), ln(q)))),
                          -lc.focal_alpha * lc.smooth_pos);
  Tensor neg_part = scale(sum(mul(neg, mul(pow_int(sub(ones, q), gamma), ln(q)))),
                          -lc.focal_alpha * (1.0 - lc.smooth_neg));
  return add(pos_part, neg_part);
}

double loss_code(ModelState& model, const EventSequence& seq, std::size_t j) {
  Tape tape;
  auto enc = model.encoder(tape, seq);
  return loss_code_t(tape, model, enc, seq, j).scalar();
}

JointLossParts loss_joint_t(Tape& tape, ModelState& model, SequenceEncoder& enc,
                            const EventSequence& seq, std::uint64_t seed) {
  const auto& lc = model.config().loss;
  int n_mc = lc.n_mc > 0 ? lc.n_mc : static_cast<int>(std::max<std::size_t>(64, seq.size()));
  JointLossParts parts;
  parts.time = loss_time_t(tape, model, enc, seq, n_mc, seed);
  auto queries = code_query_indices(seq);
  if (lc.gamma_mix != 0.0 && !queries.empty()) {
    Tensor code_sum = loss_code_t(tape, model, enc, seq, queries[0]);
    for (std::size_t i = 1; i < queries.size(); ++i)
      code_sum = add(code_sum, loss_code_t(tape, model, enc, seq, queries[i]));
    parts.code = scale(code_sum, 1.0 / static_cast<double>(queries.size()));
    parts.total = add(parts.time, scale(parts.code, lc.gamma_mix));
  } else {
    parts.code = tape.scalar_const(0.0);
    parts.total = parts.time;
  }
  return parts;
}

double loss_joint(ModelState& model, const EventSequence& seq, std::uint64_t seed) {
  Tape tape;
  auto enc = model.encoder(tape, seq);
  return loss_joint_t(tape, model, enc, seq, seed).total.scalar();
}

Tensor loss_task_t(Tape& tape, ModelState& model, const std::string& task,
                   const std::vector<EventSequence>& sequences,
                   const std::vector<TaskInstance>& instances, double w_k) {
  if (instances.empty()) throw DataError("loss_task: no instances");
  if (w_k == 0.0) {
    std::size_t pos = 0;
    for (const auto& in : instances) pos += in.label != 0;
    std::size_t neg = instances.size() - pos;
    if (pos == 0 || neg == 0)
      throw ConfigError("loss_task: single-class batch; pass an explicit positive weight");
    w_k = static_cast<double>(neg) / static_cast<double>(pos);
  }

  std::map<std::size_t, SequenceEncoder> encoders;
  std::optional<Tensor> total;
  for (const auto& inst : instances) {
    if (inst.label != 0 && inst.label != 1) throw DataError("loss_task: labels must be 0/1");
    const EventSequence& seq = sequences.at(inst.seq_index);
    auto it = encoders.find(inst.seq_index);
    if (it == encoders.end())
      it = encoders.emplace(inst.seq_index, model.encoder(tape, seq)).first;
    Tensor p = sigmoid(model.task_logit_at(tape, it->second, task, inst.t_cut));
    Tensor term = inst.label == 1 ? scale(ln(p), -w_k)
                                  : scale(ln(sub(tape.scalar_const(1.0), p)), -1.0);
    total = total ? add(*total, term) : term;
  }
  return scale(*total, 1.0 / static_cast<double>(instances.size()));
}

double loss_task(ModelState& model, const std::string& task,
                 const std::vector<EventSequence>& sequences,
                 const std::vector<TaskInstance>& instances, double w_k) {
  Tape tape;
  return loss_task_t(tape, model, task, sequences, instances, w_k).scalar();
}

}  // namespace tale
