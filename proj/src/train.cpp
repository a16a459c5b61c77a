#include "tale/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "tale/util.hpp"

namespace tale {

using nlohmann::json;

void TrainConfig::validate() const {
  if (pretrain_epochs < 1 || finetune_epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(pretrain_lr > 0.0) || !(finetune_lr_pretrained > 0.0) || !(finetune_lr_new > 0.0))
    throw ConfigError("learning rates must be > 0");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0))
    throw ConfigError("adam betas must lie in (0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
}

AdamState::Slot& AdamState::slot(const Param& p) {
  auto& s = slots_[p.name];
  if (s.m.empty()) {
    s.m.assign(p.size(), 0.0);
    s.v.assign(p.size(), 0.0);
  }
  if (s.m.size() != p.size())
    throw ContractError("optimizer state size mismatch for parameter " + p.name);
  return s;
}

void adam_step(ModelState& model, AdamState& state, const TrainConfig& cfg,
               const std::map<std::string, double>& group_lr) {
  struct Entry {
    Param* p;
    double lr;
  };
  std::vector<Entry> entries;
  for (const auto& gname : model.group_names()) {
    if (model.frozen(gname)) continue;
    auto it = group_lr.find(gname);
    if (it == group_lr.end()) continue;
    for (Param* p : model.group(gname)) {
      for (double g : p->grad)
        if (!std::isfinite(g))
          throw TrainingError("non-finite gradient in parameter group " + gname);
      entries.push_back({p, it->second});
    }
  }

  if (cfg.clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& e : entries)
      for (double g : e.p->grad) sq += g * g;
    double norm = std::sqrt(sq);
    if (norm > cfg.clip_norm) {
      double s = cfg.clip_norm / norm;
      for (auto& e : entries)
        for (double& g : e.p->grad) g *= s;
    }
  }

  for (auto& e : entries) {
    auto& s = state.slot(*e.p);
    s.t += 1;
    double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(s.t));
    double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < e.p->size(); ++i) {
      double g = e.p->grad[i];
      s.m[i] = cfg.adam_beta1 * s.m[i] + (1.0 - cfg.adam_beta1) * g;
      s.v[i] = cfg.adam_beta2 * s.v[i] + (1.0 - cfg.adam_beta2) * g * g;
      double mhat = s.m[i] / bc1;
      double vhat = s.v[i] / bc2;
      e.p->value[i] -= e.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
  state.note_step();
}

// ---- training loops ---------------------------------------------------------

namespace {

struct LossMeans {
  double time = 0.0, code = 0.0, joint = 0.0;
  std::size_t n = 0;
  void absorb(double t, double c, double j) {
    time += t;
    code += c;
    joint += j;
    ++n;
  }
  EpochLog row(int epoch, const std::string& split) const {
    double d = n ? static_cast<double>(n) : 1.0;
    return {epoch, split, time / d, code / d, joint / d};
  }
};

class LossCsv {
 public:
  explicit LossCsv(const std::string& path) : path_(path) {
    if (path_.empty()) return;
    bool fresh = !std::filesystem::exists(path_) || std::filesystem::file_size(path_) == 0;
    out_.open(path_, std::ios::app);
    if (!out_) throw IoError("cannot open loss log: " + path_);
    if (fresh) out_ << "epoch,split,loss_time,loss_code,loss_joint\n";
  }
  void append(const EpochLog& r) {
    if (path_.empty()) return;
    out_ << r.epoch << ',' << r.split << ',' << fmt_double(r.loss_time) << ','
         << fmt_double(r.loss_code) << ',' << fmt_double(r.loss_joint) << '\n';
    out_.flush();
  }

 private:
  std::string path_;
  std::ofstream out_;
};

std::vector<std::vector<double>> snapshot_params(ModelState& model) {
  std::vector<std::vector<double>> snap;
  for (Param* p : model.all_params()) snap.push_back(p->value);
  return snap;
}

void restore_params(ModelState& model, const std::vector<std::vector<double>>& snap) {
  auto params = model.all_params();
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = snap[i];
}

void zero_grads(ModelState& model) {
  for (Param* p : model.all_params()) p->zero_grad();
}

}  // namespace

TrainResult pretrain(ModelState& model, AdamState& adam,
                     const std::vector<EventSequence>& train_split,
                     const std::vector<EventSequence>& val_split, const TrainConfig& cfg,
                     const std::string& log_csv, int start_epoch) {
  cfg.validate();
  if (train_split.empty()) throw DataError("pretrain: empty training split");
  for (const auto& s : train_split)
    if (s.events.empty()) throw DataError("pretrain: sequence with no events");

  LossCsv log(log_csv);
  TrainResult res;
  res.epochs_completed = start_epoch;

  std::map<std::string, double> lr;
  for (const auto& g : model.group_names()) lr[g] = cfg.pretrain_lr;

  auto last_good = snapshot_params(model);
  for (int epoch = start_epoch; epoch < cfg.pretrain_epochs; ++epoch) {
    std::vector<std::size_t> order(train_split.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 shuffle_rng(seed_mix(cfg.seed, 0xe90c + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    LossMeans train_means;
    bool diverged = false;
    for (std::size_t b = 0; b < order.size() && !diverged; b += cfg.batch_size) {
      std::size_t b_end = std::min(order.size(), b + cfg.batch_size);
      zero_grads(model);
      LossMeans batch_means;
      bool domain_blowup = false;
      for (std::size_t k = b; k < b_end && !domain_blowup; ++k) {
        std::size_t idx = order[k];
        const EventSequence& seq = train_split[idx];
        std::uint64_t mc_seed =
            seed_mix(cfg.seed, (static_cast<std::uint64_t>(epoch) << 32) ^ idx);
        Tape tape;
        auto enc = model.encoder(tape, seq);
        try {
          auto parts = loss_joint_t(tape, model, enc, seq, mc_seed);
          tape.backward(parts.total);
          tape.flush_param_grads();
          batch_means.absorb(parts.time.scalar(), parts.code.scalar(), parts.total.scalar());
        } catch (const DomainError&) {
          // saturated probabilities (ln of an exact 0/1) mean the run blew up
          domain_blowup = true;
        }
      }
      double batch_n = static_cast<double>(b_end - b);
      double mean_joint = batch_means.joint / batch_n;
      if (domain_blowup || !std::isfinite(mean_joint)) {
        restore_params(model, last_good);
        diverged = true;
        break;
      }
      for (Param* p : model.all_params())
        for (double& g : p->grad) g /= batch_n;
      last_good = snapshot_params(model);
      adam_step(model, adam, cfg, lr);
      train_means.absorb(batch_means.time, batch_means.code, batch_means.joint);
      train_means.n += batch_means.n - 1;  // absorb() counted the batch once
    }
    if (diverged) {
      res.diverged = true;
      break;
    }

    EpochLog train_row = train_means.row(epoch, "train");
    res.log.push_back(train_row);
    log.append(train_row);
    if (!val_split.empty()) {
      LossMeans val_means;
      for (std::size_t i = 0; i < val_split.size(); ++i) {
        Tape tape;
        auto enc = model.encoder(tape, val_split[i]);
        auto parts = loss_joint_t(tape, model, enc, val_split[i], seed_mix(cfg.seed, 0xa11d + i));
        val_means.absorb(parts.time.scalar(), parts.code.scalar(), parts.total.scalar());
      }
      EpochLog val_row = val_means.row(epoch, "val");
      res.log.push_back(val_row);
      log.append(val_row);
    }
    res.epochs_completed = epoch + 1;
  }

  if (!res.diverged) model.mark_pretrained();
  res.optimizer_steps = adam.steps_taken();
  return res;
}

TrainResult finetune(ModelState& model, const std::string& task,
                     const std::vector<EventSequence>& sequences,
                     const std::vector<TaskInstance>& instances, const TrainConfig& cfg,
                     double w_k, const std::string& log_csv) {
  cfg.validate();
  if (!model.pretrained()) throw StateError("finetune: model has not been pretrained");
  if (instances.empty()) throw DataError("finetune: no task instances");

  if (w_k == 0.0) {
    std::size_t pos = 0;
    for (const auto& in : instances) pos += in.label != 0;
    if (pos == 0 || pos == instances.size())
      throw ConfigError("finetune: single-class task data; pass an explicit positive weight");
    w_k = static_cast<double>(instances.size() - pos) / static_cast<double>(pos);
  }

  model.add_task_head(task);
  model.freeze_for_finetune(task);
  AdamState adam;
  std::map<std::string, double> lr{{"wfn", cfg.finetune_lr_pretrained},
                                   {"q_base", cfg.finetune_lr_pretrained},
                                   {"task:" + task, cfg.finetune_lr_new}};

  LossCsv log(log_csv);
  TrainResult res;
  auto last_good = snapshot_params(model);
  for (int epoch = 0; epoch < cfg.finetune_epochs; ++epoch) {
    std::vector<std::size_t> order(instances.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 shuffle_rng(seed_mix(cfg.seed, 0xf1e7 + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    std::size_t batches = 0;
    bool diverged = false;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::size_t b_end = std::min(order.size(), b + cfg.batch_size);
      std::vector<TaskInstance> batch;
      for (std::size_t k = b; k < b_end; ++k) batch.push_back(instances[order[k]]);
      zero_grads(model);
      Tape tape;
      double lv = 0.0;
      bool domain_blowup = false;
      try {
        Tensor loss = loss_task_t(tape, model, task, sequences, batch, w_k);
        lv = loss.scalar();
        tape.backward(loss);
        tape.flush_param_grads();
      } catch (const DomainError&) {
        domain_blowup = true;
      }
      if (domain_blowup || !std::isfinite(lv)) {
        restore_params(model, last_good);
        diverged = true;
        break;
      }
      last_good = snapshot_params(model);
      adam_step(model, adam, cfg, lr);
      epoch_loss += lv;
      ++batches;
    }
    if (diverged) {
      res.diverged = true;
      break;
    }
    EpochLog row{epoch, "train", 0.0, 0.0, epoch_loss / std::max<std::size_t>(1, batches)};
    res.log.push_back(row);
    log.append(row);
    res.epochs_completed = epoch + 1;
  }
  res.optimizer_steps = adam.steps_taken();
  return res;
}

// ---- checkpoints --------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'T', 'C', 'K', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw ParseError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_doubles(std::ostream& os, const std::vector<double>& v) {
  write_u64(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> read_doubles(std::istream& is) {
  std::uint64_t n = read_u64(is);
  std::vector<double> v(n);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw ParseError("checkpoint: truncated data block");
  return v;
}

void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  std::uint64_t n = read_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw ParseError("checkpoint: truncated string");
  return s;
}

json model_config_json(const ModelConfig& c) {
  return json{{"d", c.d},
              {"dz", c.dz},
              {"window", c.window},
              {"n_demographics", c.n_demographics},
              {"max_covariate_days", c.max_covariate_days},
              {"time_weight",
               {{"variant", to_string(c.time_weight.variant)},
                {"order", c.time_weight.order},
                {"mlp_width", c.time_weight.mlp_width}}},
              {"loss",
               {{"gamma_mix", c.loss.gamma_mix},
                {"focal_alpha", c.loss.focal_alpha},
                {"focal_gamma", c.loss.focal_gamma},
                {"smooth_pos", c.loss.smooth_pos},
                {"smooth_neg", c.loss.smooth_neg},
                {"n_mc", c.loss.n_mc}}}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.d = j.at("d").get<std::size_t>();
  c.dz = j.at("dz").get<std::size_t>();
  c.window = j.at("window").get<std::size_t>();
  c.n_demographics = j.at("n_demographics").get<std::size_t>();
  c.max_covariate_days = j.at("max_covariate_days").get<double>();
  const auto& tw = j.at("time_weight");
  c.time_weight.variant = weight_variant_from_string(tw.at("variant").get<std::string>());
  c.time_weight.order = tw.at("order").get<int>();
  c.time_weight.mlp_width = tw.at("mlp_width").get<int>();
  const auto& l = j.at("loss");
  c.loss.gamma_mix = l.at("gamma_mix").get<double>();
  c.loss.focal_alpha = l.at("focal_alpha").get<double>();
  c.loss.focal_gamma = l.at("focal_gamma").get<double>();
  c.loss.smooth_pos = l.at("smooth_pos").get<double>();
  c.loss.smooth_neg = l.at("smooth_neg").get<double>();
  c.loss.n_mc = l.at("n_mc").get<int>();
  return c;
}

json train_config_json(const TrainConfig& c) {
  return json{{"pretrain_epochs", c.pretrain_epochs},
              {"pretrain_lr", c.pretrain_lr},
              {"batch_size", c.batch_size},
              {"finetune_epochs", c.finetune_epochs},
              {"finetune_lr_pretrained", c.finetune_lr_pretrained},
              {"finetune_lr_new", c.finetune_lr_new},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"clip_norm", c.clip_norm},
              {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.pretrain_epochs = j.at("pretrain_epochs").get<int>();
  c.pretrain_lr = j.at("pretrain_lr").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.finetune_epochs = j.at("finetune_epochs").get<int>();
  c.finetune_lr_pretrained = j.at("finetune_lr_pretrained").get<double>();
  c.finetune_lr_new = j.at("finetune_lr_new").get<double>();
  c.adam_beta1 = j.at("adam_beta1").get<double>();
  c.adam_beta2 = j.at("adam_beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void save_checkpoint(ModelState& model, const AdamState& adam, const TrainConfig& cfg,
                     int epochs_done, const std::string& path) {
  json header;
  header["version"] = 1;
  header["model"] = model_config_json(model.config());
  header["train"] = train_config_json(cfg);
  header["model_seed"] = model.seed();
  header["epochs_done"] = epochs_done;
  header["pretrained"] = model.pretrained();
  header["tasks"] = model.task_names();
  header["frozen"] = model.frozen_groups();
  header["adam_steps"] = adam.steps_taken();
  json manifest = json::array();
  for (const auto& g : model.group_names()) {
    json pj = json::array();
    for (Param* p : model.group(g)) pj.push_back(json{{"name", p->name}, {"shape", p->shape}});
    manifest.push_back(json{{"group", g}, {"params", pj}});
  }
  header["manifest"] = manifest;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kCkptMagic, 4);
  write_string(out, header.dump());

  const CodeVocabulary& v = model.vocab();
  write_u64(out, v.size());
  write_u64(out, v.d_emb);
  for (std::size_t i = 0; i < v.size(); ++i) {
    write_string(out, v.codes[i]);
    write_string(out, v.descriptions[i]);
  }
  write_doubles(out, v.embeddings);

  for (const auto& g : model.group_names())
    for (Param* p : model.group(g)) write_doubles(out, p->value);

  for (const auto& g : model.group_names())
    for (Param* p : model.group(g)) {
      auto it = adam.slots().find(p->name);
      if (it == adam.slots().end()) {
        write_u64(out, 0);
        write_doubles(out, {});
        write_doubles(out, {});
      } else {
        write_u64(out, it->second.t);
        write_doubles(out, it->second.m);
        write_doubles(out, it->second.v);
      }
    }
  if (!out) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw ParseError("checkpoint: bad magic in " + path);
  json header;
  try {
    header = json::parse(read_string(in));
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint header: ") + e.what());
  }

  auto vocab = std::make_shared<CodeVocabulary>();
  std::uint64_t n = read_u64(in);
  vocab->d_emb = read_u64(in);
  for (std::uint64_t i = 0; i < n; ++i) {
    vocab->codes.push_back(read_string(in));
    vocab->descriptions.push_back(read_string(in));
  }
  vocab->embeddings = read_doubles(in);
  vocab->rebuild_index();
  vocab->validate();

  ModelConfig mc = model_config_from_json(header.at("model"));
  std::uint64_t model_seed = header.at("model_seed").get<std::uint64_t>();
  ModelState model(vocab, mc, model_seed);
  for (const auto& t : header.at("tasks")) model.add_task_head(t.get<std::string>());

  for (const auto& gj : header.at("manifest")) {
    std::string gname = gj.at("group").get<std::string>();
    auto params = model.group(gname);
    const auto& pj = gj.at("params");
    if (pj.size() != params.size())
      throw ParseError("checkpoint: group " + gname + " has unexpected parameter count");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (pj[i].at("name").get<std::string>() != params[i]->name)
        throw ParseError("checkpoint: parameter name mismatch in group " + gname);
    }
  }

  for (const auto& g : model.group_names())
    for (Param* p : model.group(g)) {
      auto v = read_doubles(in);
      if (v.size() != p->size())
        throw ParseError("checkpoint: size mismatch for parameter " + p->name);
      p->value = std::move(v);
    }

  AdamState adam;
  for (const auto& g : model.group_names())
    for (Param* p : model.group(g)) {
      std::uint64_t t = read_u64(in);
      auto m = read_doubles(in);
      auto v = read_doubles(in);
      if (t > 0) {
        auto& slot = adam.slot(*p);
        slot.t = t;
        slot.m = std::move(m);
        slot.v = std::move(v);
      }
    }
  for (std::uint64_t i = 0; i < header.at("adam_steps").get<std::uint64_t>(); ++i)
    adam.note_step();

  for (const auto& f : header.at("frozen")) model.set_frozen(f.get<std::string>(), true);
  if (header.at("pretrained").get<bool>()) model.mark_pretrained();

  return Checkpoint{std::move(model), std::move(adam), train_config_from_json(header.at("train")),
                    header.at("epochs_done").get<int>()};
}

}  // namespace tale
