// Command-line front end: data synthesis, code roll-up, pre-training,
// fine-tuning, evaluation, gradient checking and temporal-curve dumps.
// Exit codes: 0 success, 1 usage/validation error, 2 runtime error.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "tale/config.hpp"
#include "tale/events.hpp"
#include "tale/grad_check.hpp"
#include "tale/metrics.hpp"
#include "tale/model.hpp"
#include "tale/train.hpp"
#include "tale/util.hpp"
#include "tale/vocab.hpp"

namespace {

using namespace tale;
using nlohmann::json;

struct VocabSpec {
  std::string path;
  std::string random_spec;  // "N:D:SEED"

  std::shared_ptr<CodeVocabulary> resolve() const {
    if (!path.empty() && !random_spec.empty())
      throw ConfigError("--vocab and --random-vocab are mutually exclusive");
    if (!path.empty()) return std::make_shared<CodeVocabulary>(load_vocabulary(path));
    if (!random_spec.empty()) {
      auto parts = split_on(random_spec, ':');
      if (parts.size() != 3) throw ConfigError("--random-vocab expects N:D:SEED");
      return std::make_shared<CodeVocabulary>(random_vocabulary(
          std::stoull(parts[0]), std::stoull(parts[1]), std::stoull(parts[2])));
    }
    throw ConfigError("one of --vocab or --random-vocab is required");
  }
};

RunConfig resolve_config(const std::string& config_path,
                         const std::vector<std::string>& overrides) {
  RunConfig cfg = config_path.empty() ? RunConfig() : RunConfig::from_file(config_path);
  for (const auto& kv : overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  return cfg;
}

std::vector<double> parse_grid(const std::string& spec) {
  auto parts = split_on(spec, ':');
  if (parts.size() != 3) throw ConfigError("--grid expects start:end:step");
  double start = std::stod(parts[0]), end = std::stod(parts[1]), step = std::stod(parts[2]);
  if (step <= 0 || end < start) throw ConfigError("--grid expects start <= end and step > 0");
  std::vector<double> grid;
  for (double v = start; v <= end + 1e-12; v += step) grid.push_back(v);
  return grid;
}

ProcessKind kind_from_string(const std::string& s) {
  if (s == "const_poisson") return ProcessKind::const_poisson;
  if (s == "piecewise_poisson") return ProcessKind::piecewise_poisson;
  if (s == "self_exciting") return ProcessKind::self_exciting;
  if (s == "deterministic_code") return ProcessKind::deterministic_code;
  throw ConfigError("unknown --kind '" + s + "'");
}

// Scored next-code queries over a dataset, reused by eval.
struct CodeEvalRow {
  std::string patient_id;
  std::size_t query_index;
  RankedPrediction pred;
};

std::vector<CodeEvalRow> score_code_queries(ModelState& model,
                                            const std::vector<EventSequence>& seqs) {
  std::vector<CodeEvalRow> rows;
  for (const auto& seq : seqs) {
    Tape tape;
    auto enc = model.encoder(tape, seq);
    for (std::size_t j : code_query_indices(seq)) {
      Tensor probs = sigmoid(model.code_logits_at(tape, enc, seq, seq.events[j].t, true));
      rows.push_back({seq.patient_id, j, {probs.value(), code_target(seq, j)}});
    }
  }
  return rows;
}

int cmd_synth(const std::string& kind_str, double rate, double rate2, double mu, double alpha,
              double beta, double T, std::size_t n_codes, std::size_t n_seq, std::uint64_t seed,
              const std::string& out, std::size_t marker_code, double window_days,
              double horizon_days, double bg_per_day, const std::string& task_out) {
  std::size_t d_emb = 16;
  auto vocab = random_vocabulary(n_codes, d_emb, seed);
  if (kind_str == "marker_task") {
    MarkerTaskParams p;
    p.n_sequences = n_seq;
    p.n_codes = n_codes;
    p.marker_code = marker_code;
    p.window_days = window_days;
    p.horizon_days = horizon_days;
    p.background_per_day = bg_per_day;
    TaskDataset data = make_marker_task(p, seed);
    if (!out.empty()) save_dataset(data.sequences, vocab, out);
    if (!task_out.empty()) save_task_dataset(data, vocab, task_out);
    std::cout << "wrote " << data.sequences.size() << " sequences, " << data.instances.size()
              << " task instances\n";
    return 0;
  }
  SimulateParams p;
  p.kind = kind_from_string(kind_str);
  p.rate = rate;
  p.rate2 = rate2;
  p.mu = mu;
  p.alpha = alpha;
  p.beta = beta;
  std::vector<EventSequence> seqs;
  for (std::size_t i = 0; i < n_seq; ++i) {
    auto [seq, truth] = simulate(p, T, n_codes, seed_mix(seed, i));
    seq.patient_id = "P" + std::to_string(i);
    seqs.push_back(std::move(seq));
  }
  save_dataset(seqs, vocab, out);
  std::cout << "wrote " << seqs.size() << " sequences to " << out << "\n";
  return 0;
}

int cmd_rollup(const std::string& data_path, const std::string& map_path,
               const std::string& out_path) {
  auto mapping = load_rollup_map(map_path);
  std::ifstream in(data_path);
  if (!in) throw IoError("cannot open dataset: " + data_path);
  std::ofstream out(out_path);
  if (!out) throw IoError("cannot write dataset: " + out_path);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    json j = json::parse(line);
    if (j.contains("events")) {
      std::vector<RawEvent> raw;
      for (const auto& e : j.at("events")) raw.push_back({e[0].get<double>(), e[1].get<std::string>()});
      raw = apply_rollup(raw, mapping);
      json events = json::array();
      for (const auto& e : raw) events.push_back(json::array({e.t_days, e.code}));
      j["events"] = std::move(events);
    }
    out << j.dump() << '\n';
    ++n;
  }
  std::cout << "rewrote " << n << " sequences to " << out_path << "\n";
  return 0;
}

int cmd_pretrain(const VocabSpec& vspec, const std::string& data_path,
                 const std::string& config_path, const std::vector<std::string>& overrides,
                 std::optional<std::uint64_t> seed_flag, const std::string& out,
                 const std::string& log_csv) {
  RunConfig cfg = resolve_config(config_path, overrides);
  if (seed_flag) cfg.set("train.seed", std::to_string(*seed_flag));
  auto vocab = vspec.resolve();
  auto data = load_dataset(data_path, *vocab);
  auto parts = split(data, 0.7, 0.1, 0.2, cfg.train_config().seed);
  ModelState model(vocab, cfg.model_config(), cfg.train_config().seed);
  AdamState adam;
  TrainConfig tc = cfg.train_config();
  TrainResult res = pretrain(model, adam, parts.train, parts.val, tc, log_csv);
  save_checkpoint(model, adam, tc, res.epochs_completed, out);
  std::cout << (res.diverged ? "diverged after " : "completed ") << res.epochs_completed
            << " epochs, " << res.optimizer_steps << " optimizer steps; checkpoint: " << out
            << "\n";
  return res.diverged ? 2 : 0;
}

int cmd_finetune(const std::string& ckpt_path, const std::string& task_data_path,
                 const std::string& task, const std::vector<std::string>& overrides,
                 std::optional<std::uint64_t> seed_flag, double w_k, const std::string& out,
                 const std::string& log_csv) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  TrainConfig tc = ckpt.train;
  if (!overrides.empty()) {
    // Round-trip the checkpoint schedule through the key registry so flag
    // overrides are validated and merged the same way as for pretrain.
    RunConfig rc;
    rc.set("train.pretrain_epochs", std::to_string(tc.pretrain_epochs));
    rc.set("train.pretrain_lr", fmt_double(tc.pretrain_lr));
    rc.set("train.batch_size", std::to_string(tc.batch_size));
    rc.set("train.finetune_epochs", std::to_string(tc.finetune_epochs));
    rc.set("train.finetune_lr_pretrained", fmt_double(tc.finetune_lr_pretrained));
    rc.set("train.finetune_lr_new", fmt_double(tc.finetune_lr_new));
    rc.set("train.adam_beta1", fmt_double(tc.adam_beta1));
    rc.set("train.adam_beta2", fmt_double(tc.adam_beta2));
    rc.set("train.adam_eps", fmt_double(tc.adam_eps));
    rc.set("train.clip_norm", fmt_double(tc.clip_norm));
    rc.set("train.seed", std::to_string(tc.seed));
    for (const auto& kv : overrides) {
      auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value");
      rc.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    tc = rc.train_config();
  }
  if (seed_flag) tc.seed = *seed_flag;
  TaskDataset data = load_task_dataset(task_data_path, ckpt.model.vocab());
  TrainResult res = finetune(ckpt.model, task, data.sequences, data.instances, tc, w_k, log_csv);
  save_checkpoint(ckpt.model, ckpt.adam, tc, ckpt.epochs_done, out);
  std::cout << (res.diverged ? "diverged after " : "completed ") << res.epochs_completed
            << " epochs; checkpoint: " << out << "\n";
  return res.diverged ? 2 : 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& split_sel,
             std::uint64_t split_seed, const std::string& task, const std::string& task_data_path,
             const std::string& report_path, const std::string& scores_path) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  ModelState& model = ckpt.model;
  json report;

  if (!data_path.empty()) {
    auto data = load_dataset(data_path, model.vocab());
    std::vector<EventSequence> subset;
    if (split_sel == "all") {
      subset = std::move(data);
    } else {
      auto parts = split(data, 0.7, 0.1, 0.2, split_seed);
      if (split_sel == "train")
        subset = std::move(parts.train);
      else if (split_sel == "val")
        subset = std::move(parts.val);
      else if (split_sel == "test")
        subset = std::move(parts.test);
      else
        throw ConfigError("--split must be one of all/train/val/test");
    }
    auto rows = score_code_queries(model, subset);
    if (rows.empty()) throw DataError("eval: no next-code queries in the selected data");
    std::vector<RankedPrediction> preds;
    preds.reserve(rows.size());
    for (auto& r : rows) preds.push_back(r.pred);
    report["acc_at_5"] = acc_at_k(preds, 5);
    report["acc_at_10"] = acc_at_k(preds, 10);
    report["acc_at_20"] = acc_at_k(preds, 20);
    CodeMetrics cm = macro_f1_recall(preds);
    report["macro_f1"] = cm.macro_f1;
    report["recall"] = cm.recall;
    report["n_instances"] = preds.size();

    if (!scores_path.empty()) {
      std::ofstream sc(scores_path);
      if (!sc) throw IoError("cannot write scores: " + scores_path);
      sc << "patient_id,query_index,top_code,top_score,hit5,hit10,hit20\n";
      for (const auto& r : rows) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < r.pred.scores.size(); ++c)
          if (r.pred.scores[c] > r.pred.scores[best]) best = c;
        auto hit = [&](std::size_t k) {
          return acc_at_k({r.pred}, k) > 0.5 ? 1 : 0;
        };
        sc << r.patient_id << ',' << r.query_index << ',' << model.vocab().codes[best] << ','
           << fmt_double(r.pred.scores[best]) << ',' << hit(5) << ',' << hit(10) << ',' << hit(20)
           << '\n';
      }
    }
  }

  if (!task.empty()) {
    if (task_data_path.empty()) throw ConfigError("--task requires --task-data");
    if (!model.has_task_head(task)) throw StateError("checkpoint has no head for task '" + task + "'");
    TaskDataset data = load_task_dataset(task_data_path, model.vocab());
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& inst : data.instances) {
      scores.push_back(task_score(model, task, data.sequences[inst.seq_index], inst.t_cut));
      labels.push_back(inst.label);
    }
    BinaryMetrics bm = binary_metrics(scores, labels);
    report["task"] = task;
    report["auroc"] = bm.auroc;
    report["auprc"] = bm.auprc;
    report["f1"] = bm.f1;
    if (!scores_path.empty() && data_path.empty()) {
      std::ofstream sc(scores_path);
      if (!sc) throw IoError("cannot write scores: " + scores_path);
      sc << "index,score,label\n";
      for (std::size_t i = 0; i < scores.size(); ++i)
        sc << i << ',' << fmt_double(scores[i]) << ',' << labels[i] << '\n';
    }
  }

  if (report.empty()) throw ConfigError("eval: nothing to do; pass --data and/or --task");
  std::string dumped = report.dump(2);
  if (report_path.empty()) {
    std::cout << dumped << "\n";
  } else {
    std::ofstream out(report_path);
    if (!out) throw IoError("cannot write report: " + report_path);
    out << dumped << "\n";
    std::cout << "report: " << report_path << "\n";
  }
  return 0;
}

int cmd_gradcheck(const std::string& ckpt_path, const VocabSpec& vspec,
                  const std::string& config_path, const std::vector<std::string>& overrides,
                  const std::string& data_path, std::size_t seq_index, double eps, double tol,
                  std::uint64_t seed) {
  std::optional<ModelState> model;
  if (!ckpt_path.empty()) {
    model.emplace(load_checkpoint(ckpt_path).model);
  } else {
    RunConfig cfg = resolve_config(config_path, overrides);
    model.emplace(vspec.resolve(), cfg.model_config(), seed);
  }
  auto data = load_dataset(data_path, model->vocab());
  if (seq_index >= data.size()) throw ConfigError("--seq-index out of range");
  const EventSequence& seq = data[seq_index];

  auto eval = [&](bool with_grad) {
    Tape tape;
    auto enc = model->encoder(tape, seq);
    auto parts = loss_joint_t(tape, *model, enc, seq, seed);
    if (with_grad) {
      tape.backward(parts.total);
      tape.flush_param_grads();
    }
    return parts.total.scalar();
  };
  auto params = model->all_params();
  GradCheckReport rep = grad_check(eval, params, eps);
  std::cout << "max relative error: " << fmt_double(rep.max_rel_err) << " over " << rep.n_coords
            << " coordinates (worst: " << rep.worst_param << "[" << rep.worst_coord << "])\n";
  if (rep.max_rel_err < tol) {
    std::cout << "gradcheck passed (tolerance " << fmt_double(tol) << ")\n";
    return 0;
  }
  std::cout << "gradcheck FAILED (tolerance " << fmt_double(tol) << ")\n";
  return 2;
}

int cmd_dump_weights(const std::string& ckpt_path, const std::string& grid_spec,
                     const std::string& out_path) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  auto grid = parse_grid(grid_spec);
  dump_curve(ckpt.model.wfn(), grid, out_path);
  std::cout << "wrote " << grid.size() << " rows to " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"time-aware attention point-process model for coded event sequences"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate synthetic datasets");
  std::string s_kind = "const_poisson", s_out, s_task_out;
  double s_rate = 1.0, s_rate2 = 1.0, s_mu = 0.5, s_alpha = 0.5, s_beta = 1.0, s_T = 10.0;
  double s_window_days = 90.0, s_horizon_days = 1000.0, s_bg = 0.02;
  std::size_t s_codes = 10, s_nseq = 100, s_marker = 0;
  std::uint64_t s_seed = 0;
  synth->add_option("--kind", s_kind,
                    "const_poisson|piecewise_poisson|self_exciting|deterministic_code|marker_task")
      ->capture_default_str();
  synth->add_option("--rate", s_rate, "event rate (first-half rate for piecewise)")->capture_default_str();
  synth->add_option("--rate2", s_rate2, "second-half rate for piecewise")->capture_default_str();
  synth->add_option("--mu", s_mu, "Hawkes baseline")->capture_default_str();
  synth->add_option("--alpha", s_alpha, "Hawkes jump size")->capture_default_str();
  synth->add_option("--beta", s_beta, "Hawkes decay")->capture_default_str();
  synth->add_option("--T", s_T, "horizon in preprocessed units")->capture_default_str();
  synth->add_option("--n-codes", s_codes, "vocabulary size")->capture_default_str();
  synth->add_option("--n-seq", s_nseq, "number of sequences")->capture_default_str();
  synth->add_option("--seed", s_seed, "random seed")->capture_default_str();
  synth->add_option("--out", s_out, "output JSONL path")->required();
  synth->add_option("--marker-code", s_marker, "marker code index (marker_task)")->capture_default_str();
  synth->add_option("--window-days", s_window_days, "label window in days (marker_task)")->capture_default_str();
  synth->add_option("--horizon-days", s_horizon_days, "observation span in days (marker_task)")->capture_default_str();
  synth->add_option("--bg-per-day", s_bg, "background event rate per day (marker_task)")->capture_default_str();
  synth->add_option("--task-out", s_task_out, "labeled task JSONL path (marker_task)");

  // rollup
  auto* rollup = app.add_subcommand("rollup", "apply a code roll-up map to a dataset");
  std::string r_data, r_map, r_out;
  rollup->add_option("--data", r_data, "input JSONL")->required();
  rollup->add_option("--map", r_map, "two-column TSV source<TAB>target")->required();
  rollup->add_option("--out", r_out, "output JSONL")->required();

  // shared flags
  auto add_vocab_flags = [](CLI::App* cmd, VocabSpec& spec) {
    cmd->add_option("--vocab", spec.path, "embedding file (TSV or binary)");
    cmd->add_option("--random-vocab", spec.random_spec, "random embeddings N:D:SEED");
  };

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "joint pre-training");
  VocabSpec p_vocab;
  std::string p_data, p_config, p_out = "ckpt.bin", p_log;
  std::vector<std::string> p_set;
  std::optional<std::uint64_t> p_seed;
  add_vocab_flags(pre, p_vocab);
  pre->add_option("--data", p_data, "dataset JSONL")->required();
  pre->add_option("--config", p_config, "key = value config file");
  pre->add_option("--set", p_set, "config override key=value (repeatable)");
  pre->add_option("--seed", p_seed, "training seed (overrides config)");
  pre->add_option("--out", p_out, "checkpoint path")->capture_default_str();
  pre->add_option("--log", p_log, "loss log CSV path");

  // finetune
  auto* fin = app.add_subcommand("finetune", "task fine-tuning from a checkpoint");
  std::string f_ckpt, f_task_data, f_task, f_out = "ckpt_task.bin", f_log;
  std::vector<std::string> f_set;
  std::optional<std::uint64_t> f_seed;
  double f_wk = 0.0;
  fin->add_option("--ckpt", f_ckpt, "pretrained checkpoint")->required();
  fin->add_option("--task-data", f_task_data, "labeled task JSONL")->required();
  fin->add_option("--task", f_task, "task name")->required();
  fin->add_option("--set", f_set, "config override key=value (repeatable)");
  fin->add_option("--seed", f_seed, "training seed (overrides checkpoint config)");
  fin->add_option("--w-pos", f_wk, "positive-class weight (0 = #neg/#pos)")->capture_default_str();
  fin->add_option("--out", f_out, "output checkpoint path")->capture_default_str();
  fin->add_option("--log", f_log, "loss log CSV path");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string e_ckpt, e_data, e_split = "all", e_task, e_task_data, e_report, e_scores;
  std::uint64_t e_split_seed = 0;
  ev->add_option("--ckpt", e_ckpt, "checkpoint")->required();
  ev->add_option("--data", e_data, "dataset JSONL for next-code metrics");
  ev->add_option("--split", e_split, "all|train|val|test")->capture_default_str();
  ev->add_option("--split-seed", e_split_seed, "seed used for the 70/10/20 split")->capture_default_str();
  ev->add_option("--task", e_task, "binary task name");
  ev->add_option("--task-data", e_task_data, "labeled task JSONL");
  ev->add_option("--report", e_report, "JSON report path (default: stdout)");
  ev->add_option("--scores", e_scores, "per-instance score CSV path");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient check of the joint loss");
  std::string g_ckpt, g_config, g_data;
  VocabSpec g_vocab;
  std::vector<std::string> g_set;
  std::size_t g_seq = 0;
  double g_eps = 1e-3, g_tol = 1e-4;
  std::uint64_t g_seed = 0;
  gc->add_option("--ckpt", g_ckpt, "checkpoint (otherwise a fresh model is built)");
  add_vocab_flags(gc, g_vocab);
  gc->add_option("--config", g_config, "config file for a fresh model");
  gc->add_option("--set", g_set, "config override key=value (repeatable)");
  gc->add_option("--data", g_data, "dataset JSONL")->required();
  gc->add_option("--seq-index", g_seq, "sequence to check")->capture_default_str();
  gc->add_option("--eps", g_eps, "finite-difference step")->capture_default_str();
  gc->add_option("--tol", g_tol, "pass threshold on max relative error")->capture_default_str();
  gc->add_option("--seed", g_seed, "model/MC seed")->capture_default_str();

  // dump-weights
  auto* dw = app.add_subcommand("dump-weights", "dump the learned temporal weight curve");
  std::string d_ckpt, d_grid = "0:730:1", d_out;
  dw->add_option("--ckpt", d_ckpt, "checkpoint")->required();
  dw->add_option("--grid", d_grid, "day grid start:end:step")->capture_default_str();
  dw->add_option("--out", d_out, "CSV output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed())
      return cmd_synth(s_kind, s_rate, s_rate2, s_mu, s_alpha, s_beta, s_T, s_codes, s_nseq,
                       s_seed, s_out, s_marker, s_window_days, s_horizon_days, s_bg, s_task_out);
    if (rollup->parsed()) return cmd_rollup(r_data, r_map, r_out);
    if (pre->parsed())
      return cmd_pretrain(p_vocab, p_data, p_config, p_set, p_seed, p_out, p_log);
    if (fin->parsed())
      return cmd_finetune(f_ckpt, f_task_data, f_task, f_set, f_seed, f_wk, f_out, f_log);
    if (ev->parsed())
      return cmd_eval(e_ckpt, e_data, e_split, e_split_seed, e_task, e_task_data, e_report,
                      e_scores);
    if (gc->parsed())
      return cmd_gradcheck(g_ckpt, g_vocab, g_config, g_set, g_data, g_seq, g_eps, g_tol, g_seed);
    if (dw->parsed()) return cmd_dump_weights(d_ckpt, d_grid, d_out);
    std::cerr << "no subcommand\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
