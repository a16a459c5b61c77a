#include "tale/events.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "tale/util.hpp"

namespace tale {

using nlohmann::json;

EventSequence preprocess_times(const std::vector<RawEvent>& raw, const CodeVocabulary& vocab,
                               std::vector<double> demographics, const std::string& patient_id,
                               std::optional<double> horizon_days) {
  if (raw.empty()) throw DataError("preprocess_times: empty event list");
  EventSequence seq;
  seq.patient_id = patient_id;
  seq.demographics = std::move(demographics);
  double d0 = raw.front().t_days;
  double prev = -1.0;
  for (const auto& e : raw) {
    if (!std::isfinite(e.t_days)) throw DataError("preprocess_times: non-finite timestamp");
    if (e.code.empty()) throw DataError("preprocess_times: empty code");
    double rel = e.t_days - d0;
    if (rel < 0.0)
      throw DataError("preprocess_times: events not sorted (negative relative time at day " +
                      fmt_double(e.t_days) + ")");
    double t = pre_from_days(rel);
    if (t < prev) throw DataError("preprocess_times: events not sorted");
    prev = t;
    seq.events.push_back({t, vocab.require(e.code)});
  }
  if (horizon_days.has_value()) {
    double T = pre_from_days(*horizon_days);
    if (T < prev) throw DataError("preprocess_times: horizon before last event");
    seq.horizon = T;
  } else {
    seq.horizon = prev;
  }
  return seq;
}

std::vector<double> covariates_at(const EventSequence& seq, double t, double max_days) {
  std::vector<double> z = seq.demographics;
  double frac = days_from_pre(std::max(t, 0.0)) / max_days;
  z.push_back(std::clamp(frac, 0.0, 1.0));
  return z;
}

std::vector<RawEvent> apply_rollup(const std::vector<RawEvent>& raw,
                                   const std::unordered_map<std::string, std::string>& mapping) {
  for (const auto& [src, dst] : mapping) {
    auto it = mapping.find(dst);
    if (it != mapping.end() && it->second != dst)
      throw DataError("rollup mapping is not flat: '" + src + "' -> '" + dst + "' -> '" +
                      it->second + "'");
  }
  std::vector<RawEvent> out = raw;
  for (auto& e : out) {
    auto it = mapping.find(e.code);
    if (it != mapping.end()) e.code = it->second;
  }
  return out;
}

std::unordered_map<std::string, std::string> load_rollup_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open rollup map: " + path);
  std::unordered_map<std::string, std::string> m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cols = split_on(line, '\t');
    if (cols.size() != 2)
      throw ParseError("rollup map line " + std::to_string(lineno) + ": expected 2 columns");
    m[cols[0]] = cols[1];
  }
  return m;
}

// ---- synthetic processes ---------------------------------------------------

namespace {

void check_rates(const SimulateParams& p) {
  switch (p.kind) {
    case ProcessKind::const_poisson:
    case ProcessKind::deterministic_code:
      if (!(p.rate > 0.0)) throw ConfigError("simulate: rate must be > 0");
      break;
    case ProcessKind::piecewise_poisson:
      if (!(p.rate > 0.0) || !(p.rate2 > 0.0))
        throw ConfigError("simulate: piecewise rates must be > 0");
      break;
    case ProcessKind::self_exciting:
      if (!(p.mu > 0.0) || !(p.alpha > 0.0) || !(p.beta > 0.0))
        throw ConfigError("simulate: Hawkes parameters must be > 0");
      if (p.alpha >= p.beta)
        throw ConfigError("simulate: unstable Hawkes process (alpha >= beta)");
      break;
  }
}

std::vector<double> sample_homogeneous(double rate, double T, std::mt19937_64& rng) {
  std::exponential_distribution<double> exp_dist(rate);
  std::vector<double> times;
  double t = exp_dist(rng);
  while (t <= T) {
    times.push_back(t);
    t += exp_dist(rng);
  }
  return times;
}

}  // namespace

std::vector<double> sample_process(const SimulateParams& p, double T, std::mt19937_64& rng) {
  check_rates(p);
  if (!(T > 0.0)) throw ConfigError("simulate: T must be > 0");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  switch (p.kind) {
    case ProcessKind::const_poisson:
    case ProcessKind::deterministic_code:
      return sample_homogeneous(p.rate, T, rng);
    case ProcessKind::piecewise_poisson: {
      // Thinning against the dominating constant rate.
      double rmax = std::max(p.rate, p.rate2);
      std::exponential_distribution<double> exp_dist(rmax);
      std::vector<double> times;
      double t = exp_dist(rng);
      while (t <= T) {
        double r = t < T / 2.0 ? p.rate : p.rate2;
        if (unif(rng) * rmax <= r) times.push_back(t);
        t += exp_dist(rng);
      }
      return times;
    }
    case ProcessKind::self_exciting: {
      // Ogata thinning with the piecewise-constant upper bound taken just
      // after the most recent candidate or accepted point.
      std::vector<double> times;
      double t = 0.0;
      double excitation = 0.0;  // sum of alpha * exp(-beta (t - t_i))
      while (true) {
        double lambda_bar = p.mu + excitation;
        std::exponential_distribution<double> exp_dist(lambda_bar);
        double w = exp_dist(rng);
        double cand = t + w;
        if (cand > T) break;
        excitation *= std::exp(-p.beta * (cand - t));
        t = cand;
        double lambda_t = p.mu + excitation;
        if (unif(rng) * lambda_bar <= lambda_t) {
          times.push_back(t);
          excitation += p.alpha;
        }
      }
      return times;
    }
  }
  throw ConfigError("simulate: unknown process kind");
}

double SyntheticTruth::intensity_at(double t, const std::vector<double>& prior_times) const {
  switch (kind) {
    case ProcessKind::const_poisson:
    case ProcessKind::deterministic_code:
      return rate;
    case ProcessKind::piecewise_poisson:
      return t < breakpoint ? rate : rate2;
    case ProcessKind::self_exciting: {
      double lam = mu;
      for (double ti : prior_times)
        if (ti < t) lam += alpha * std::exp(-beta * (t - ti));
      return lam;
    }
  }
  return 0.0;
}

std::pair<EventSequence, SyntheticTruth> simulate(const SimulateParams& p, double T,
                                                  std::size_t n_codes, std::uint64_t seed) {
  if (n_codes < 1) throw ConfigError("simulate: n_codes must be >= 1");
  std::mt19937_64 rng(seed_mix(seed, 0x51e7));
  std::vector<double> times = sample_process(p, T, rng);

  EventSequence seq;
  seq.patient_id = "P" + std::to_string(seed);
  seq.horizon = T;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> code_dist(0, n_codes - 1);

  bool cyclic = p.kind == ProcessKind::deterministic_code;
  std::size_t next_code = 0;
  auto draw_code = [&]() -> std::size_t {
    if (cyclic) {
      std::size_t c = next_code;
      next_code = (next_code + 1) % n_codes;
      return c;
    }
    return code_dist(rng);
  };

  if (p.anchor_at_zero) seq.events.push_back({0.0, draw_code()});
  for (double t : times) seq.events.push_back({t, draw_code()});
  for (std::size_t i = 0; i < p.n_demographics; ++i) seq.demographics.push_back(unif(rng));

  SyntheticTruth truth;
  truth.kind = p.kind;
  truth.rate = p.rate;
  truth.rate2 = p.rate2;
  truth.breakpoint = T / 2.0;
  truth.horizon = T;
  truth.mu = p.mu;
  truth.alpha = p.alpha;
  truth.beta = p.beta;
  truth.n_codes = n_codes;
  truth.has_code_rule = cyclic;
  return {std::move(seq), truth};
}

// ---- splits ------------------------------------------------------------------

SplitResult split(const std::vector<EventSequence>& dataset, double f_train, double f_val,
                  double f_test, std::uint64_t seed) {
  if (std::abs(f_train + f_val + f_test - 1.0) > 1e-9)
    throw ConfigError("split: fractions must sum to 1");
  std::size_t n = dataset.size();
  auto n_train = static_cast<std::size_t>(std::llround(f_train * static_cast<double>(n)));
  auto n_val = static_cast<std::size_t>(std::llround(f_val * static_cast<double>(n)));
  if (n_train < 1 || n_val < 1 || n_train + n_val + 1 > n)
    throw DataError("split: not enough sequences for a " + fmt_double(f_train) + "/" +
                    fmt_double(f_val) + "/" + fmt_double(f_test) + " partition of " +
                    std::to_string(n));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed_mix(seed, 0x5b17));
  std::shuffle(order.begin(), order.end(), rng);
  SplitResult out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = dataset[order[i]];
    if (i < n_train)
      out.train.push_back(s);
    else if (i < n_train + n_val)
      out.val.push_back(s);
    else
      out.test.push_back(s);
  }
  return out;
}

// ---- JSONL io ------------------------------------------------------------------

namespace {

EventSequence sequence_from_json(const json& j, const CodeVocabulary& vocab, bool allow_empty,
                                 std::size_t lineno) {
  std::string pid = j.value("patient_id", "");
  std::vector<double> demo;
  if (j.contains("demographics"))
    for (const auto& d : j.at("demographics")) demo.push_back(d.get<double>());
  std::vector<RawEvent> raw;
  if (j.contains("events"))
    for (const auto& e : j.at("events")) {
      if (!e.is_array() || e.size() != 2)
        throw ParseError("dataset line " + std::to_string(lineno) + ": event must be [t_days, code]");
      raw.push_back({e[0].get<double>(), e[1].get<std::string>()});
    }
  std::optional<double> horizon;
  if (j.contains("horizon_days")) horizon = j.at("horizon_days").get<double>();
  if (raw.empty()) {
    if (!allow_empty)
      throw DataError("dataset line " + std::to_string(lineno) + ": sequence has no events");
    EventSequence seq;
    seq.patient_id = pid;
    seq.demographics = std::move(demo);
    seq.horizon = horizon ? pre_from_days(*horizon) : 0.0;
    return seq;
  }
  return preprocess_times(raw, vocab, std::move(demo), pid, horizon);
}

json sequence_to_json(const EventSequence& seq, const CodeVocabulary& vocab) {
  json j;
  j["patient_id"] = seq.patient_id;
  j["demographics"] = seq.demographics;
  json events = json::array();
  for (const auto& e : seq.events)
    events.push_back(json::array({days_from_pre(e.t), vocab.codes.at(e.code)}));
  j["events"] = std::move(events);
  j["horizon_days"] = days_from_pre(seq.horizon);
  return j;
}

}  // namespace

std::vector<EventSequence> load_dataset(const std::string& path, const CodeVocabulary& vocab,
                                        bool allow_empty) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset: " + path);
  std::vector<EventSequence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(sequence_from_json(j, vocab, allow_empty, lineno));
  }
  return out;
}

void save_dataset(const std::vector<EventSequence>& seqs, const CodeVocabulary& vocab,
                  const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset: " + path);
  for (const auto& s : seqs) out << sequence_to_json(s, vocab).dump() << '\n';
  if (!out) throw IoError("write failed: " + path);
}

// ---- marker recency task --------------------------------------------------------

TaskDataset make_marker_task(const MarkerTaskParams& p, std::uint64_t seed) {
  if (p.marker_code >= p.n_codes) throw ConfigError("marker task: marker_code out of range");
  if (p.n_codes < 2) throw ConfigError("marker task: need at least 2 codes");
  if (p.horizon_days < 4.0 * p.window_days)
    throw ConfigError("marker task: horizon_days must be at least 4x window_days");

  // Old markers live in [0, old_max]: outside the window for every sequence,
  // so only the planted recent marker separates the classes.
  double old_max = std::min(0.6 * p.horizon_days, p.horizon_days - 1.1 * p.window_days);

  TaskDataset data;
  for (std::size_t i = 0; i < p.n_sequences; ++i) {
    std::mt19937_64 rng(seed_mix(seed, i));
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    int label = static_cast<int>(i % 2);
    // first: background event days (codes assigned in time order below)
    std::vector<std::pair<double, bool>> day_marks;  // (day, is_marker)
    day_marks.emplace_back(0.0, false);              // initial record
    std::exponential_distribution<double> gap(p.background_per_day);
    for (double d = gap(rng); d <= p.horizon_days; d += gap(rng)) day_marks.emplace_back(d, false);

    day_marks.emplace_back(unif(rng) * old_max, true);
    if (label == 1)
      day_marks.emplace_back(p.horizon_days - unif(rng) * 0.8 * p.window_days, true);
    else
      day_marks.emplace_back(unif(rng) * old_max, true);

    std::sort(day_marks.begin(), day_marks.end());
    EventSequence seq;
    seq.patient_id = "T" + std::to_string(i);
    // Background codes cycle through the non-marker codes in time order, so
    // the next-code pretraining objective carries a recency signal; the
    // planted markers sit outside the cycle.
    std::size_t cycle = seed_mix(seed, i * 2 + 1) % (p.n_codes - 1);
    for (auto& [d, is_marker] : day_marks) {
      std::size_t code;
      if (is_marker) {
        code = p.marker_code;
      } else {
        code = cycle >= p.marker_code ? cycle + 1 : cycle;
        cycle = (cycle + 1) % (p.n_codes - 1);
      }
      seq.events.push_back({pre_from_days(d), code});
    }
    seq.horizon = pre_from_days(p.horizon_days);
    for (std::size_t k = 0; k < p.n_demographics; ++k) seq.demographics.push_back(unif(rng));

    data.instances.push_back({data.sequences.size(), seq.horizon, label});
    data.sequences.push_back(std::move(seq));
  }
  return data;
}

TaskDataset load_task_dataset(const std::string& path, const CodeVocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open task dataset: " + path);
  TaskDataset data;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("task dataset line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.contains("t_cut_days") || !j.contains("label"))
      throw ParseError("task dataset line " + std::to_string(lineno) +
                       ": missing t_cut_days or label");
    EventSequence seq = sequence_from_json(j, vocab, false, lineno);
    double t_cut = pre_from_days(j.at("t_cut_days").get<double>());
    int label = j.at("label").get<int>();
    if (label != 0 && label != 1)
      throw DataError("task dataset line " + std::to_string(lineno) + ": label must be 0 or 1");
    data.instances.push_back({data.sequences.size(), t_cut, label});
    data.sequences.push_back(std::move(seq));
  }
  return data;
}

void save_task_dataset(const TaskDataset& data, const CodeVocabulary& vocab,
                       const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write task dataset: " + path);
  for (const auto& inst : data.instances) {
    json j = sequence_to_json(data.sequences.at(inst.seq_index), vocab);
    j["t_cut_days"] = days_from_pre(inst.t_cut);
    j["label"] = inst.label;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace tale
