#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tale/vocab.hpp"

namespace tale {

// One timestamped coded observation, in absolute days since an arbitrary epoch.
struct RawEvent {
  double t_days = 0.0;
  std::string code;
};

struct Event {
  double t = 0.0;       // preprocessed time: ln(1 + days_since_first/7)
  std::size_t code = 0;  // index into the vocabulary
};

// Immutable after load. Events are sorted non-decreasing in t, the first
// event sits at t = 0, and every t is <= horizon.
struct EventSequence {
  std::string patient_id;
  std::vector<Event> events;
  std::vector<double> demographics;
  double horizon = 0.0;

  std::size_t size() const { return events.size(); }
};

// Time scale conversions between raw day gaps and preprocessed units.
inline double pre_from_days(double days) { return std::log1p(days / 7.0); }
inline double days_from_pre(double pre) { return 7.0 * std::expm1(pre); }

// Relative-time + week normalization + log transform:
// t'_j = ln(1 + (days_j - days_1)/7). Order-preserving; rejects unsorted input.
EventSequence preprocess_times(const std::vector<RawEvent>& raw, const CodeVocabulary& vocab,
                               std::vector<double> demographics = {},
                               const std::string& patient_id = "",
                               std::optional<double> horizon_days = std::nullopt);

// Covariate vector at a reference time: the static demographics plus one
// time-varying entry, elapsed days clamped to [0,1] by max_days.
std::vector<double> covariates_at(const EventSequence& seq, double t, double max_days);

// Replaces every source code found in the map; unmapped codes pass through.
// The map must land on final codes: a target that is itself remapped
// elsewhere (chain or cycle) is rejected.
std::vector<RawEvent> apply_rollup(const std::vector<RawEvent>& raw,
                                   const std::unordered_map<std::string, std::string>& mapping);
std::unordered_map<std::string, std::string> load_rollup_map(const std::string& path);

// ---- synthetic processes ---------------------------------------------------

enum class ProcessKind { const_poisson, piecewise_poisson, self_exciting, deterministic_code };

struct SimulateParams {
  ProcessKind kind = ProcessKind::const_poisson;
  double rate = 1.0;        // const_poisson, deterministic_code, first half of piecewise
  double rate2 = 1.0;       // piecewise second half
  double mu = 0.5;          // Hawkes baseline
  double alpha = 0.5;       // Hawkes jump size
  double beta = 1.0;        // Hawkes decay; stability needs alpha < beta
  std::size_t n_demographics = 2;
  // Prepend an observed event at t=0 so preprocessed sequences start at the
  // patient's initial record. Disable to allow empty simulation output.
  bool anchor_at_zero = true;
};

// Ground truth attached to a simulated sequence; enough to evaluate the true
// intensity and the deterministic next-code rule in tests.
struct SyntheticTruth {
  ProcessKind kind = ProcessKind::const_poisson;
  double rate = 0.0;
  double rate2 = 0.0;
  double breakpoint = 0.0;  // piecewise switch time
  double horizon = 0.0;
  double mu = 0.0, alpha = 0.0, beta = 0.0;
  std::size_t n_codes = 0;
  bool has_code_rule = false;

  // Intensity at time t given prior event times (needed for self-exciting).
  double intensity_at(double t, const std::vector<double>& prior_times = {}) const;
};

// Raw event times of the process on [0, T], no anchor, no codes.
// Exposed separately so distributional tests can hit the sampler directly.
std::vector<double> sample_process(const SimulateParams& p, double T, std::mt19937_64& rng);

// Simulated sequence in preprocessed time units with uniform random codes
// (or the cyclic rule for deterministic_code: anchor code 0, then +1 mod n).
std::pair<EventSequence, SyntheticTruth> simulate(const SimulateParams& p, double T,
                                                  std::size_t n_codes, std::uint64_t seed);

// ---- dataset handling --------------------------------------------------------

struct SplitResult {
  std::vector<EventSequence> train, val, test;
};

// Deterministic shuffled partition; each part must receive at least one
// sequence. fractions must sum to 1.
SplitResult split(const std::vector<EventSequence>& dataset, double f_train, double f_val,
                  double f_test, std::uint64_t seed);

// JSON Lines, one patient per line:
// {"patient_id":..., "demographics":[...], "events":[[t_days,"code"],...],
//  "horizon_days": ...}   (horizon_days optional; defaults to the last event)
std::vector<EventSequence> load_dataset(const std::string& path, const CodeVocabulary& vocab,
                                        bool allow_empty = false);
void save_dataset(const std::vector<EventSequence>& seqs, const CodeVocabulary& vocab,
                  const std::string& path);

// ---- labeled task instances --------------------------------------------------

struct TaskInstance {
  std::size_t seq_index = 0;
  double t_cut = 0.0;  // preprocessed units; history is events with t <= t_cut
  int label = 0;
};

struct TaskDataset {
  std::vector<EventSequence> sequences;
  std::vector<TaskInstance> instances;
};

struct MarkerTaskParams {
  std::size_t n_sequences = 200;
  std::size_t n_codes = 10;
  std::size_t marker_code = 0;
  double window_days = 90.0;   // label 1 iff a marker lies within this window of t_cut
  double horizon_days = 1000.0;
  double background_per_day = 0.02;  // non-marker event rate, uniform in day space
  std::size_t n_demographics = 2;
};

// Balanced binary task whose label depends only on marker recency: every
// sequence gets one old marker, positives get one extra marker inside the
// window, negatives get theirs well outside it. Marker counts match across
// classes so presence/count carries no signal.
TaskDataset make_marker_task(const MarkerTaskParams& p, std::uint64_t seed);

// Task JSONL: dataset record plus "t_cut_days" and "label".
TaskDataset load_task_dataset(const std::string& path, const CodeVocabulary& vocab);
void save_task_dataset(const TaskDataset& data, const CodeVocabulary& vocab,
                       const std::string& path);

}  // namespace tale
