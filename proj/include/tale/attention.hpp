#pragma once

#include <cstdint>
#include <map>
#include <unordered_map>
#include <vector>

#include "tale/events.hpp"
#include "tale/nn.hpp"
#include "tale/temporal.hpp"
#include "tale/vocab.hpp"

namespace tale {

// Query/key/value projections from the fixed code embeddings. Each is a
// two-layer map d_emb -> d -> d with GELU between.
struct ProjectionHeads {
  Mlp q, k, v;

  ProjectionHeads() = default;
  ProjectionHeads(std::size_t d_emb, std::size_t d, std::mt19937_64& rng)
      : q("proj_q", {d_emb, d, d}, rng), k("proj_k", {d_emb, d, d}, rng),
        v("proj_v", {d_emb, d, d}, rng) {}
};

struct HistoryEncoding {
  Tensor per_event;                        // (m, d) row per selected event
  Tensor unified;                          // (d,) aggregated history vector
  Tensor weights;                          // (m,) aggregation weights, sums to 1
  std::vector<std::size_t> event_indices;  // original indices of the selected events
};

// Per-forward-pass encoder for one sequence. Caches code projections and
// per-window event encodings across query times, since those depend only on
// the window contents. One instance per tape; not thread-safe.
class SequenceEncoder {
 public:
  SequenceEncoder(Tape& tape, const CodeVocabulary& vocab, ProjectionHeads& heads, Param& q_base,
                  TemporalWeightFn& wfn, std::size_t window, const EventSequence& seq);

  // History = events with t_j <= t (inclusive) or t_j < t (not), truncated to
  // the most recent `window` events. Throws DataError when empty.
  HistoryEncoding encode(double t, bool inclusive = true);

  // Number of events eligible at query time t.
  std::size_t history_size(double t, bool inclusive = true) const;

 private:
  struct Window {
    std::vector<std::size_t> idx;
    bool operator<(const Window& o) const { return idx < o.idx; }
  };

  Window select_window(double t, bool inclusive) const;
  Tensor code_q(std::size_t code);
  Tensor code_k(std::size_t code);
  Tensor code_v(std::size_t code);
  Tensor per_event_matrix(const std::vector<std::size_t>& idx);

  Tape& tape_;
  const CodeVocabulary& vocab_;
  ProjectionHeads& heads_;
  Param& q_base_;
  TemporalWeightFn& wfn_;
  std::size_t window_;
  const EventSequence& seq_;

  struct Qkv {
    Tensor q, k, v;
  };
  std::unordered_map<std::size_t, Qkv> qkv_cache_;
  std::map<std::vector<std::size_t>, Tensor> e_cache_;
};

}  // namespace tale
