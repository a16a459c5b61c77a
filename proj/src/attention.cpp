#include "tale/attention.hpp"

#include <algorithm>
#include <cmath>

namespace tale {

SequenceEncoder::SequenceEncoder(Tape& tape, const CodeVocabulary& vocab, ProjectionHeads& heads,
                                 Param& q_base, TemporalWeightFn& wfn, std::size_t window,
                                 const EventSequence& seq)
    : tape_(tape), vocab_(vocab), heads_(heads), q_base_(q_base), wfn_(wfn), window_(window),
      seq_(seq) {
  if (window_ == 0) throw ConfigError("attention window must be >= 1");
}

SequenceEncoder::Window SequenceEncoder::select_window(double t, bool inclusive) const {
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < seq_.events.size(); ++j) {
    double tj = seq_.events[j].t;
    if (inclusive ? tj <= t : tj < t) idx.push_back(j);
  }
  // Keep the most recent `window_` events. Storage order is already
  // non-decreasing for well-formed sequences; a stable sort makes the
  // selection well defined for arbitrary orderings too.
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return seq_.events[a].t < seq_.events[b].t; });
  if (idx.size() > window_) idx.erase(idx.begin(), idx.end() - static_cast<long>(window_));
  return Window{std::move(idx)};
}

std::size_t SequenceEncoder::history_size(double t, bool inclusive) const {
  return select_window(t, inclusive).idx.size();
}

Tensor SequenceEncoder::code_q(std::size_t code) { return qkv_cache_.at(code).q; }
Tensor SequenceEncoder::code_k(std::size_t code) { return qkv_cache_.at(code).k; }
Tensor SequenceEncoder::code_v(std::size_t code) { return qkv_cache_.at(code).v; }

Tensor SequenceEncoder::per_event_matrix(const std::vector<std::size_t>& idx) {
  auto cached = e_cache_.find(idx);
  if (cached != e_cache_.end()) return cached->second;

  std::size_t m = idx.size();
  for (std::size_t j : idx) {
    std::size_t code = seq_.events[j].code;
    if (qkv_cache_.find(code) == qkv_cache_.end()) {
      auto emb = vocab_.embedding(code);
      Tensor e = tape_.constant({vocab_.d_emb}, std::vector<double>(emb.begin(), emb.end()));
      qkv_cache_.emplace(code, Qkv{heads_.q.apply(tape_, e), heads_.k.apply(tape_, e),
                                   heads_.v.apply(tape_, e)});
    }
  }

  std::vector<Tensor> q_rows, k_rows, v_rows;
  q_rows.reserve(m);
  for (std::size_t j : idx) {
    std::size_t code = seq_.events[j].code;
    q_rows.push_back(code_q(code));
    k_rows.push_back(code_k(code));
    v_rows.push_back(code_v(code));
  }
  Tensor Q = stack_rows(q_rows);
  Tensor K = stack_rows(k_rows);
  Tensor V = stack_rows(v_rows);
  std::size_t d = Q.shape()[1];

  Tensor logits = scale(matmul(Q, transpose(K)), 1.0 / std::sqrt(static_cast<double>(d)));
  if (wfn_.variant() != WeightVariant::constant) {
    // One weight evaluation per distinct pairwise gap, scattered back into
    // the (m, m) multiplier matrix.
    std::vector<double> gaps;
    gaps.reserve(m * m);
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = 0; b < m; ++b)
        gaps.push_back(std::abs(seq_.events[idx[a]].t - seq_.events[idx[b]].t));
    std::vector<double> uniq = gaps;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    std::vector<std::size_t> which(gaps.size());
    for (std::size_t i = 0; i < gaps.size(); ++i)
      which[i] = static_cast<std::size_t>(
          std::lower_bound(uniq.begin(), uniq.end(), gaps[i]) - uniq.begin());
    Tensor w_uniq = wfn_.evaluate_many(tape_, uniq);
    Tensor w_mat = reshape(gather(w_uniq, std::move(which)), {m, m});
    logits = mul(logits, w_mat);
  }
  Tensor E = matmul(softmax(logits), V);
  e_cache_.emplace(idx, E);
  return E;
}

HistoryEncoding SequenceEncoder::encode(double t, bool inclusive) {
  Window win = select_window(t, inclusive);
  if (win.idx.empty())
    throw DataError("encode: no history at query time " + std::to_string(t));
  std::size_t m = win.idx.size();

  Tensor E = per_event_matrix(win.idx);
  Tensor scores = matmul(E, tape_.leaf(q_base_));  // (m,)

  Tensor alpha_logits = scores;
  if (wfn_.variant() != WeightVariant::constant) {
    std::vector<double> gaps(m);
    for (std::size_t a = 0; a < m; ++a) gaps[a] = std::abs(t - seq_.events[win.idx[a]].t);
    std::vector<double> uniq = gaps;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    std::vector<std::size_t> which(m);
    for (std::size_t a = 0; a < m; ++a)
      which[a] = static_cast<std::size_t>(
          std::lower_bound(uniq.begin(), uniq.end(), gaps[a]) - uniq.begin());
    Tensor w = gather(wfn_.evaluate_many(tape_, uniq), std::move(which));
    alpha_logits = mul(scores, w);
  }
  Tensor alpha = softmax(alpha_logits);
  Tensor h = matmul(alpha, E);  // (d,)

  HistoryEncoding out;
  out.per_event = E;
  out.unified = h;
  out.weights = alpha;
  out.event_indices = std::move(win.idx);
  return out;
}

}  // namespace tale
