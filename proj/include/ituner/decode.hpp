#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

#include "ituner/decoder.hpp"

namespace ituner {

struct BeamResult {
  std::vector<int> tokens;  // generated tokens, EOS excluded
  double log_prob = 0.0;
  bool truncated = false;  // no hypothesis finished within max_len
};

namespace detail {

struct BeamHyp {
  std::vector<int> prefix;  // includes BOS
  double log_prob = 0.0;
};

// Score-descending, then lexicographic by tokens: ties resolve to the
// smaller token ids, which keeps decoding deterministic.
inline bool beam_better(const BeamHyp& a, const BeamHyp& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  return a.prefix < b.prefix;
}

}  // namespace detail

// Length-terminated beam search over cumulative log-probabilities (no length
// normalization). `next_log_probs(prefix)` returns the log-distribution of
// the next token given a prefix that starts with BOS. Finished hypotheses are
// set aside; the search stops once no live beam can beat the best finished
// one (extensions only lower the score) or max_len is hit. If nothing
// finished, the best live beam comes back flagged truncated.
template <class Scorer>
BeamResult beam_search(Scorer&& next_log_probs, int bos_id, int eos_id, std::size_t beam_size,
                       std::size_t max_len) {
  if (beam_size == 0) throw std::invalid_argument("beam_search: beam_size must be >= 1");
  if (max_len == 0) throw std::invalid_argument("beam_search: max_len must be >= 1");

  std::vector<detail::BeamHyp> live{{{bos_id}, 0.0}};
  std::vector<detail::BeamHyp> finished;

  for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<detail::BeamHyp> candidates;
    for (const auto& hyp : live) {
      const std::vector<double> logp = next_log_probs(hyp.prefix);
      for (std::size_t tok = 0; tok < logp.size(); ++tok) {
        if (!std::isfinite(logp[tok])) continue;  // zero-probability continuation
        detail::BeamHyp next{hyp.prefix, hyp.log_prob + logp[tok]};
        next.prefix.push_back(static_cast<int>(tok));
        candidates.push_back(std::move(next));
      }
    }
    std::sort(candidates.begin(), candidates.end(), detail::beam_better);

    // Walk the ranking until beam_size live hypotheses are collected;
    // EOS-ended candidates ranked above that cut are finalized, everything
    // below it is pruned. At beam 1 this is exactly greedy decoding.
    live.clear();
    for (auto& c : candidates) {
      if (live.size() >= beam_size) break;
      if (c.prefix.back() == eos_id) {
        finished.push_back(std::move(c));
      } else {
        live.push_back(std::move(c));
      }
    }
    if (!finished.empty()) {
      std::sort(finished.begin(), finished.end(), detail::beam_better);
      finished.resize(std::min(finished.size(), beam_size));
      if (live.empty() || !detail::beam_better(live.front(), finished.front())) break;
    }
  }

  if (finished.empty() && live.empty())
    throw std::invalid_argument("beam_search: scorer offered no finite continuation");
  const bool truncated = finished.empty();
  const detail::BeamHyp& best = truncated ? live.front() : finished.front();
  BeamResult out;
  out.log_prob = best.log_prob;
  out.truncated = truncated;
  for (std::size_t i = 1; i < best.prefix.size(); ++i) {
    if (best.prefix[i] == eos_id) break;
    out.tokens.push_back(best.prefix[i]);
  }
  return out;
}

// Next-token log-probabilities from the adapted decoder, computed in double
// from the float logits.
template <class Real>
std::function<std::vector<double>(const std::vector<int>&)> make_decoder_scorer(
    const DecoderState<Real>& decoder, const ITuningStack<Real>* adapters,
    const VisualMemory<Real>* memory) {
  return [&decoder, adapters, memory](const std::vector<int>& prefix) {
    Tensor<Real> logits = decoder_forward(decoder, prefix, memory, adapters);
    const std::size_t v = logits.cols();
    const Real* row = logits.data().data() + (logits.rows() - 1) * v;
    double mx = static_cast<double>(row[0]);
    for (std::size_t c = 1; c < v; ++c) mx = std::max(mx, static_cast<double>(row[c]));
    double sum = 0.0;
    for (std::size_t c = 0; c < v; ++c) sum += std::exp(static_cast<double>(row[c]) - mx);
    const double lse = mx + std::log(sum);
    std::vector<double> out(v);
    for (std::size_t c = 0; c < v; ++c) out[c] = static_cast<double>(row[c]) - lse;
    return out;
  };
}

// Argmax over all EOS-terminated sequences of generated length <= max_len;
// the small-instance oracle beam search is checked against.
template <class Scorer>
BeamResult exhaustive_best_caption(Scorer&& next_log_probs, int bos_id, int eos_id,
                                   std::size_t vocab_size, std::size_t max_len) {
  detail::BeamHyp best;
  bool found = false;

  std::vector<int> prefix{bos_id};
  std::function<void(double)> walk = [&](double logp) {
    const std::vector<double> dist = next_log_probs(prefix);
    // Ending here with EOS yields a finished sequence.
    if (std::isfinite(dist[static_cast<std::size_t>(eos_id)])) {
      detail::BeamHyp cand{prefix, logp + dist[static_cast<std::size_t>(eos_id)]};
      cand.prefix.push_back(eos_id);
      if (!found || detail::beam_better(cand, best)) {
        best = std::move(cand);
        found = true;
      }
    }
    if (prefix.size() >= max_len) return;  // EOS above was the last allowed slot
    for (std::size_t tok = 0; tok < vocab_size; ++tok) {
      if (static_cast<int>(tok) == eos_id || !std::isfinite(dist[tok])) continue;
      prefix.push_back(static_cast<int>(tok));
      walk(logp + dist[tok]);
      prefix.pop_back();
    }
  };
  walk(0.0);
  if (!found)
    throw std::invalid_argument("exhaustive search: no finite EOS-terminated sequence");

  BeamResult out;
  out.log_prob = best.log_prob;
  for (std::size_t i = 1; i + 1 < best.prefix.size(); ++i) out.tokens.push_back(best.prefix[i]);
  return out;
}

}  // namespace ituner
