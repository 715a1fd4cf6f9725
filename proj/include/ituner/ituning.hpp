#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ituner/ledger.hpp"
#include "ituner/ops.hpp"
#include "ituner/rng.hpp"
#include "ituner/vision.hpp"

namespace ituner {

// Which decoder sub-block the adapter runs parallel to.
enum class Placement { kAttention, kFeedforward, kWholeLayer };

inline const char* placement_name(Placement p) {
  switch (p) {
    case Placement::kAttention: return "attention";
    case Placement::kFeedforward: return "feedforward";
    case Placement::kWholeLayer: return "whole_layer";
  }
  return "?";
}

inline Placement placement_from_name(const std::string& s) {
  if (s == "attention") return Placement::kAttention;
  if (s == "feedforward") return Placement::kFeedforward;
  if (s == "whole_layer") return Placement::kWholeLayer;
  throw std::invalid_argument("ituning: unknown placement '" + s +
                              "' (attention|feedforward|whole_layer)");
}

enum class AdapterInit { kRandom, kZeroUp };

struct ITuningConfig {
  Placement placement = Placement::kFeedforward;
  std::size_t bottleneck = 64;  // r
  double lambda = 4.0;
  std::size_t drop_first_n = 0;
  bool scaled_attention = false;  // the written form has no 1/sqrt(r); opt-in
  std::size_t n_heads = 1;
  AdapterInit init = AdapterInit::kRandom;
  double init_sigma = 0.02;

  void validate(std::size_t d_model, std::size_t n_layers) const {
    if (bottleneck == 0 || bottleneck > d_model)
      throw std::invalid_argument("ituning: bottleneck must be in [1, d_model]");
    if (drop_first_n > n_layers)
      throw std::invalid_argument("ituning: drop_first_n " + std::to_string(drop_first_n) +
                                  " exceeds n_layers " + std::to_string(n_layers));
    if (n_heads == 0 || bottleneck % n_heads != 0)
      throw std::invalid_argument("ituning: bottleneck must be divisible by n_heads");
    if (lambda < 0.0) throw std::invalid_argument("ituning: lambda must be non-negative");
  }
};

// One bottleneck cross-attention adapter: three down-projections (query from
// the hidden states, key/value from the visual memory), softmax attention
// across the memory, one up-projection. These are the only trainable tensors
// in the system.
template <class Real>
struct ITuningModule {
  Tensor<Real> w_down_q, b_q;  // d_model -> r
  Tensor<Real> w_down_k, b_k;  // d_vision -> r
  Tensor<Real> w_down_v, b_v;  // d_vision -> r
  Tensor<Real> w_up_o, b_o;    // r -> d_model
  Real lambda = Real(4);
  bool scaled_attention = false;
  std::size_t n_heads = 1;
};

template <class Real>
struct ITuningStack {
  ITuningConfig cfg;
  std::vector<std::optional<ITuningModule<Real>>> modules;  // empty slot = dropped layer

  std::size_t n_layers() const { return modules.size(); }
};

using ITuningStackF = ITuningStack<float>;

template <class Real>
ITuningModule<Real> init_ituning_module(const ITuningConfig& cfg, std::size_t d_model,
                                        std::size_t d_vision, Rng& rng) {
  const std::size_t r = cfg.bottleneck;
  const Real sigma = static_cast<Real>(cfg.init_sigma);
  ITuningModule<Real> m;
  m.w_down_q = Tensor<Real>::gaussian({d_model, r}, rng, sigma);
  m.b_q = Tensor<Real>::zeros({r});
  m.w_down_k = Tensor<Real>::gaussian({d_vision, r}, rng, sigma);
  m.b_k = Tensor<Real>::zeros({r});
  m.w_down_v = Tensor<Real>::gaussian({d_vision, r}, rng, sigma);
  m.b_v = Tensor<Real>::zeros({r});
  m.w_up_o = cfg.init == AdapterInit::kZeroUp ? Tensor<Real>::zeros({r, d_model})
                                              : Tensor<Real>::gaussian({r, d_model}, rng, sigma);
  m.b_o = Tensor<Real>::zeros({d_model});
  m.lambda = static_cast<Real>(cfg.lambda);
  m.scaled_attention = cfg.scaled_attention;
  m.n_heads = cfg.n_heads;
  return m;
}

// Build one adapter per non-dropped decoder layer. Dropped layers carry no
// parameters at all.
template <class Real>
ITuningStack<Real> make_ituning_stack(const ITuningConfig& cfg, std::size_t n_layers,
                                      std::size_t d_model, std::size_t d_vision,
                                      std::uint64_t seed) {
  cfg.validate(d_model, n_layers);
  Rng rng(seed);
  ITuningStack<Real> stack;
  stack.cfg = cfg;
  stack.modules.resize(n_layers);
  for (std::size_t i = 0; i < n_layers; ++i)
    if (i >= cfg.drop_first_n)
      stack.modules[i] = init_ituning_module<Real>(cfg, d_model, d_vision, rng);
  return stack;
}

template <class Real>
std::vector<NamedParam<Real>> ituning_params(const ITuningStack<Real>& stack) {
  std::vector<NamedParam<Real>> out;
  for (std::size_t i = 0; i < stack.modules.size(); ++i) {
    if (!stack.modules[i]) continue;
    const auto& m = *stack.modules[i];
    const std::string p = "ituning.layer." + std::to_string(i) + ".";
    out.push_back({p + "w_down_q", m.w_down_q});
    out.push_back({p + "b_q", m.b_q});
    out.push_back({p + "w_down_k", m.w_down_k});
    out.push_back({p + "b_k", m.b_k});
    out.push_back({p + "w_down_v", m.w_down_v});
    out.push_back({p + "b_v", m.b_v});
    out.push_back({p + "w_up_o", m.w_up_o});
    out.push_back({p + "b_o", m.b_o});
  }
  return out;
}

template <class Real>
std::size_t trainable_param_count(const ITuningStack<Real>& stack) {
  std::size_t n = 0;
  for (const auto& m : stack.modules) {
    if (!m) continue;
    n += m->w_down_q.numel() + m->b_q.numel() + m->w_down_k.numel() + m->b_k.numel() +
         m->w_down_v.numel() + m->b_v.numel() + m->w_up_o.numel() + m->b_o.numel();
  }
  return n;
}

// Adapter forward:
//
//   Q = X Wq + bq          (query from the sub-block input)
//   K = Vm Wk + bk, V = Vm Wv + bv
//   S = softmax(Q K^T)     (optionally / sqrt(r_head) when scaled_attention)
//   dh = lambda * (S V) Wup + bo   -- output bias outside the lambda factor
//
// Each output row depends only on its own input row and the memory; tokens do
// not mix. With `scores_out` set, the memory attention S (head-averaged) is
// captured for visualization.
template <class Real>
Tensor<Real> ituning_forward(const Tensor<Real>& x, const VisualMemory<Real>& memory,
                             const ITuningModule<Real>& m, Tape<Real>* tape = nullptr,
                             Tensor<Real>* scores_out = nullptr) {
  if (memory.embeddings.numel() == 0 || memory.embeddings.rows() == 0)
    throw std::invalid_argument("ituning: empty visual memory");
  const std::size_t r = m.w_down_q.cols();
  const std::size_t heads = m.n_heads;
  const std::size_t rh = r / heads;

  Tensor<Real> q = add_bias_row(matmul(x, m.w_down_q, tape), m.b_q, tape);
  Tensor<Real> k = add_bias_row(matmul(memory.embeddings, m.w_down_k, tape), m.b_k, tape);
  Tensor<Real> v = add_bias_row(matmul(memory.embeddings, m.w_down_v, tape), m.b_v, tape);

  std::vector<Tensor<Real>> ctx_heads;
  Tensor<Real> score_accum;
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor<Real> qh = heads == 1 ? q : slice_cols(q, h * rh, (h + 1) * rh, tape);
    Tensor<Real> kh = heads == 1 ? k : slice_cols(k, h * rh, (h + 1) * rh, tape);
    Tensor<Real> vh = heads == 1 ? v : slice_cols(v, h * rh, (h + 1) * rh, tape);
    Tensor<Real> scores = matmul(qh, transpose(kh, tape), tape);
    if (m.scaled_attention)
      scores = scale(scores, Real(1) / std::sqrt(static_cast<Real>(rh)), tape);
    Tensor<Real> s = softmax_rows(scores, tape);
    if (scores_out != nullptr) {
      if (h == 0) {
        score_accum = s.clone();
      } else {
        for (std::size_t i = 0; i < score_accum.numel(); ++i)
          score_accum.data()[i] += s.data()[i];
      }
    }
    ctx_heads.push_back(matmul(s, vh, tape));
  }
  if (scores_out != nullptr) {
    for (Real& val : score_accum.data()) val /= static_cast<Real>(heads);
    *scores_out = score_accum;
  }

  Tensor<Real> ctx = heads == 1 ? ctx_heads.front() : concat_cols(ctx_heads, tape);
  Tensor<Real> up = scale(matmul(ctx, m.w_up_o, tape), m.lambda, tape);
  return add_bias_row(up, m.b_o, tape);
}

// The memory-attention matrix S, for inspection; rows sum to 1.
template <class Real>
Tensor<Real> attention_map(const Tensor<Real>& x, const VisualMemory<Real>& memory,
                           const ITuningModule<Real>& m) {
  Tensor<Real> s;
  ituning_forward(x, memory, m, static_cast<Tape<Real>*>(nullptr), &s);
  return s;
}

}  // namespace ituner
