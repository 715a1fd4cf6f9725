#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ituner/ituning.hpp"
#include "ituner/ledger.hpp"
#include "ituner/ops.hpp"
#include "ituner/rng.hpp"
#include "ituner/vision.hpp"

namespace ituner {

struct DecoderConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t d_ffn = 0;  // 0 -> 4 * d_model
  std::size_t vocab_size = 14;
  std::size_t max_positions = 32;
  double layer_norm_eps = 1e-5;

  std::size_t ffn_width() const { return d_ffn == 0 ? 4 * d_model : d_ffn; }

  void validate() const {
    if (n_layers == 0 || d_model == 0 || n_heads == 0 || vocab_size == 0 || max_positions == 0)
      throw std::invalid_argument("decoder: config fields must be positive");
    if (d_model % n_heads != 0)
      throw std::invalid_argument("decoder: d_model " + std::to_string(d_model) +
                                  " not divisible by n_heads " + std::to_string(n_heads));
  }
};

// Toy analogues of the four frozen decoder sizes used by the scaling study.
inline DecoderConfig decoder_preset(const std::string& name) {
  DecoderConfig cfg;
  if (name == "distill") {
    cfg.n_layers = 4;
    cfg.d_model = 128;
  } else if (name == "base") {
    cfg.n_layers = 6;
    cfg.d_model = 192;
  } else if (name == "medium") {
    cfg.n_layers = 8;
    cfg.d_model = 256;
  } else if (name == "large") {
    cfg.n_layers = 12;
    cfg.d_model = 320;
  } else {
    throw std::invalid_argument("decoder: unknown preset '" + name +
                                "' (distill|base|medium|large)");
  }
  cfg.n_heads = cfg.d_model / 32;
  return cfg;
}

// Pre-norm causal transformer with learned absolute positions and the output
// projection tied to the token embedding. Weights are "pseudo-pretrained":
// seeded random, standing in for a real checkpoint, and frozen throughout.
template <class Real>
struct DecoderState {
  struct Layer {
    Tensor<Real> ln1_gain, ln1_bias;
    Tensor<Real> w_qkv, b_qkv, w_o, b_o;
    Tensor<Real> ln2_gain, ln2_bias;
    Tensor<Real> w_fc, b_fc, w_proj, b_proj;
  };

  DecoderConfig cfg;
  Tensor<Real> tok_emb;  // vocab x d, also the (transposed) output projection
  Tensor<Real> pos_emb;  // max_positions x d
  std::vector<Layer> layers;
  Tensor<Real> ln_f_gain, ln_f_bias;
};

using DecoderStateF = DecoderState<float>;

template <class Real>
DecoderState<Real> init_decoder(const DecoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t d = cfg.d_model, f = cfg.ffn_width();
  const Real sigma = Real(0.02);
  const Real resid_sigma = static_cast<Real>(0.02 / std::sqrt(2.0 * cfg.n_layers));
  DecoderState<Real> s;
  s.cfg = cfg;
  // Pseudo-pretrained embeddings carry realistic norms: trained GPT-2 token
  // embeddings sit near unit scale, and the tied output projection needs that
  // dynamic range for the logits to be able to saturate.
  s.tok_emb = Tensor<Real>::gaussian({cfg.vocab_size, d}, rng, Real(0.1));
  s.pos_emb = Tensor<Real>::gaussian({cfg.max_positions, d}, rng, Real(0.1));
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    typename DecoderState<Real>::Layer l;
    l.ln1_gain = Tensor<Real>::full({d}, Real(1));
    l.ln1_bias = Tensor<Real>::zeros({d});
    l.w_qkv = Tensor<Real>::gaussian({d, 3 * d}, rng, sigma);
    l.b_qkv = Tensor<Real>::zeros({3 * d});
    l.w_o = Tensor<Real>::gaussian({d, d}, rng, resid_sigma);
    l.b_o = Tensor<Real>::zeros({d});
    l.ln2_gain = Tensor<Real>::full({d}, Real(1));
    l.ln2_bias = Tensor<Real>::zeros({d});
    l.w_fc = Tensor<Real>::gaussian({d, f}, rng, sigma);
    l.b_fc = Tensor<Real>::zeros({f});
    l.w_proj = Tensor<Real>::gaussian({f, d}, rng, resid_sigma);
    l.b_proj = Tensor<Real>::zeros({d});
    s.layers.push_back(std::move(l));
  }
  s.ln_f_gain = Tensor<Real>::full({d}, Real(1));
  s.ln_f_bias = Tensor<Real>::zeros({d});
  return s;
}

template <class Real>
std::vector<NamedParam<Real>> decoder_params(const DecoderState<Real>& s) {
  std::vector<NamedParam<Real>> out;
  out.push_back({"decoder.tok_emb", s.tok_emb});
  out.push_back({"decoder.pos_emb", s.pos_emb});
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    const auto& l = s.layers[i];
    const std::string p = "decoder.layer." + std::to_string(i) + ".";
    out.push_back({p + "ln1.gain", l.ln1_gain});
    out.push_back({p + "ln1.bias", l.ln1_bias});
    out.push_back({p + "attn.w_qkv", l.w_qkv});
    out.push_back({p + "attn.b_qkv", l.b_qkv});
    out.push_back({p + "attn.w_o", l.w_o});
    out.push_back({p + "attn.b_o", l.b_o});
    out.push_back({p + "ln2.gain", l.ln2_gain});
    out.push_back({p + "ln2.bias", l.ln2_bias});
    out.push_back({p + "ffn.w_fc", l.w_fc});
    out.push_back({p + "ffn.b_fc", l.b_fc});
    out.push_back({p + "ffn.w_proj", l.w_proj});
    out.push_back({p + "ffn.b_proj", l.b_proj});
  }
  out.push_back({"decoder.ln_f.gain", s.ln_f_gain});
  out.push_back({"decoder.ln_f.bias", s.ln_f_bias});
  return out;
}

// Mark every decoder parameter frozen in the ledger; the optimizer never
// touches the frozen set.
template <class Real>
void freeze_all(const DecoderState<Real>& s, ParamLedger<Real>& ledger) {
  ledger.add_frozen(decoder_params(s));
}

template <class Real>
void freeze_all(const VisionState<Real>& s, ParamLedger<Real>& ledger) {
  ledger.add_frozen(vision_params(s));
}

template <class Real>
void save_weights(const std::string& path, const DecoderState<Real>& s) {
  std::vector<std::pair<std::string, Tensor<Real>>> named;
  for (auto& p : decoder_params(s)) named.emplace_back(p.name, p.tensor);
  write_archive(path, std::move(named));
}

template <class Real>
DecoderState<Real> load_weights(const std::string& path, const DecoderConfig& cfg) {
  DecoderState<Real> s = init_decoder<Real>(cfg, 0);
  load_params_from_archive(path, decoder_params(s));
  return s;
}

namespace detail {

template <class Real>
Tensor<Real> causal_self_attention(const Tensor<Real>& x_ln,
                                   const typename DecoderState<Real>::Layer& l,
                                   std::size_t n_heads, Tape<Real>* tape) {
  const std::size_t d = x_ln.cols();
  const std::size_t dh = d / n_heads;
  Tensor<Real> qkv = add_bias_row(matmul(x_ln, l.w_qkv, tape), l.b_qkv, tape);
  Tensor<Real> q = slice_cols(qkv, 0, d, tape);
  Tensor<Real> k = slice_cols(qkv, d, 2 * d, tape);
  Tensor<Real> v = slice_cols(qkv, 2 * d, 3 * d, tape);
  std::vector<Tensor<Real>> heads;
  const Real inv_sqrt = Real(1) / std::sqrt(static_cast<Real>(dh));
  for (std::size_t h = 0; h < n_heads; ++h) {
    Tensor<Real> qh = slice_cols(q, h * dh, (h + 1) * dh, tape);
    Tensor<Real> kh = slice_cols(k, h * dh, (h + 1) * dh, tape);
    Tensor<Real> vh = slice_cols(v, h * dh, (h + 1) * dh, tape);
    Tensor<Real> scores = scale(matmul(qh, transpose(kh, tape), tape), inv_sqrt, tape);
    Tensor<Real> probs = causal_softmax_rows(scores, tape);
    heads.push_back(matmul(probs, vh, tape));
  }
  Tensor<Real> ctx = concat_cols(heads, tape);
  return add_bias_row(matmul(ctx, l.w_o, tape), l.b_o, tape);
}

}  // namespace detail

// Next-token logits for a token sequence. With an adapter stack attached the
// per-layer correction is added parallel to the configured sub-block; without
// one this is a pure language-model forward. Per-layer memory attention maps
// land in `attn_trace` when provided (empty tensors for dropped layers).
template <class Real>
Tensor<Real> decoder_forward(const DecoderState<Real>& state, const std::vector<int>& tokens,
                             const VisualMemory<Real>* memory = nullptr,
                             const ITuningStack<Real>* adapters = nullptr,
                             Tape<Real>* tape = nullptr,
                             std::vector<Tensor<Real>>* attn_trace = nullptr) {
  const DecoderConfig& cfg = state.cfg;
  if (tokens.empty()) throw std::invalid_argument("decoder: empty token sequence");
  if (tokens.size() > cfg.max_positions)
    throw std::invalid_argument("decoder: sequence of " + std::to_string(tokens.size()) +
                                " tokens exceeds max_positions " +
                                std::to_string(cfg.max_positions));
  for (int t : tokens)
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size)
      throw std::out_of_range("decoder: token id " + std::to_string(t) + " outside vocab of " +
                              std::to_string(cfg.vocab_size));
  if (adapters != nullptr) {
    if (memory == nullptr)
      throw std::invalid_argument("decoder: adapter stack attached but no visual memory given");
    if (adapters->n_layers() != cfg.n_layers)
      throw std::invalid_argument("decoder: adapter stack depth " +
                                  std::to_string(adapters->n_layers()) + " != decoder depth " +
                                  std::to_string(cfg.n_layers));
  }
  if (attn_trace != nullptr) {
    attn_trace->clear();
    attn_trace->resize(cfg.n_layers);
  }

  const Real eps = static_cast<Real>(cfg.layer_norm_eps);
  const std::size_t t_len = tokens.size();
  Tensor<Real> x = add(embedding_rows(state.tok_emb, tokens, tape),
                       slice_rows(state.pos_emb, 0, t_len, tape), tape);

  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    const auto& l = state.layers[i];
    const ITuningModule<Real>* adapter =
        (adapters != nullptr && adapters->modules[i]) ? &*adapters->modules[i] : nullptr;
    const Placement placement = adapters != nullptr ? adapters->cfg.placement : Placement::kFeedforward;
    Tensor<Real>* trace_slot = attn_trace != nullptr ? &(*attn_trace)[i] : nullptr;

    const Tensor<Real> layer_in = x;

    Tensor<Real> a_in = layer_norm(x, l.ln1_gain, l.ln1_bias, eps, tape);
    Tensor<Real> attn_out = detail::causal_self_attention<Real>(a_in, l, cfg.n_heads, tape);
    if (adapter != nullptr && placement == Placement::kAttention)
      attn_out = add(attn_out, ituning_forward(a_in, *memory, *adapter, tape, trace_slot), tape);
    x = add(x, attn_out, tape);

    Tensor<Real> f_in = layer_norm(x, l.ln2_gain, l.ln2_bias, eps, tape);
    Tensor<Real> h = add_bias_row(matmul(f_in, l.w_fc, tape), l.b_fc, tape);
    Tensor<Real> ffn_out =
        add_bias_row(matmul(gelu(h, tape), l.w_proj, tape), l.b_proj, tape);
    if (adapter != nullptr && placement == Placement::kFeedforward)
      ffn_out = add(ffn_out, ituning_forward(f_in, *memory, *adapter, tape, trace_slot), tape);
    x = add(x, ffn_out, tape);

    if (adapter != nullptr && placement == Placement::kWholeLayer)
      x = add(x, ituning_forward(layer_in, *memory, *adapter, tape, trace_slot), tape);
  }

  x = layer_norm(x, state.ln_f_gain, state.ln_f_bias, eps, tape);
  return matmul(x, transpose(state.tok_emb, tape), tape);
}

}  // namespace ituner
