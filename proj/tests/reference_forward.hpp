#pragma once

// Straight-line reference forward passes used to generate and check golden
// files. Deliberately independent of the library's op/tape machinery: plain
// nested loops over std::vector<double>, no Eigen, no autodiff. Weights are
// read from named float tensors (the TAR1 archive contents).

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ituner/tensor.hpp"

namespace refimpl {

struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& at(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

using Weights = std::map<std::string, ituner::Tensor<float>>;

inline Mat from_tensor(const Weights& w, const std::string& name) {
  auto it = w.find(name);
  if (it == w.end()) throw std::runtime_error("reference: missing weight " + name);
  const auto& t = it->second;
  Mat m(t.rank() == 1 ? 1 : t.rows(), t.rank() == 1 ? t.numel() : t.cols());
  for (std::size_t i = 0; i < t.numel(); ++i) m.v[i] = static_cast<double>(t.data()[i]);
  return m;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += a.at(i, k) * b.at(k, j);
      out.at(i, j) = acc;
    }
  return out;
}

inline Mat add_bias(Mat x, const Mat& bias) {
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) x.at(i, j) += bias.v[j];
  return x;
}

inline Mat layer_norm(const Mat& x, const Mat& gain, const Mat& bias, double eps) {
  Mat out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) mean += x.at(i, j);
    mean /= static_cast<double>(x.cols);
    double var = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j)
      var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
    var /= static_cast<double>(x.cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < x.cols; ++j)
      out.at(i, j) = (x.at(i, j) - mean) * inv * gain.v[j] + bias.v[j];
  }
  return out;
}

inline double gelu_scalar(double x) {
  const double u = 0.7978845608028654 * (x + 0.044715 * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

inline void softmax_inplace(double* row, std::size_t lo, std::size_t hi) {
  double mx = row[lo];
  for (std::size_t j = lo + 1; j < hi; ++j) mx = std::max(mx, row[j]);
  double sum = 0.0;
  for (std::size_t j = lo; j < hi; ++j) {
    row[j] = std::exp(row[j] - mx);
    sum += row[j];
  }
  for (std::size_t j = lo; j < hi; ++j) row[j] /= sum;
}

// Multi-head self-attention over pre-normed input; causal when `causal`.
inline Mat self_attention(const Mat& x_ln, const Mat& w_qkv, const Mat& b_qkv, const Mat& w_o,
                          const Mat& b_o, std::size_t n_heads, bool causal) {
  const std::size_t t_len = x_ln.rows, d = x_ln.cols, dh = d / n_heads;
  Mat qkv = add_bias(matmul(x_ln, w_qkv), b_qkv);
  Mat ctx(t_len, d);
  for (std::size_t h = 0; h < n_heads; ++h) {
    for (std::size_t i = 0; i < t_len; ++i) {
      std::vector<double> scores(t_len, 0.0);
      const std::size_t hi = causal ? i + 1 : t_len;
      for (std::size_t j = 0; j < hi; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < dh; ++k)
          acc += qkv.at(i, h * dh + k) * qkv.at(j, d + h * dh + k);
        scores[j] = acc / std::sqrt(static_cast<double>(dh));
      }
      softmax_inplace(scores.data(), 0, hi);
      for (std::size_t k = 0; k < dh; ++k) {
        double acc = 0.0;
        for (std::size_t j = 0; j < hi; ++j) acc += scores[j] * qkv.at(j, 2 * d + h * dh + k);
        ctx.at(i, h * dh + k) = acc;
      }
    }
  }
  return add_bias(matmul(ctx, w_o), b_o);
}

// Adapter correction: Q = X Wq + bq; K, V from the memory;
// S = softmax(Q K^T); dh = lambda * (S V) Wup + bo. Single head, unscaled
// scores.
inline Mat adapter_delta(const Mat& x, const Mat& memory, const Weights& w,
                         const std::string& prefix, double lambda) {
  Mat q = add_bias(matmul(x, from_tensor(w, prefix + "w_down_q")), from_tensor(w, prefix + "b_q"));
  Mat k = add_bias(matmul(memory, from_tensor(w, prefix + "w_down_k")),
                   from_tensor(w, prefix + "b_k"));
  Mat v = add_bias(matmul(memory, from_tensor(w, prefix + "w_down_v")),
                   from_tensor(w, prefix + "b_v"));
  const std::size_t t_len = x.rows, m_len = memory.rows, r = q.cols;
  Mat attended(t_len, r);
  for (std::size_t i = 0; i < t_len; ++i) {
    std::vector<double> scores(m_len, 0.0);
    for (std::size_t j = 0; j < m_len; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < r; ++c) acc += q.at(i, c) * k.at(j, c);
      scores[j] = acc;
    }
    softmax_inplace(scores.data(), 0, m_len);
    for (std::size_t c = 0; c < r; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < m_len; ++j) acc += scores[j] * v.at(j, c);
      attended.at(i, c) = acc;
    }
  }
  Mat up = matmul(attended, from_tensor(w, prefix + "w_up_o"));
  const Mat bo = from_tensor(w, prefix + "b_o");
  for (std::size_t i = 0; i < up.rows; ++i)
    for (std::size_t j = 0; j < up.cols; ++j) up.at(i, j) = lambda * up.at(i, j) + bo.v[j];
  return up;
}

enum class AdapterPlacement { kNone, kAttention, kFeedforward, kWholeLayer };

// GPT-2-style pre-norm decoder forward with tied output projection. Adapter
// weights (when attached) live in the same map under "ituning.layer.{i}.".
inline Mat decoder_forward(const Weights& w, std::size_t n_layers, std::size_t n_heads,
                           double eps, const std::vector<int>& tokens,
                           const Mat* memory = nullptr,
                           AdapterPlacement placement = AdapterPlacement::kNone,
                           double lambda = 4.0) {
  const Mat tok_emb = from_tensor(w, "decoder.tok_emb");
  const Mat pos_emb = from_tensor(w, "decoder.pos_emb");
  const std::size_t t_len = tokens.size(), d = tok_emb.cols;

  Mat x(t_len, d);
  for (std::size_t i = 0; i < t_len; ++i)
    for (std::size_t j = 0; j < d; ++j)
      x.at(i, j) = tok_emb.at(static_cast<std::size_t>(tokens[i]), j) + pos_emb.at(i, j);

  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::string p = "decoder.layer." + std::to_string(l) + ".";
    const std::string ap = "ituning.layer." + std::to_string(l) + ".";
    const Mat layer_in = x;

    Mat a_in = layer_norm(x, from_tensor(w, p + "ln1.gain"), from_tensor(w, p + "ln1.bias"), eps);
    Mat attn = self_attention(a_in, from_tensor(w, p + "attn.w_qkv"),
                              from_tensor(w, p + "attn.b_qkv"), from_tensor(w, p + "attn.w_o"),
                              from_tensor(w, p + "attn.b_o"), n_heads, true);
    if (placement == AdapterPlacement::kAttention) {
      Mat delta = adapter_delta(a_in, *memory, w, ap, lambda);
      for (std::size_t i = 0; i < attn.v.size(); ++i) attn.v[i] += delta.v[i];
    }
    for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] += attn.v[i];

    Mat f_in = layer_norm(x, from_tensor(w, p + "ln2.gain"), from_tensor(w, p + "ln2.bias"), eps);
    Mat h = add_bias(matmul(f_in, from_tensor(w, p + "ffn.w_fc")), from_tensor(w, p + "ffn.b_fc"));
    for (double& val : h.v) val = gelu_scalar(val);
    Mat ffn = add_bias(matmul(h, from_tensor(w, p + "ffn.w_proj")),
                       from_tensor(w, p + "ffn.b_proj"));
    if (placement == AdapterPlacement::kFeedforward) {
      Mat delta = adapter_delta(f_in, *memory, w, ap, lambda);
      for (std::size_t i = 0; i < ffn.v.size(); ++i) ffn.v[i] += delta.v[i];
    }
    for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] += ffn.v[i];

    if (placement == AdapterPlacement::kWholeLayer) {
      Mat delta = adapter_delta(layer_in, *memory, w, ap, lambda);
      for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] += delta.v[i];
    }
  }

  x = layer_norm(x, from_tensor(w, "decoder.ln_f.gain"), from_tensor(w, "decoder.ln_f.bias"), eps);

  Mat logits(t_len, tok_emb.rows);
  for (std::size_t i = 0; i < t_len; ++i)
    for (std::size_t vtok = 0; vtok < tok_emb.rows; ++vtok) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += x.at(i, j) * tok_emb.at(vtok, j);
      logits.at(i, vtok) = acc;
    }
  return logits;
}

// Patch-embedding encoder forward: patchify (channel, y, x order), linear
// embed, add position embeddings, pre-norm blocks, final layer norm.
inline Mat vision_forward(const Weights& w, std::size_t image_size, std::size_t patch_size,
                          std::size_t n_layers, std::size_t n_heads, double eps,
                          const std::vector<double>& pixels /* 3 x S x S */) {
  const std::size_t g = image_size / patch_size;
  const std::size_t m_len = g * g, pdim = 3 * patch_size * patch_size;
  Mat patches(m_len, pdim);
  for (std::size_t gy = 0; gy < g; ++gy)
    for (std::size_t gx = 0; gx < g; ++gx) {
      std::size_t idx = 0;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t py = 0; py < patch_size; ++py)
          for (std::size_t px = 0; px < patch_size; ++px)
            patches.at(gy * g + gx, idx++) =
                pixels[c * image_size * image_size + (gy * patch_size + py) * image_size +
                       (gx * patch_size + px)];
    }

  Mat x = add_bias(matmul(patches, from_tensor(w, "vision.patch_proj.w")),
                   from_tensor(w, "vision.patch_proj.b"));
  const Mat pos = from_tensor(w, "vision.pos_emb");
  for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] += pos.v[i];

  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::string p = "vision.layer." + std::to_string(l) + ".";
    Mat a_in = layer_norm(x, from_tensor(w, p + "ln1.gain"), from_tensor(w, p + "ln1.bias"), eps);
    Mat attn = self_attention(a_in, from_tensor(w, p + "attn.w_qkv"),
                              from_tensor(w, p + "attn.b_qkv"), from_tensor(w, p + "attn.w_o"),
                              from_tensor(w, p + "attn.b_o"), n_heads, false);
    for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] += attn.v[i];
    Mat f_in = layer_norm(x, from_tensor(w, p + "ln2.gain"), from_tensor(w, p + "ln2.bias"), eps);
    Mat h = add_bias(matmul(f_in, from_tensor(w, p + "ffn.w_fc")), from_tensor(w, p + "ffn.b_fc"));
    for (double& val : h.v) val = gelu_scalar(val);
    Mat ffn = add_bias(matmul(h, from_tensor(w, p + "ffn.w_proj")),
                       from_tensor(w, p + "ffn.b_proj"));
    for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] += ffn.v[i];
  }
  return layer_norm(x, from_tensor(w, "vision.ln_f.gain"), from_tensor(w, "vision.ln_f.bias"),
                    eps);
}

}  // namespace refimpl
