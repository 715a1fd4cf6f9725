#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ituner/image.hpp"
#include "ituner/ledger.hpp"
#include "ituner/ops.hpp"
#include "ituner/rng.hpp"
#include "ituner/tensor.hpp"

namespace ituner {

struct VisionConfig {
  std::size_t image_size = 32;
  std::size_t patch_size = 8;
  std::size_t n_layers = 2;
  std::size_t d_vision = 64;
  std::size_t n_heads = 2;
  double layer_norm_eps = 1e-5;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t memory_len() const { return grid() * grid(); }
  std::size_t patch_dim() const { return 3 * patch_size * patch_size; }

  void validate() const {
    if (image_size == 0 || patch_size == 0 || patch_size > image_size)
      throw std::invalid_argument("vision: bad image/patch size");
    if (image_size % patch_size != 0)
      throw std::invalid_argument("vision: image_size " + std::to_string(image_size) +
                                  " not divisible by patch_size " + std::to_string(patch_size));
    if (d_vision == 0 || n_heads == 0 || d_vision % n_heads != 0)
      throw std::invalid_argument("vision: d_vision must be divisible by n_heads");
  }
};

// Per-patch embeddings of one image; constant during decoder training.
template <class Real>
struct VisualMemory {
  Tensor<Real> embeddings;  // M x d_vision
  std::string source_image_id;
};

using VisualMemoryF = VisualMemory<float>;

template <class Real>
struct VisionState {
  struct Layer {
    Tensor<Real> ln1_gain, ln1_bias;
    Tensor<Real> w_qkv, b_qkv, w_o, b_o;
    Tensor<Real> ln2_gain, ln2_bias;
    Tensor<Real> w_fc, b_fc, w_proj, b_proj;
  };

  VisionConfig cfg;
  Tensor<Real> w_patch, b_patch;  // patch_dim -> d_vision
  Tensor<Real> pos_emb;           // M x d_vision
  std::vector<Layer> layers;
  Tensor<Real> ln_f_gain, ln_f_bias;
};

template <class Real>
VisionState<Real> init_vision(const VisionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t d = cfg.d_vision, f = 4 * d;
  const Real sigma = Real(0.02);
  const Real resid_sigma = static_cast<Real>(0.02 / std::sqrt(2.0 * cfg.n_layers));
  VisionState<Real> s;
  s.cfg = cfg;
  s.w_patch = Tensor<Real>::gaussian({cfg.patch_dim(), d}, rng, sigma);
  s.b_patch = Tensor<Real>::zeros({d});
  s.pos_emb = Tensor<Real>::gaussian({cfg.memory_len(), d}, rng, Real(0.01));
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    typename VisionState<Real>::Layer l;
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
std::vector<NamedParam<Real>> vision_params(const VisionState<Real>& s) {
  std::vector<NamedParam<Real>> out;
  out.push_back({"vision.patch_proj.w", s.w_patch});
  out.push_back({"vision.patch_proj.b", s.b_patch});
  out.push_back({"vision.pos_emb", s.pos_emb});
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    const auto& l = s.layers[i];
    const std::string p = "vision.layer." + std::to_string(i) + ".";
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
  out.push_back({"vision.ln_f.gain", s.ln_f_gain});
  out.push_back({"vision.ln_f.bias", s.ln_f_bias});
  return out;
}

namespace detail {

// Bidirectional multi-head self-attention sub-block shared by the encoder.
template <class Real>
Tensor<Real> encoder_self_attention(const Tensor<Real>& x_ln, const Tensor<Real>& w_qkv,
                                    const Tensor<Real>& b_qkv, const Tensor<Real>& w_o,
                                    const Tensor<Real>& b_o, std::size_t n_heads,
                                    Tape<Real>* tape) {
  const std::size_t d = x_ln.cols();
  const std::size_t dh = d / n_heads;
  Tensor<Real> qkv = add_bias_row(matmul(x_ln, w_qkv, tape), b_qkv, tape);
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
    Tensor<Real> probs = softmax_rows(scores, tape);
    heads.push_back(matmul(probs, vh, tape));
  }
  Tensor<Real> ctx = concat_cols(heads, tape);
  return add_bias_row(matmul(ctx, w_o, tape), b_o, tape);
}

}  // namespace detail

// Flatten an image tensor [3 x S x S] into per-patch feature rows
// [M x 3*p*p]; feature order within a patch is (channel, y, x).
template <class Real>
Tensor<Real> patchify(const Tensor<Real>& pixels, const VisionConfig& cfg) {
  const std::size_t s = cfg.image_size, p = cfg.patch_size, g = cfg.grid();
  Tensor<Real> out = Tensor<Real>::zeros({cfg.memory_len(), cfg.patch_dim()});
  for (std::size_t gy = 0; gy < g; ++gy)
    for (std::size_t gx = 0; gx < g; ++gx) {
      Real* row = out.data().data() + (gy * g + gx) * cfg.patch_dim();
      std::size_t idx = 0;
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t py = 0; py < p; ++py)
          for (std::size_t px = 0; px < p; ++px)
            row[idx++] = pixels.data()[c * s * s + (gy * p + py) * s + (gx * p + px)];
    }
  return out;
}

// Frozen encoder forward: patchify, embed, add 2-D position embeddings, run
// pre-norm encoder blocks, final layer norm. Never taped; no gradient can
// reach the encoder.
template <class Real>
VisualMemory<Real> encode_image(const VisionState<Real>& state, const Tensor<Real>& pixels,
                                const std::string& image_id = "") {
  const std::size_t s = state.cfg.image_size;
  if (pixels.rank() != 3 || pixels.dim(0) != 3 || pixels.dim(1) != s || pixels.dim(2) != s)
    throw std::invalid_argument(
        "encode_image: got shape " + shape_str(pixels.shape()) + ", expected [3x" +
        std::to_string(s) + "x" + std::to_string(s) + "]; run preprocess() to resize and crop");
  const Real eps = static_cast<Real>(state.cfg.layer_norm_eps);
  Tape<Real>* tape = nullptr;
  Tensor<Real> x =
      add_bias_row(matmul(patchify(pixels, state.cfg), state.w_patch, tape), state.b_patch, tape);
  x = add(x, state.pos_emb, tape);
  for (const auto& l : state.layers) {
    Tensor<Real> a_in = layer_norm(x, l.ln1_gain, l.ln1_bias, eps, tape);
    Tensor<Real> attn =
        detail::encoder_self_attention(a_in, l.w_qkv, l.b_qkv, l.w_o, l.b_o, state.cfg.n_heads, tape);
    x = add(x, attn, tape);
    Tensor<Real> f_in = layer_norm(x, l.ln2_gain, l.ln2_bias, eps, tape);
    Tensor<Real> h = gelu(add_bias_row(matmul(f_in, l.w_fc, tape), l.b_fc, tape), tape);
    x = add(x, add_bias_row(matmul(h, l.w_proj, tape), l.b_proj, tape), tape);
  }
  x = layer_norm(x, state.ln_f_gain, state.ln_f_bias, eps, tape);
  return VisualMemory<Real>{x, image_id};
}

// Bilinear interpolation of a g x g grid of position embeddings to g' x g'
// (align-corners, per channel). g' == g returns the input values exactly.
template <class Real>
Tensor<Real> interpolate_pos_embed(const Tensor<Real>& pos, std::size_t new_grid) {
  detail::require_matrix(pos, "interpolate_pos_embed");
  const std::size_t m = pos.rows(), d = pos.cols();
  const auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(m))));
  if (g * g != m || g == 0)
    throw std::invalid_argument("interpolate_pos_embed: " + std::to_string(m) +
                                " rows is not a square grid");
  if (new_grid == 0) throw std::invalid_argument("interpolate_pos_embed: empty target grid");
  Tensor<Real> out = Tensor<Real>::zeros({new_grid * new_grid, d});
  for (std::size_t oy = 0; oy < new_grid; ++oy)
    for (std::size_t ox = 0; ox < new_grid; ++ox) {
      const double sy =
          new_grid > 1 ? static_cast<double>(oy) * (g - 1) / (new_grid - 1) : 0.0;
      const double sx =
          new_grid > 1 ? static_cast<double>(ox) * (g - 1) / (new_grid - 1) : 0.0;
      const std::size_t y0 = static_cast<std::size_t>(sy);
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t y1 = std::min(y0 + 1, g - 1);
      const std::size_t x1 = std::min(x0 + 1, g - 1);
      const double fy = sy - static_cast<double>(y0);
      const double fx = sx - static_cast<double>(x0);
      Real* dst = out.data().data() + (oy * new_grid + ox) * d;
      const Real* p00 = pos.data().data() + (y0 * g + x0) * d;
      const Real* p01 = pos.data().data() + (y0 * g + x1) * d;
      const Real* p10 = pos.data().data() + (y1 * g + x0) * d;
      const Real* p11 = pos.data().data() + (y1 * g + x1) * d;
      for (std::size_t c = 0; c < d; ++c) {
        const double top = (1.0 - fx) * p00[c] + fx * p01[c];
        const double bot = (1.0 - fx) * p10[c] + fx * p11[c];
        dst[c] = static_cast<Real>((1.0 - fy) * top + fy * bot);
      }
    }
  return out;
}

// Rebuild the frozen encoder for a different input resolution: same weights,
// position embeddings interpolated to the new patch grid.
template <class Real>
VisionState<Real> vision_at_resolution(const VisionState<Real>& base, std::size_t image_size) {
  VisionState<Real> s = base;
  s.cfg.image_size = image_size;
  s.cfg.validate();
  s.pos_emb = interpolate_pos_embed(base.pos_emb, s.cfg.grid());
  return s;
}

// Resize shorter side to `target` (bilinear, half-pixel centers), center-crop
// to target x target, scale to [0, 1]. Output layout [3 x target x target].
template <class Real = float>
Tensor<Real> preprocess(const RawImage& img, std::size_t target) {
  if (img.width == 0 || img.height == 0) throw std::invalid_argument("preprocess: empty image");
  if (target == 0) throw std::invalid_argument("preprocess: zero target size");
  const double ratio = static_cast<double>(target) / std::min(img.width, img.height);
  const std::size_t rw = std::max<std::size_t>(
      target, static_cast<std::size_t>(std::llround(img.width * ratio)));
  const std::size_t rh = std::max<std::size_t>(
      target, static_cast<std::size_t>(std::llround(img.height * ratio)));

  std::vector<double> resized(rw * rh * 3);
  for (std::size_t y = 0; y < rh; ++y)
    for (std::size_t x = 0; x < rw; ++x) {
      const double sy = (static_cast<double>(y) + 0.5) * img.height / rh - 0.5;
      const double sx = (static_cast<double>(x) + 0.5) * img.width / rw - 0.5;
      const double cy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
      const double cx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
      const std::size_t y0 = static_cast<std::size_t>(cy), x0 = static_cast<std::size_t>(cx);
      const std::size_t y1 = std::min(y0 + 1, img.height - 1);
      const std::size_t x1 = std::min(x0 + 1, img.width - 1);
      const double fy = cy - y0, fx = cx - x0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double v00 = img.pixel(y0, x0)[c], v01 = img.pixel(y0, x1)[c];
        const double v10 = img.pixel(y1, x0)[c], v11 = img.pixel(y1, x1)[c];
        const double top = (1.0 - fx) * v00 + fx * v01;
        const double bot = (1.0 - fx) * v10 + fx * v11;
        resized[(y * rw + x) * 3 + c] = (1.0 - fy) * top + fy * bot;
      }
    }

  const std::size_t off_y = (rh - target) / 2;
  const std::size_t off_x = (rw - target) / 2;
  Tensor<Real> out = Tensor<Real>::zeros({3, target, target});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < target; ++y)
      for (std::size_t x = 0; x < target; ++x)
        out.data()[c * target * target + y * target + x] =
            static_cast<Real>(resized[((y + off_y) * rw + (x + off_x)) * 3 + c] / 255.0);
  return out;
}

}  // namespace ituner
