#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ituner/tape.hpp"
#include "ituner/tensor.hpp"

namespace ituner {

namespace detail {

template <class Real>
using EMat = Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class Real>
using CEMat =
    Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <class Real>
CEMat<Real> as_mat(const std::vector<Real>& v, std::size_t r, std::size_t c) {
  return CEMat<Real>(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <class Real>
EMat<Real> as_mat(std::vector<Real>& v, std::size_t r, std::size_t c) {
  return EMat<Real>(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <class Real>
void require_matrix(const Tensor<Real>& t, const char* op) {
  if (t.rank() != 2)
    throw std::invalid_argument(std::string(op) + ": expected a matrix, got shape " +
                                shape_str(t.shape()));
}

template <class Real>
bool taped(const Tape<Real>* tape, const Tensor<Real>& a) {
  return tape != nullptr && a.requires_grad();
}

template <class Real>
bool taped(const Tape<Real>* tape, const Tensor<Real>& a, const Tensor<Real>& b) {
  return tape != nullptr && (a.requires_grad() || b.requires_grad());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul: [m x k] * [k x n] -> [m x n]
// ---------------------------------------------------------------------------
template <class Real>
Tensor<Real> matmul(Tensor<Real> a, Tensor<Real> b, Tape<Real>* tape = nullptr) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<Real> out = Tensor<Real>::zeros({m, n});
  detail::as_mat(out.data(), m, n).noalias() =
      detail::as_mat(a.data(), m, k) * detail::as_mat(b.data(), k, n);

  if (detail::taped(tape, a, b)) {
    out.set_requires_grad(true);
    tape->record([a, b, out, m, k, n]() mutable {
      if (!out.has_grad()) return;
      auto gc = detail::as_mat(std::as_const(out).grad(), m, n);
      if (a.requires_grad())
        detail::as_mat(a.ensure_grad(), m, k).noalias() +=
            gc * detail::as_mat(b.data(), k, n).transpose();
      if (b.requires_grad())
        detail::as_mat(b.ensure_grad(), k, n).noalias() +=
            detail::as_mat(a.data(), m, k).transpose() * gc;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// transpose: [m x n] -> [n x m]
// ---------------------------------------------------------------------------
template <class Real>
Tensor<Real> transpose(Tensor<Real> x, Tape<Real>* tape = nullptr) {
  detail::require_matrix(x, "transpose");
  const std::size_t m = x.rows(), n = x.cols();
  Tensor<Real> out = Tensor<Real>::zeros({n, m});
  detail::as_mat(out.data(), n, m).noalias() = detail::as_mat(x.data(), m, n).transpose();
  if (detail::taped(tape, x)) {
    out.set_requires_grad(true);
    tape->record([x, out, m, n]() mutable {
      if (!out.has_grad()) return;
      detail::as_mat(x.ensure_grad(), m, n).noalias() +=
          detail::as_mat(std::as_const(out).grad(), n, m).transpose();
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise add / mul (identical shapes; no implicit broadcasting)
// ---------------------------------------------------------------------------
template <class Real>
Tensor<Real> add(Tensor<Real> a, Tensor<Real> b, Tape<Real>* tape = nullptr) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("add: shape mismatch: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  Tensor<Real> out = Tensor<Real>::zeros(a.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (detail::taped(tape, a, b)) {
    out.set_requires_grad(true);
    tape->record([a, b, out, n]() mutable {
      if (!out.has_grad()) return;
      const auto& g = std::as_const(out).grad();
      if (a.requires_grad()) {
        auto& ga = a.ensure_grad();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.ensure_grad();
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> mul(Tensor<Real> a, Tensor<Real> b, Tape<Real>* tape = nullptr) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("mul: shape mismatch: " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  Tensor<Real> out = Tensor<Real>::zeros(a.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (detail::taped(tape, a, b)) {
    out.set_requires_grad(true);
    tape->record([a, b, out, n]() mutable {
      if (!out.has_grad()) return;
      const auto& g = std::as_const(out).grad();
      if (a.requires_grad()) {
        auto& ga = a.ensure_grad();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.ensure_grad();
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * a.data()[i];
      }
    });
  }
  return out;
}

// scale by a compile-time-known constant (e.g. the adapter's lambda)
template <class Real>
Tensor<Real> scale(Tensor<Real> x, Real c, Tape<Real>* tape = nullptr) {
  Tensor<Real> out = Tensor<Real>::zeros(x.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * c;
  if (detail::taped(tape, x)) {
    out.set_requires_grad(true);
    tape->record([x, out, c, n]() mutable {
      if (!out.has_grad()) return;
      const auto& g = std::as_const(out).grad();
      auto& gx = x.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * c;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// add_bias_row: [m x n] + [n] broadcast over rows (the one permitted broadcast)
// ---------------------------------------------------------------------------
template <class Real>
Tensor<Real> add_bias_row(Tensor<Real> x, Tensor<Real> bias,
                          Tape<Real>* tape = nullptr) {
  detail::require_matrix(x, "add_bias_row");
  if (bias.rank() != 1 || bias.numel() != x.cols())
    throw std::invalid_argument("add_bias_row: bias shape " + shape_str(bias.shape()) +
                                " does not match row width of " + shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols();
  Tensor<Real> out = Tensor<Real>::zeros({m, n});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out.data()[r * n + c] = x.data()[r * n + c] + bias.data()[c];
  if (detail::taped(tape, x, bias)) {
    out.set_requires_grad(true);
    tape->record([x, bias, out, m, n]() mutable {
      if (!out.has_grad()) return;
      const auto& g = std::as_const(out).grad();
      if (x.requires_grad()) {
        auto& gx = x.ensure_grad();
        for (std::size_t i = 0; i < m * n; ++i) gx[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto& gb = bias.ensure_grad();
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// gelu (tanh approximation, GPT-2 convention)
// ---------------------------------------------------------------------------
template <class Real>
Tensor<Real> gelu(Tensor<Real> x, Tape<Real>* tape = nullptr) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  Tensor<Real> out = Tensor<Real>::zeros(x.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = static_cast<double>(x.data()[i]);
    const double u = kC * (v + kA * v * v * v);
    out.data()[i] = static_cast<Real>(0.5 * v * (1.0 + std::tanh(u)));
  }
  if (detail::taped(tape, x)) {
    out.set_requires_grad(true);
    tape->record([x, out, n]() mutable {
      if (!out.has_grad()) return;
      const auto& g = std::as_const(out).grad();
      auto& gx = x.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double v = static_cast<double>(x.data()[i]);
        const double u = kC * (v + kA * v * v * v);
        const double t = std::tanh(u);
        const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * v * v);
        gx[i] += g[i] * static_cast<Real>(d);
      }
    });
  }
  return out;
}

namespace detail {

// Shared softmax backward rule: dx_j = y_j * (dy_j - sum_k dy_k y_k), applied
// per row over [lo, hi).
template <class Real>
void softmax_row_backward(const Real* y, const Real* gy, Real* gx, std::size_t lo, std::size_t hi) {
  Real dot = Real(0);
  for (std::size_t j = lo; j < hi; ++j) dot += gy[j] * y[j];
  for (std::size_t j = lo; j < hi; ++j) gx[j] += y[j] * (gy[j] - dot);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// softmax_rows: row-wise softmax with max subtraction
// ---------------------------------------------------------------------------
template <class Real>
Tensor<Real> softmax_rows(Tensor<Real> x, Tape<Real>* tape = nullptr) {
  detail::require_matrix(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  Tensor<Real> out = Tensor<Real>::zeros({m, n});
  for (std::size_t r = 0; r < m; ++r) {
    const Real* in = x.data().data() + r * n;
    Real* o = out.data().data() + r * n;
    Real mx = in[0];
    for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, in[c]);
    Real sum = Real(0);
    for (std::size_t c = 0; c < n; ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    for (std::size_t c = 0; c < n; ++c) o[c] /= sum;
  }
  if (detail::taped(tape, x)) {
    out.set_requires_grad(true);
    tape->record([x, out, m, n]() mutable {
      if (!out.has_grad()) return;
      const auto& g = std::as_const(out).grad();
      auto& gx = x.ensure_grad();
      for (std::size_t r = 0; r < m; ++r)
        detail::softmax_row_backward(out.data().data() + r * n, g.data() + r * n,
                                     gx.data() + r * n, 0, n);
    });
  }
  return out;
}

// Causal variant for self-attention scores: row t sees columns 0..t only;
// masked entries are exactly zero, so later tokens cannot perturb earlier
// logits even at the bit level.
template <class Real>
Tensor<Real> causal_softmax_rows(Tensor<Real> x, Tape<Real>* tape = nullptr) {
  detail::require_matrix(x, "causal_softmax_rows");
  if (x.rows() != x.cols())
    throw std::invalid_argument("causal_softmax_rows: scores must be square, got " +
                                shape_str(x.shape()));
  const std::size_t n = x.rows();
  Tensor<Real> out = Tensor<Real>::zeros({n, n});
  for (std::size_t r = 0; r < n; ++r) {
    const Real* in = x.data().data() + r * n;
    Real* o = out.data().data() + r * n;
    Real mx = in[0];
    for (std::size_t c = 1; c <= r; ++c) mx = std::max(mx, in[c]);
    Real sum = Real(0);
    for (std::size_t c = 0; c <= r; ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    for (std::size_t c = 0; c <= r; ++c) o[c] /= sum;
  }
  if (detail::taped(tape, x)) {
    out.set_requires_grad(true);
    tape->record([x, out, n]() mutable {
      if (!out.has_grad()) return;
      const auto& g = std::as_const(out).grad();
      auto& gx = x.ensure_grad();
      for (std::size_t r = 0; r < n; ++r)
        detail::softmax_row_backward(out.data().data() + r * n, g.data() + r * n,
                                     gx.data() + r * n, 0, r + 1);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// layer_norm over the last dimension of a matrix, with affine gain/bias
// ---------------------------------------------------------------------------
template <class Real>
Tensor<Real> layer_norm(Tensor<Real> x, Tensor<Real> gain, Tensor<Real> bias,
                        Real eps, Tape<Real>* tape = nullptr) {
  detail::require_matrix(x, "layer_norm");
  const std::size_t m = x.rows(), d = x.cols();
  if (gain.numel() != d || bias.numel() != d)
    throw std::invalid_argument("layer_norm: gain/bias width must be " + std::to_string(d));
  if (eps <= Real(0)) throw std::invalid_argument("layer_norm: eps must be positive");
  Tensor<Real> out = Tensor<Real>::zeros({m, d});
  for (std::size_t r = 0; r < m; ++r) {
    const Real* in = x.data().data() + r * d;
    Real* o = out.data().data() + r * d;
    Real mean = Real(0);
    for (std::size_t c = 0; c < d; ++c) mean += in[c];
    mean /= static_cast<Real>(d);
    Real var = Real(0);
    for (std::size_t c = 0; c < d; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= static_cast<Real>(d);
    const Real inv = Real(1) / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c)
      o[c] = (in[c] - mean) * inv * gain.data()[c] + bias.data()[c];
  }
  if (tape != nullptr && (x.requires_grad() || gain.requires_grad() || bias.requires_grad())) {
    out.set_requires_grad(true);
    tape->record([x, gain, bias, out, m, d, eps]() mutable {
      if (!out.has_grad()) return;
      const auto& g = std::as_const(out).grad();
      for (std::size_t r = 0; r < m; ++r) {
        const Real* in = x.data().data() + r * d;
        const Real* gy = g.data() + r * d;
        Real mean = Real(0);
        for (std::size_t c = 0; c < d; ++c) mean += in[c];
        mean /= static_cast<Real>(d);
        Real var = Real(0);
        for (std::size_t c = 0; c < d; ++c) var += (in[c] - mean) * (in[c] - mean);
        var /= static_cast<Real>(d);
        const Real inv = Real(1) / std::sqrt(var + eps);

        if (gain.requires_grad()) {
          auto& gg = gain.ensure_grad();
          for (std::size_t c = 0; c < d; ++c) gg[c] += gy[c] * (in[c] - mean) * inv;
        }
        if (bias.requires_grad()) {
          auto& gb = bias.ensure_grad();
          for (std::size_t c = 0; c < d; ++c) gb[c] += gy[c];
        }
        if (x.requires_grad()) {
          auto& gx = x.ensure_grad();
          Real dvar = Real(0), dmean = Real(0), dcentered_sum = Real(0);
          for (std::size_t c = 0; c < d; ++c) {
            const Real dxhat = gy[c] * gain.data()[c];
            dvar += dxhat * (in[c] - mean) * Real(-0.5) * inv * inv * inv;
            dmean += -dxhat * inv;
            dcentered_sum += (in[c] - mean);
          }
          dmean += dvar * Real(-2) / static_cast<Real>(d) * dcentered_sum;
          for (std::size_t c = 0; c < d; ++c) {
            const Real dxhat = gy[c] * gain.data()[c];
            gx[r * d + c] += dxhat * inv +
                             dvar * Real(2) * (in[c] - mean) / static_cast<Real>(d) +
                             dmean / static_cast<Real>(d);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// cross_entropy: mean NLL of logits [T x V] against integer targets, with an
// ignore index for padding. Log-sum-exp is max-subtracted.
// ---------------------------------------------------------------------------
template <class Real>
Tensor<Real> cross_entropy(Tensor<Real> logits, std::vector<int> targets,
                           int ignore_index, Tape<Real>* tape = nullptr) {
  detail::require_matrix(logits, "cross_entropy");
  const std::size_t t_len = logits.rows(), vocab = logits.cols();
  if (targets.size() != t_len)
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(t_len) + " logit rows");
  std::size_t live = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < t_len; ++r) {
    const int tgt = targets[r];
    if (tgt == ignore_index) continue;
    if (tgt < 0 || static_cast<std::size_t>(tgt) >= vocab)
      throw std::out_of_range("cross_entropy: target " + std::to_string(tgt) + " at position " +
                              std::to_string(r) + " outside vocab of " + std::to_string(vocab));
    const Real* row = logits.data().data() + r * vocab;
    Real mx = row[0];
    for (std::size_t c = 1; c < vocab; ++c) mx = std::max(mx, row[c]);
    Real sum = Real(0);
    for (std::size_t c = 0; c < vocab; ++c) sum += std::exp(row[c] - mx);
    total += static_cast<double>(mx + std::log(sum) - row[tgt]);
    ++live;
  }
  if (live == 0) throw std::invalid_argument("cross_entropy: every target is ignored");
  Tensor<Real> out = Tensor<Real>::from_data({1}, {static_cast<Real>(total / live)});
  if (detail::taped(tape, logits)) {
    out.set_requires_grad(true);
    tape->record([logits, targets, ignore_index, out, t_len, vocab, live]() mutable {
      if (!out.has_grad()) return;
      const Real go = std::as_const(out).grad()[0] / static_cast<Real>(live);
      auto& gx = logits.ensure_grad();
      for (std::size_t r = 0; r < t_len; ++r) {
        const int tgt = targets[r];
        if (tgt == ignore_index) continue;
        const Real* row = logits.data().data() + r * vocab;
        Real mx = row[0];
        for (std::size_t c = 1; c < vocab; ++c) mx = std::max(mx, row[c]);
        Real sum = Real(0);
        for (std::size_t c = 0; c < vocab; ++c) sum += std::exp(row[c] - mx);
        for (std::size_t c = 0; c < vocab; ++c)
          gx[r * vocab + c] += go * std::exp(row[c] - mx) / sum;
        gx[r * vocab + static_cast<std::size_t>(tgt)] -= go;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// embedding_rows: gather rows of an embedding table by token id
// ---------------------------------------------------------------------------
template <class Real>
Tensor<Real> embedding_rows(Tensor<Real> table, std::vector<int> ids,
                            Tape<Real>* tape = nullptr) {
  detail::require_matrix(table, "embedding_rows");
  const std::size_t v = table.rows(), d = table.cols();
  Tensor<Real> out = Tensor<Real>::zeros({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= v)
      throw std::out_of_range("embedding_rows: id " + std::to_string(ids[r]) +
                              " outside table of " + std::to_string(v) + " rows");
    const Real* src = table.data().data() + static_cast<std::size_t>(ids[r]) * d;
    std::copy(src, src + d, out.data().data() + r * d);
  }
  if (detail::taped(tape, table)) {
    out.set_requires_grad(true);
    tape->record([table, ids, out, d]() mutable {
      if (!out.has_grad()) return;
      const auto& g = std::as_const(out).grad();
      auto& gt = table.ensure_grad();
      for (std::size_t r = 0; r < ids.size(); ++r)
        for (std::size_t c = 0; c < d; ++c)
          gt[static_cast<std::size_t>(ids[r]) * d + c] += g[r * d + c];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// slice / concatenate (column and row variants)
// ---------------------------------------------------------------------------
template <class Real>
Tensor<Real> slice_cols(Tensor<Real> x, std::size_t c0, std::size_t c1,
                        Tape<Real>* tape = nullptr) {
  detail::require_matrix(x, "slice_cols");
  if (c0 >= c1 || c1 > x.cols())
    throw std::invalid_argument("slice_cols: [" + std::to_string(c0) + ", " + std::to_string(c1) +
                                ") invalid for " + shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols(), w = c1 - c0;
  Tensor<Real> out = Tensor<Real>::zeros({m, w});
  for (std::size_t r = 0; r < m; ++r)
    std::copy(x.data().data() + r * n + c0, x.data().data() + r * n + c1,
              out.data().data() + r * w);
  if (detail::taped(tape, x)) {
    out.set_requires_grad(true);
    tape->record([x, out, m, n, w, c0]() mutable {
      if (!out.has_grad()) return;
      const auto& g = std::as_const(out).grad();
      auto& gx = x.ensure_grad();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < w; ++c) gx[r * n + c0 + c] += g[r * w + c];
    });
  }
  return out;
}

template <class Real>
Tensor<Real> slice_rows(Tensor<Real> x, std::size_t r0, std::size_t r1,
                        Tape<Real>* tape = nullptr) {
  detail::require_matrix(x, "slice_rows");
  if (r0 >= r1 || r1 > x.rows())
    throw std::invalid_argument("slice_rows: [" + std::to_string(r0) + ", " + std::to_string(r1) +
                                ") invalid for " + shape_str(x.shape()));
  const std::size_t n = x.cols(), h = r1 - r0;
  Tensor<Real> out = Tensor<Real>::zeros({h, n});
  std::copy(x.data().data() + r0 * n, x.data().data() + r1 * n, out.data().data());
  if (detail::taped(tape, x)) {
    out.set_requires_grad(true);
    tape->record([x, out, n, h, r0]() mutable {
      if (!out.has_grad()) return;
      const auto& g = std::as_const(out).grad();
      auto& gx = x.ensure_grad();
      for (std::size_t i = 0; i < h * n; ++i) gx[r0 * n + i] += g[i];
    });
  }
  return out;
}

template <class Real>
Tensor<Real> concat_cols(std::vector<Tensor<Real>> parts, Tape<Real>* tape = nullptr) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: nothing to concatenate");
  const std::size_t m = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.rows() != m)
      throw std::invalid_argument("concat_cols: row counts differ: " + shape_str(p.shape()));
    total += p.cols();
  }
  Tensor<Real> out = Tensor<Real>::zeros({m, total});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < m; ++r)
      std::copy(p.data().data() + r * w, p.data().data() + (r + 1) * w,
                out.data().data() + r * total + off);
    off += w;
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (tape != nullptr && any) {
    out.set_requires_grad(true);
    tape->record([parts, out, m, total]() mutable {
      if (!out.has_grad()) return;
      const auto& g = std::as_const(out).grad();
      std::size_t off = 0;
      for (auto& p : parts) {
        const std::size_t w = p.cols();
        if (p.requires_grad()) {
          auto& gp = p.ensure_grad();
          for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += g[r * total + off + c];
        }
        off += w;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// sum of all entries -> scalar
// ---------------------------------------------------------------------------
template <class Real>
Tensor<Real> sum(Tensor<Real> x, Tape<Real>* tape = nullptr) {
  Real total = Real(0);
  for (Real v : x.data()) total += v;
  Tensor<Real> out = Tensor<Real>::from_data({1}, {total});
  if (detail::taped(tape, x)) {
    out.set_requires_grad(true);
    tape->record([x, out]() mutable {
      if (!out.has_grad()) return;
      const Real g = std::as_const(out).grad()[0];
      auto& gx = x.ensure_grad();
      for (Real& v : gx) v += g;
    });
  }
  return out;
}

}  // namespace ituner
