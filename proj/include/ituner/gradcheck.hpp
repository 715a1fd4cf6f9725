#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "ituner/tape.hpp"
#include "ituner/tensor.hpp"

namespace ituner {

// Compares tape gradients of a scalar-valued function against central finite
// differences, perturbing x in place. `f` receives a tape pointer (or nullptr
// for the plain forward evaluations) and must read x through the same storage
// it was given. Returns the max relative error with denominator
// max(|analytic|, |numeric|, 1e-8).
template <class Real, class F>
Real grad_check(F&& f, Tensor<Real>& x, Real h) {
  const bool old_rg = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();

  Tape<Real> tape;
  Tensor<Real> y = f(&tape);
  if (y.numel() != 1)
    throw std::invalid_argument("grad_check: f must be scalar-valued, got shape " +
                                shape_str(y.shape()));
  tape.backward(y);

  std::vector<Real> analytic = x.has_grad() ? x.grad() : std::vector<Real>(x.numel(), Real(0));
  x.zero_grad();

  Real worst = Real(0);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const Real saved = x.data()[i];
    x.data()[i] = saved + h;
    const Real up = f(static_cast<Tape<Real>*>(nullptr)).data()[0];
    x.data()[i] = saved - h;
    const Real down = f(static_cast<Tape<Real>*>(nullptr)).data()[0];
    x.data()[i] = saved;
    const Real numeric = (up - down) / (Real(2) * h);
    const Real denom = std::max({std::abs(analytic[i]), std::abs(numeric), Real(1e-8)});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }

  x.set_requires_grad(old_rg);
  return worst;
}

// Step-ladder variant for deep compositions: each coordinate is accepted at
// whichever step agrees best, since no single h sits inside every
// coordinate's validity window (truncation grows with h, round-off noise on
// the loss grows as h shrinks; coordinates whose true gradient is exactly
// zero, like the shift-invariant key bias, are pure round-off at any step).
// Returns the max over coordinates of the per-coordinate best relative error.
template <class Real, class F>
Real grad_check_steps(F&& f, Tensor<Real>& x, const std::vector<Real>& steps) {
  const bool old_rg = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();

  Tape<Real> tape;
  Tensor<Real> y = f(&tape);
  if (y.numel() != 1)
    throw std::invalid_argument("grad_check: f must be scalar-valued, got shape " +
                                shape_str(y.shape()));
  tape.backward(y);
  std::vector<Real> analytic = x.has_grad() ? x.grad() : std::vector<Real>(x.numel(), Real(0));
  x.zero_grad();

  Real worst = Real(0);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    Real best = std::numeric_limits<Real>::max();
    for (const Real h : steps) {
      const Real saved = x.data()[i];
      x.data()[i] = saved + h;
      const Real up = f(static_cast<Tape<Real>*>(nullptr)).data()[0];
      x.data()[i] = saved - h;
      const Real down = f(static_cast<Tape<Real>*>(nullptr)).data()[0];
      x.data()[i] = saved;
      const Real numeric = (up - down) / (Real(2) * h);
      const Real denom = std::max({std::abs(analytic[i]), std::abs(numeric), Real(1e-8)});
      best = std::min(best, std::abs(analytic[i] - numeric) / denom);
    }
    worst = std::max(worst, best);
  }

  x.set_requires_grad(old_rg);
  return worst;
}

}  // namespace ituner
