#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "ituner/tensor.hpp"

namespace ituner {

// Record of the forward pass: one backward closure per primitive op, in
// execution order (inputs always precede their consumers). backward() replays
// the closures in reverse and accumulates into Tensor::grad.
//
// A tape is single-use: calling backward() twice without reset() throws, so
// stale gradient state cannot silently double. Gradient accumulation across
// batches happens across tapes, since grads persist on the tensors until
// zero_grad().
template <class Real>
class Tape {
 public:
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

  std::size_t size() const { return steps_.size(); }

  void backward(Tensor<Real>& loss, Real seed = Real(1)) {
    if (consumed_) throw std::logic_error("tape: backward already ran; reset() first");
    if (loss.numel() != 1)
      throw std::invalid_argument("tape: backward needs a scalar loss, got shape " +
                                  shape_str(loss.shape()));
    if (!loss.requires_grad())
      throw std::invalid_argument("tape: loss does not require grad (recorded without a tape?)");
    consumed_ = true;
    loss.ensure_grad()[0] += seed;
    for (std::size_t i = steps_.size(); i > 0; --i) steps_[i - 1]();
  }

  void reset() {
    steps_.clear();
    consumed_ = false;
  }

 private:
  std::vector<std::function<void()>> steps_;
  bool consumed_ = false;
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace ituner
