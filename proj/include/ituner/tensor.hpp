#pragma once

#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ituner/rng.hpp"

namespace ituner {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <class Real>
struct TensorData {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until backward touches this tensor
  bool requires_grad = false;
};

// Dense row-major tensor. Value-semantic handle over shared storage: copies
// alias the same buffer, so a tensor can live in a model struct and a ledger
// at once.
template <class Real>
class Tensor {
 public:
  Tensor() : d_(std::make_shared<TensorData<Real>>()) {}

  static Tensor zeros(Shape shape) {
    Tensor t;
    t.d_->data.assign(shape_numel(shape), Real(0));
    t.d_->shape = std::move(shape);
    return t;
  }

  static Tensor full(Shape shape, Real value) {
    Tensor t = zeros(std::move(shape));
    for (Real& x : t.d_->data) x = value;
    return t;
  }

  static Tensor from_data(Shape shape, std::vector<Real> data) {
    if (shape_numel(shape) != data.size())
      throw std::invalid_argument("tensor: shape " + shape_str(shape) + " wants " +
                                  std::to_string(shape_numel(shape)) + " values, got " +
                                  std::to_string(data.size()));
    Tensor t;
    t.d_->shape = std::move(shape);
    t.d_->data = std::move(data);
    return t;
  }

  static Tensor gaussian(Shape shape, Rng& rng, Real sigma) {
    Tensor t = zeros(std::move(shape));
    for (Real& x : t.d_->data) x = static_cast<Real>(rng.normal()) * sigma;
    return t;
  }

  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t numel() const { return d_->data.size(); }
  std::size_t dim(std::size_t i) const { return d_->shape.at(i); }

  // 2-D accessors; most of the model math lives on matrices.
  std::size_t rows() const { return d_->shape.at(0); }
  std::size_t cols() const { return d_->shape.at(1); }
  Real& at(std::size_t r, std::size_t c) { return d_->data[r * cols() + c]; }
  Real at(std::size_t r, std::size_t c) const { return d_->data[r * cols() + c]; }

  std::vector<Real>& data() { return d_->data; }
  const std::vector<Real>& data() const { return d_->data; }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool b) { d_->requires_grad = b; }

  bool has_grad() const { return !d_->grad.empty(); }
  std::vector<Real>& grad() { return d_->grad; }
  const std::vector<Real>& grad() const { return d_->grad; }

  // Allocates the gradient buffer (zeros) if absent.
  std::vector<Real>& ensure_grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->data.size(), Real(0));
    return d_->grad;
  }

  void zero_grad() { d_->grad.clear(); }

  // Deep copy; the result owns fresh storage and carries no gradient.
  Tensor clone() const {
    Tensor t;
    t.d_->shape = d_->shape;
    t.d_->data = d_->data;
    t.d_->requires_grad = d_->requires_grad;
    return t;
  }

  TensorData<Real>* node() const { return d_.get(); }
  const std::shared_ptr<TensorData<Real>>& storage() const { return d_; }

  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

 private:
  std::shared_ptr<TensorData<Real>> d_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace ituner
