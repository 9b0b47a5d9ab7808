#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace trace {

// Dense row-major tensor of doubles. Shapes are small (<= 4 dims in practice);
// layout conventions are documented at each call site (NCHW for planes,
// (N, L, C) for token sequences).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(numel(shape_), 0.0);
  }

  Tensor(std::vector<int> shape, double value) : shape_(std::move(shape)) {
    data_.assign(numel(shape_), value);
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static std::size_t numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int a) { return data_[static_cast<std::size_t>(a)]; }
  double& at(int a, int b) {
    assert(ndim() == 2);
    return data_[static_cast<std::size_t>(a) * shape_[1] + b];
  }
  double& at(int a, int b, int c) {
    assert(ndim() == 3);
    return data_[(static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c];
  }
  double& at(int a, int b, int c, int d) {
    assert(ndim() == 4);
    return data_[((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }
  double at(int a) const { return data_[static_cast<std::size_t>(a)]; }
  double at(int a, int b) const {
    return data_[static_cast<std::size_t>(a) * shape_[1] + b];
  }
  double at(int a, int b, int c) const {
    return data_[(static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c];
  }
  double at(int a, int b, int c, int d) const {
    return data_[((static_cast<std::size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }

  void fill(double v) { data_.assign(data_.size(), v); }
  void zero() { fill(0.0); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  Tensor& add_(const Tensor& other) {
    assert(same_shape(other));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& scale_(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  std::string shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ", ";
      s += std::to_string(shape_[i]);
    }
    return s + "]";
  }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

// A trainable parameter: value plus accumulated gradient.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, std::vector<int> shape)
      : name(std::move(n)), value(shape), grad(shape) {}

  void zero_grad() { grad.zero(); }
};

using ParamRefs = std::vector<Param*>;

// Named persistent tensors that are model state but not trainable parameters
// (batch-norm running statistics); checkpoints must carry them so a restore
// reproduces eval-mode forwards bit-exactly.
using StateRefs = std::vector<std::pair<std::string, Tensor*>>;

inline void check_shape(const Tensor& t, const std::vector<int>& expect,
                        const char* what) {
  if (t.shape() != expect) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch, got " +
                                t.shape_str());
  }
}

inline void check_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) {
    throw std::invalid_argument(std::string(what) + ": non-finite values");
  }
}

}  // namespace trace
