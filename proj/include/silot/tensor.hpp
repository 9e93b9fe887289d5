#pragma once

#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace silot {

// Dense row-major tensor of doubles. Most of the code treats a tensor as a
// 2-D matrix whose row count is shape[0] and whose column count is the
// product of the remaining dims; image-shaped tensors ({C,H,W}) keep their
// full shape so convolution and sampling ops can recover the geometry.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}
  Tensor(std::vector<int> s, double fill) : shape(std::move(s)), data(numel_of(shape), fill) {}

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, double v) { return Tensor(std::move(s), v); }
  static Tensor scalar(double v) {
    Tensor t({1, 1});
    t.data[0] = v;
    return t;
  }
  static Tensor row(std::vector<double> v) {
    Tensor t;
    t.shape = {1, static_cast<int>(v.size())};
    t.data = std::move(v);
    return t;
  }
  static Tensor of(std::vector<int> s, std::vector<double> v) {
    Tensor t;
    t.shape = std::move(s);
    t.data = std::move(v);
    assert(static_cast<int64_t>(t.data.size()) == numel_of(t.shape));
    return t;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int64_t cols() const {
    int64_t c = 1;
    for (size_t i = 1; i < shape.size(); ++i) c *= shape[i];
    return c;
  }

  double& operator()(int r, int64_t c) { return data[static_cast<int64_t>(r) * cols() + c]; }
  double operator()(int r, int64_t c) const { return data[static_cast<int64_t>(r) * cols() + c]; }
  double& operator[](int64_t i) { return data[i]; }
  double operator[](int64_t i) const { return data[i]; }

  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  Tensor reshaped(std::vector<int> s) const {
    assert(numel_of(s) == numel());
    Tensor t = *this;
    t.shape = std::move(s);
    return t;
  }
};

}  // namespace silot
