#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "stemscribe/error.hpp"

namespace stemscribe::nn {

// Dense row-major tensor of doubles.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0)
      : shape(std::move(dims)), data(count(shape), fill) {}
  Tensor(std::vector<std::size_t> dims, std::vector<double> values)
      : shape(std::move(dims)), data(std::move(values)) {
    if (data.size() != count(shape))
      throw Error(ErrorCode::kShapeMismatch, "data length does not match shape");
  }

  static std::size_t count(const std::vector<std::size_t>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           std::multiplies<>());
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  double& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  double& at(std::size_t a, std::size_t b, std::size_t c) {
    return data[(a * shape[1] + b) * shape[2] + c];
  }
  double at(std::size_t a, std::size_t b, std::size_t c) const {
    return data[(a * shape[1] + b) * shape[2] + c];
  }

  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline std::string shape_string(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i)
    out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

inline void expect_shape(const Tensor& t, const std::vector<std::size_t>& s,
                         const char* what) {
  if (t.shape != s)
    throw Error(ErrorCode::kShapeMismatch, std::string(what) + ": got " +
                                               shape_string(t.shape) +
                                               ", want " + shape_string(s));
}

// A trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, std::vector<std::size_t> dims)
      : name(std::move(n)), value(dims), grad(dims) {}

  void zero_grad() { grad.fill(0.0); }
};

using ParamList = std::vector<Parameter*>;

inline void zero_grads(const ParamList& params) {
  for (auto* p : params) p->zero_grad();
}

// uniform(-k, k) with k = 1/sqrt(fan_in).
inline void init_uniform(Tensor& t, std::size_t fan_in, std::mt19937_64& rng) {
  const double k = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, fan_in)));
  std::uniform_real_distribution<double> dist(-k, k);
  for (double& v : t.data) v = dist(rng);
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data) v = sigmoid(v);
  return y;
}

// Backward of y = sigmoid(x), expressed through y.
inline Tensor sigmoid_backward(const Tensor& y, const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= y[i] * (1.0 - y[i]);
  return dx;
}

inline Tensor tanh(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data) v = std::tanh(v);
  return y;
}

inline Tensor tanh_backward(const Tensor& y, const Tensor& dy) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= 1.0 - y[i] * y[i];
  return dx;
}

}  // namespace stemscribe::nn
