#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "stemscribe/nn/tensor.hpp"

// Layers with hand-written backward passes. Each forward fills a caller-owned
// Cache; backward consumes it, accumulates parameter gradients, and returns
// the gradient with respect to the layer input.
namespace stemscribe::nn {

// Per-feature normalization over the rows of an [N, F] input.
class BatchNorm {
 public:
  static constexpr double kDefaultEps = 1e-9;

  struct Cache {
    Tensor xhat;
    std::vector<double> inv_std;
    bool training = false;
  };

  BatchNorm() = default;
  BatchNorm(const std::string& prefix, std::size_t features,
            double momentum = 0.1, double eps = kDefaultEps)
      : gamma(prefix + ".gamma", {features}),
        beta(prefix + ".beta", {features}),
        running_mean({features}, 0.0),
        running_var({features}, 1.0),
        momentum_(momentum),
        eps_(eps) {
    gamma.value.fill(1.0);
  }

  std::size_t features() const { return gamma.value.size(); }

  Tensor forward(const Tensor& x, bool training, Cache* cache = nullptr) {
    if (x.rank() != 2 || x.dim(1) != features())
      throw Error(ErrorCode::kShapeMismatch,
                  "batch norm expects [N, " + std::to_string(features()) +
                      "], got " + shape_string(x.shape));
    const std::size_t n = x.dim(0), f = features();
    std::vector<double> mean(f, 0.0), var(f, 0.0);
    if (training) {
      if (n == 0) throw Error(ErrorCode::kShapeMismatch, "empty batch");
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < f; ++c) mean[c] += x.at(r, c);
      for (double& m : mean) m /= static_cast<double>(n);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < f; ++c) {
          const double d = x.at(r, c) - mean[c];
          var[c] += d * d;
        }
      for (double& v : var) v /= static_cast<double>(n);
      for (std::size_t c = 0; c < f; ++c) {
        running_mean[c] = (1.0 - momentum_) * running_mean[c] + momentum_ * mean[c];
        running_var[c] = (1.0 - momentum_) * running_var[c] + momentum_ * var[c];
      }
    } else {
      mean = running_mean.data;
      var = running_var.data;
    }
    std::vector<double> inv_std(f);
    for (std::size_t c = 0; c < f; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps_);

    Tensor xhat({n, f});
    Tensor y({n, f});
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < f; ++c) {
        xhat.at(r, c) = (x.at(r, c) - mean[c]) * inv_std[c];
        y.at(r, c) = gamma.value[c] * xhat.at(r, c) + beta.value[c];
      }
    if (cache) *cache = Cache{std::move(xhat), std::move(inv_std), training};
    return y;
  }

  Tensor backward(const Tensor& dy, const Cache& cache) {
    const std::size_t n = dy.dim(0), f = features();
    Tensor dx({n, f});
    std::vector<double> sum_dxhat(f, 0.0), sum_dxhat_xhat(f, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < f; ++c) {
        const double g = dy.at(r, c);
        gamma.grad[c] += g * cache.xhat.at(r, c);
        beta.grad[c] += g;
        const double dxhat = g * gamma.value[c];
        sum_dxhat[c] += dxhat;
        sum_dxhat_xhat[c] += dxhat * cache.xhat.at(r, c);
      }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < f; ++c) {
        const double dxhat = dy.at(r, c) * gamma.value[c];
        if (cache.training)
          dx.at(r, c) = cache.inv_std[c] * inv_n *
                        (static_cast<double>(n) * dxhat - sum_dxhat[c] -
                         cache.xhat.at(r, c) * sum_dxhat_xhat[c]);
        else
          dx.at(r, c) = dxhat * cache.inv_std[c];
      }
    return dx;
  }

  ParamList params() { return {&gamma, &beta}; }

  Parameter gamma;
  Parameter beta;
  Tensor running_mean;
  Tensor running_var;

 private:
  double momentum_ = 0.1;
  double eps_ = kDefaultEps;
};

// y = x W^T + b applied to every row of an [N, in] input. Applied to a
// [T, in] sequence this is the time-distributed dense layer.
class Dense {
 public:
  struct Cache {
    Tensor input;
  };

  Dense() = default;
  Dense(const std::string& prefix, std::size_t in, std::size_t out)
      : weight(prefix + ".weight", {out, in}), bias(prefix + ".bias", {out}) {}

  std::size_t in_features() const { return weight.value.dim(1); }
  std::size_t out_features() const { return weight.value.dim(0); }

  void init(std::mt19937_64& rng) {
    init_uniform(weight.value, in_features(), rng);
    init_uniform(bias.value, in_features(), rng);
  }

  Tensor forward(const Tensor& x, Cache* cache = nullptr) const {
    if (x.rank() != 2 || x.dim(1) != in_features())
      throw Error(ErrorCode::kShapeMismatch,
                  "dense expects [N, " + std::to_string(in_features()) +
                      "], got " + shape_string(x.shape));
    const std::size_t n = x.dim(0), in = in_features(), out = out_features();
    Tensor y({n, out});
    for (std::size_t r = 0; r < n; ++r) {
      const double* xr = &x.data[r * in];
      for (std::size_t o = 0; o < out; ++o) {
        const double* w = &weight.value.data[o * in];
        double acc = bias.value[o];
        for (std::size_t i = 0; i < in; ++i) acc += w[i] * xr[i];
        y.at(r, o) = acc;
      }
    }
    if (cache) cache->input = x;
    return y;
  }

  Tensor backward(const Tensor& dy, const Cache& cache) {
    const Tensor& x = cache.input;
    const std::size_t n = x.dim(0), in = in_features(), out = out_features();
    Tensor dx({n, in});
    for (std::size_t r = 0; r < n; ++r) {
      const double* xr = &x.data[r * in];
      double* dxr = &dx.data[r * in];
      for (std::size_t o = 0; o < out; ++o) {
        const double g = dy.at(r, o);
        if (g == 0.0) continue;
        bias.grad[o] += g;
        double* gw = &weight.grad.data[o * in];
        const double* w = &weight.value.data[o * in];
        for (std::size_t i = 0; i < in; ++i) {
          gw[i] += g * xr[i];
          dxr[i] += g * w[i];
        }
      }
    }
    return dx;
  }

  ParamList params() { return {&weight, &bias}; }

  Parameter weight;
  Parameter bias;
};

// Single-direction LSTM over a [T, in] sequence producing [T, hidden].
// Gate rows are stacked in the order input, forget, cell, output.
class Lstm {
 public:
  struct Cache {
    Tensor input;
    Tensor gates;  // [T, 4H] post-activation
    Tensor cell;   // [T, H]
    Tensor hidden; // [T, H]
  };

  Lstm() = default;
  Lstm(const std::string& prefix, std::size_t in, std::size_t hidden)
      : w_input(prefix + ".w_input", {4 * hidden, in}),
        w_hidden(prefix + ".w_hidden", {4 * hidden, hidden}),
        bias(prefix + ".bias", {4 * hidden}) {}

  std::size_t in_features() const { return w_input.value.dim(1); }
  std::size_t hidden_size() const { return w_hidden.value.dim(1); }

  void init(std::mt19937_64& rng) {
    init_uniform(w_input.value, hidden_size(), rng);
    init_uniform(w_hidden.value, hidden_size(), rng);
    init_uniform(bias.value, hidden_size(), rng);
  }

  Tensor forward(const Tensor& x, Cache* cache = nullptr) const {
    if (x.rank() != 2 || x.dim(1) != in_features())
      throw Error(ErrorCode::kShapeMismatch,
                  "lstm expects [T, " + std::to_string(in_features()) +
                      "], got " + shape_string(x.shape));
    const std::size_t steps = x.dim(0), in = in_features(), h = hidden_size();
    Tensor gates({steps, 4 * h});
    Tensor cell({steps, h});
    Tensor hid({steps, h});
    std::vector<double> pre(4 * h);
    for (std::size_t t = 0; t < steps; ++t) {
      const double* xt = &x.data[t * in];
      const double* hprev = t ? &hid.data[(t - 1) * h] : nullptr;
      const double* cprev = t ? &cell.data[(t - 1) * h] : nullptr;
      for (std::size_t g = 0; g < 4 * h; ++g) {
        double acc = bias.value[g];
        const double* wi = &w_input.value.data[g * in];
        for (std::size_t i = 0; i < in; ++i) acc += wi[i] * xt[i];
        if (hprev) {
          const double* wh = &w_hidden.value.data[g * h];
          for (std::size_t j = 0; j < h; ++j) acc += wh[j] * hprev[j];
        }
        pre[g] = acc;
      }
      double* gt = &gates.data[t * 4 * h];
      for (std::size_t j = 0; j < h; ++j) {
        const double ig = sigmoid(pre[j]);
        const double fg = sigmoid(pre[h + j]);
        const double cg = std::tanh(pre[2 * h + j]);
        const double og = sigmoid(pre[3 * h + j]);
        gt[j] = ig;
        gt[h + j] = fg;
        gt[2 * h + j] = cg;
        gt[3 * h + j] = og;
        const double c = fg * (cprev ? cprev[j] : 0.0) + ig * cg;
        cell.at(t, j) = c;
        hid.at(t, j) = og * std::tanh(c);
      }
    }
    if (cache) *cache = Cache{x, std::move(gates), std::move(cell), hid};
    return hid;
  }

  Tensor backward(const Tensor& dh_out, const Cache& cache) {
    const std::size_t steps = cache.input.dim(0), in = in_features(),
                      h = hidden_size();
    Tensor dx({steps, in});
    std::vector<double> dh_next(h, 0.0), dc_next(h, 0.0), da(4 * h);
    for (std::size_t t = steps; t-- > 0;) {
      const double* gt = &cache.gates.data[t * 4 * h];
      for (std::size_t j = 0; j < h; ++j) {
        const double ig = gt[j], fg = gt[h + j], cg = gt[2 * h + j],
                     og = gt[3 * h + j];
        const double c = cache.cell.at(t, j);
        const double tc = std::tanh(c);
        const double cprev = t ? cache.cell.at(t - 1, j) : 0.0;
        const double dh = dh_out.at(t, j) + dh_next[j];
        const double dog = dh * tc;
        const double dc = dh * og * (1.0 - tc * tc) + dc_next[j];
        da[j] = dc * cg * ig * (1.0 - ig);
        da[h + j] = dc * cprev * fg * (1.0 - fg);
        da[2 * h + j] = dc * ig * (1.0 - cg * cg);
        da[3 * h + j] = dog * og * (1.0 - og);
        dc_next[j] = dc * fg;
      }
      const double* xt = &cache.input.data[t * in];
      const double* hprev = t ? &cache.hidden.data[(t - 1) * h] : nullptr;
      std::fill(dh_next.begin(), dh_next.end(), 0.0);
      double* dxt = &dx.data[t * in];
      for (std::size_t g = 0; g < 4 * h; ++g) {
        const double a = da[g];
        if (a == 0.0) continue;
        bias.grad[g] += a;
        double* gwi = &w_input.grad.data[g * in];
        const double* wi = &w_input.value.data[g * in];
        for (std::size_t i = 0; i < in; ++i) {
          gwi[i] += a * xt[i];
          dxt[i] += a * wi[i];
        }
        if (hprev) {
          double* gwh = &w_hidden.grad.data[g * h];
          const double* wh = &w_hidden.value.data[g * h];
          for (std::size_t j = 0; j < h; ++j) {
            gwh[j] += a * hprev[j];
            dh_next[j] += a * wh[j];
          }
        }
      }
    }
    return dx;
  }

  ParamList params() { return {&w_input, &w_hidden, &bias}; }

  Parameter w_input;
  Parameter w_hidden;
  Parameter bias;
};

inline Tensor reverse_time(const Tensor& x) {
  Tensor y(x.shape);
  const std::size_t steps = x.dim(0), width = x.dim(1);
  for (std::size_t t = 0; t < steps; ++t)
    std::copy_n(&x.data[(steps - 1 - t) * width], width, &y.data[t * width]);
  return y;
}

// Forward LSTM and time-reversed LSTM, concatenated per step: [T, 2H].
class BiLstm {
 public:
  struct Cache {
    Lstm::Cache forward;
    Lstm::Cache backward;
  };

  BiLstm() = default;
  BiLstm(const std::string& prefix, std::size_t in, std::size_t hidden)
      : fwd(prefix + ".fwd", in, hidden), bwd(prefix + ".bwd", in, hidden) {}

  std::size_t hidden_size() const { return fwd.hidden_size(); }
  std::size_t in_features() const { return fwd.in_features(); }
  std::size_t out_features() const { return 2 * hidden_size(); }

  void init(std::mt19937_64& rng) {
    fwd.init(rng);
    bwd.init(rng);
  }

  Tensor forward(const Tensor& x, Cache* cache = nullptr) const {
    Lstm::Cache* cf = cache ? &cache->forward : nullptr;
    Lstm::Cache* cb = cache ? &cache->backward : nullptr;
    const Tensor yf = fwd.forward(x, cf);
    const Tensor yb = bwd.forward(reverse_time(x), cb);
    const std::size_t steps = x.dim(0), h = hidden_size();
    Tensor y({steps, 2 * h});
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t j = 0; j < h; ++j) {
        y.at(t, j) = yf.at(t, j);
        y.at(t, h + j) = yb.at(steps - 1 - t, j);
      }
    return y;
  }

  Tensor backward(const Tensor& dy, const Cache& cache) {
    const std::size_t steps = dy.dim(0), h = hidden_size();
    Tensor dyf({steps, h}), dyb({steps, h});
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t j = 0; j < h; ++j) {
        dyf.at(t, j) = dy.at(t, j);
        dyb.at(steps - 1 - t, j) = dy.at(t, h + j);
      }
    Tensor dx = fwd.backward(dyf, cache.forward);
    const Tensor dxb = reverse_time(bwd.backward(dyb, cache.backward));
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dxb[i];
    return dx;
  }

  ParamList params() {
    ParamList out = fwd.params();
    for (auto* p : bwd.params()) out.push_back(p);
    return out;
  }

  Lstm fwd;
  Lstm bwd;
};

// Stride-1 "same" convolution over a [C_in, H, W] input with an odd kernel.
class Conv2d {
 public:
  struct Cache {
    Tensor input;
  };

  Conv2d() = default;
  Conv2d(const std::string& prefix, std::size_t in_channels,
         std::size_t out_channels, std::size_t kernel_h, std::size_t kernel_w)
      : weight(prefix + ".weight", {out_channels, in_channels, kernel_h, kernel_w}),
        bias(prefix + ".bias", {out_channels}) {
    if (kernel_h % 2 == 0 || kernel_w % 2 == 0)
      throw Error(ErrorCode::kInvalidArgument, "conv kernel sides must be odd");
  }

  std::size_t in_channels() const { return weight.value.dim(1); }
  std::size_t out_channels() const { return weight.value.dim(0); }
  std::size_t kernel_h() const { return weight.value.dim(2); }
  std::size_t kernel_w() const { return weight.value.dim(3); }

  void init(std::mt19937_64& rng) {
    const std::size_t fan_in = in_channels() * kernel_h() * kernel_w();
    init_uniform(weight.value, fan_in, rng);
    init_uniform(bias.value, fan_in, rng);
  }

  Tensor forward(const Tensor& x, Cache* cache = nullptr) const {
    if (x.rank() != 3 || x.dim(0) != in_channels())
      throw Error(ErrorCode::kShapeMismatch,
                  "conv2d expects [" + std::to_string(in_channels()) +
                      ", H, W], got " + shape_string(x.shape));
    const long hgt = static_cast<long>(x.dim(1)), wid = static_cast<long>(x.dim(2));
    const long kh = static_cast<long>(kernel_h()), kw = static_cast<long>(kernel_w());
    const long ph = kh / 2, pw = kw / 2;
    Tensor y({out_channels(), x.dim(1), x.dim(2)});
    for (std::size_t o = 0; o < out_channels(); ++o) {
      for (long r = 0; r < hgt; ++r)
        for (long c = 0; c < wid; ++c) y.at(o, r, c) = bias.value[o];
      for (std::size_t i = 0; i < in_channels(); ++i)
        for (long a = 0; a < kh; ++a)
          for (long b = 0; b < kw; ++b) {
            const double w = weight.value.data[((o * in_channels() + i) * kh + a) * kw + b];
            for (long r = std::max(0L, ph - a); r < std::min(hgt, hgt + ph - a); ++r) {
              const long sr = r + a - ph;
              const long c_lo = std::max(0L, pw - b);
              const long c_hi = std::min(wid, wid + pw - b);
              double* yrow = &y.data[(o * hgt + r) * wid];
              const double* xrow = &x.data[(i * hgt + sr) * wid];
              for (long c = c_lo; c < c_hi; ++c) yrow[c] += w * xrow[c + b - pw];
            }
          }
    }
    if (cache) cache->input = x;
    return y;
  }

  Tensor backward(const Tensor& dy, const Cache& cache) {
    const Tensor& x = cache.input;
    const long hgt = static_cast<long>(x.dim(1)), wid = static_cast<long>(x.dim(2));
    const long kh = static_cast<long>(kernel_h()), kw = static_cast<long>(kernel_w());
    const long ph = kh / 2, pw = kw / 2;
    Tensor dx(x.shape);
    for (std::size_t o = 0; o < out_channels(); ++o) {
      for (long r = 0; r < hgt; ++r)
        for (long c = 0; c < wid; ++c) bias.grad[o] += dy.at(o, r, c);
      for (std::size_t i = 0; i < in_channels(); ++i)
        for (long a = 0; a < kh; ++a)
          for (long b = 0; b < kw; ++b) {
            const std::size_t widx = ((o * in_channels() + i) * kh + a) * kw + b;
            const double w = weight.value.data[widx];
            double gw = 0.0;
            for (long r = std::max(0L, ph - a); r < std::min(hgt, hgt + ph - a); ++r) {
              const long sr = r + a - ph;
              const long c_lo = std::max(0L, pw - b);
              const long c_hi = std::min(wid, wid + pw - b);
              const double* dyrow = &dy.data[(o * hgt + r) * wid];
              const double* xrow = &x.data[(i * hgt + sr) * wid];
              double* dxrow = &dx.data[(i * hgt + sr) * wid];
              for (long c = c_lo; c < c_hi; ++c) {
                gw += dyrow[c] * xrow[c + b - pw];
                dxrow[c + b - pw] += dyrow[c] * w;
              }
            }
            weight.grad.data[widx] += gw;
          }
    }
    return dx;
  }

  ParamList params() { return {&weight, &bias}; }

  Parameter weight;
  Parameter bias;
};

// Non-overlapping max pooling over a [C, H, W] input; trailing rows/columns
// that do not fill a window are dropped.
class MaxPool2d {
 public:
  struct Cache {
    std::vector<std::size_t> input_shape;
    std::vector<std::size_t> argmax;
  };

  MaxPool2d() = default;
  MaxPool2d(std::size_t pool_h, std::size_t pool_w) : pool_h_(pool_h), pool_w_(pool_w) {
    if (pool_h == 0 || pool_w == 0)
      throw Error(ErrorCode::kInvalidArgument, "pool window must be positive");
  }

  std::size_t pool_h() const { return pool_h_; }
  std::size_t pool_w() const { return pool_w_; }

  Tensor forward(const Tensor& x, Cache* cache = nullptr) const {
    if (x.rank() != 3 || x.dim(1) < pool_h_ || x.dim(2) < pool_w_)
      throw Error(ErrorCode::kShapeMismatch,
                  "max pool window larger than input " + shape_string(x.shape));
    const std::size_t ch = x.dim(0), oh = x.dim(1) / pool_h_, ow = x.dim(2) / pool_w_;
    Tensor y({ch, oh, ow});
    std::vector<std::size_t> arg(y.size());
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t q = 0; q < ow; ++q) {
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          for (std::size_t a = 0; a < pool_h_; ++a)
            for (std::size_t b = 0; b < pool_w_; ++b) {
              const std::size_t idx =
                  (c * x.dim(1) + r * pool_h_ + a) * x.dim(2) + q * pool_w_ + b;
              if (x.data[idx] > best) {
                best = x.data[idx];
                best_idx = idx;
              }
            }
          const std::size_t out_idx = (c * oh + r) * ow + q;
          y.data[out_idx] = best;
          arg[out_idx] = best_idx;
        }
    if (cache) *cache = Cache{x.shape, std::move(arg)};
    return y;
  }

  Tensor backward(const Tensor& dy, const Cache& cache) const {
    Tensor dx(cache.input_shape);
    for (std::size_t i = 0; i < dy.size(); ++i) dx.data[cache.argmax[i]] += dy.data[i];
    return dx;
  }

 private:
  std::size_t pool_h_ = 2;
  std::size_t pool_w_ = 2;
};

}  // namespace stemscribe::nn
