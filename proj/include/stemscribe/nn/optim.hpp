#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "stemscribe/nn/tensor.hpp"

namespace stemscribe::nn {

class Sgd {
 public:
  explicit Sgd(double lr) : lr_(lr) {}

  void step(const ParamList& params) {
    for (auto* p : params)
      for (std::size_t i = 0; i < p->value.size(); ++i)
        p->value[i] -= lr_ * p->grad[i];
  }

 private:
  double lr_;
};

class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  explicit Adam(Options opts) : opts_(opts) {}

  void step(const ParamList& params) {
    if (m_.size() != params.size()) {
      m_.clear();
      v_.clear();
      for (auto* p : params) {
        m_.emplace_back(p->value.size(), 0.0);
        v_.emplace_back(p->value.size(), 0.0);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& p = *params[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g;
        v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g * g;
        p.value[i] -= opts_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opts_.eps);
      }
    }
  }

 private:
  Options opts_;
  long t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

enum class OptimizerKind { kAdam, kSgd };

struct TrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 10;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::uint64_t seed = 0;
  bool shuffle = true;
};

struct TrainResult {
  double initial_loss = 0.0;
  std::vector<double> trace;  // mean batch loss per epoch
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(std::size_t epoch)
      : Error(ErrorCode::kDivergence,
              "non-finite loss at epoch " + std::to_string(epoch)),
        epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

// Objective: double(std::span<const std::size_t> batch). It must return the
// mean loss over the batch and add its gradient into every parameter's grad.
// on_epoch(epoch, loss) runs after each epoch (checkpointing hooks).
template <typename Objective>
TrainResult optimize(const ParamList& params, std::size_t n_examples,
                     Objective&& objective, const TrainOptions& opts,
                     const std::function<void(std::size_t, double)>& on_epoch = {}) {
  if (n_examples == 0)
    throw Error(ErrorCode::kInvalidArgument, "empty training set");
  const std::size_t batch = std::max<std::size_t>(1, opts.batch_size);
  std::vector<std::size_t> order(n_examples);
  std::iota(order.begin(), order.end(), std::size_t{0});

  auto batches = [&](auto&& fn) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t start = 0; start < n_examples; start += batch) {
      const std::size_t len = std::min(batch, n_examples - start);
      zero_grads(params);
      sum += fn(std::span<const std::size_t>(order.data() + start, len));
      ++count;
    }
    return sum / static_cast<double>(count);
  };

  TrainResult result;
  result.initial_loss = batches([&](auto idx) { return objective(idx); });
  zero_grads(params);
  if (!std::isfinite(result.initial_loss)) throw DivergenceError(0);

  Adam adam({opts.learning_rate});
  Sgd sgd(opts.learning_rate);
  std::mt19937_64 rng(opts.seed);
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    if (opts.shuffle) std::shuffle(order.begin(), order.end(), rng);
    const double loss = batches([&](auto idx) {
      const double l = objective(idx);
      if (!std::isfinite(l)) throw DivergenceError(epoch);
      if (opts.optimizer == OptimizerKind::kAdam)
        adam.step(params);
      else
        sgd.step(params);
      return l;
    });
    result.trace.push_back(loss);
    if (on_epoch) on_epoch(epoch, loss);
  }
  zero_grads(params);
  return result;
}

}  // namespace stemscribe::nn
