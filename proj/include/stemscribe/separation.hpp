#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "stemscribe/audio_io.hpp"
#include "stemscribe/dsp.hpp"
#include "stemscribe/error.hpp"
#include "stemscribe/nn/checkpoint.hpp"
#include "stemscribe/nn/layers.hpp"
#include "stemscribe/nn/loss.hpp"
#include "stemscribe/nn/optim.hpp"
#include "stemscribe/nn/tensor.hpp"

namespace stemscribe::separation {

// Frames x bins grid of values in [0, 1].
struct Mask {
  Grid<double> values;

  Mask() = default;
  explicit Mask(Grid<double> v) : values(std::move(v)) {}
  Mask(std::size_t frames, std::size_t bins, double fill) : values(frames, bins, fill) {}

  std::size_t frames() const { return values.frames; }
  std::size_t bins() const { return values.bins; }

  Mask complement() const {
    Mask out = *this;
    for (double& v : out.values.data) v = 1.0 - v;
    return out;
  }

  void validate() const {
    for (double v : values.data)
      if (!(v >= 0.0 && v <= 1.0))
        throw Error(ErrorCode::kInvalidArgument, "mask value outside [0, 1]");
  }
};

// ---- sources and remixing ---------------------------------------------------

struct SourceSet {
  Waveform vocals;
  Waveform bass;
  Waveform drums;
  Waveform other;

  std::vector<const Waveform*> stems() const { return {&vocals, &bass, &drums, &other}; }
  std::vector<Waveform*> stems() { return {&vocals, &bass, &drums, &other}; }

  void validate() const {
    for (const auto* s : stems()) {
      s->validate();
      if (s->num_channels() != vocals.num_channels() || s->length() != vocals.length() ||
          s->sample_rate != vocals.sample_rate)
        throw Error(ErrorCode::kShapeMismatch, "stems differ in length, channels or rate");
    }
  }
};

namespace detail {

inline Waveform sum(const std::vector<const Waveform*>& parts) {
  Waveform out = *parts.front();
  for (std::size_t k = 1; k < parts.size(); ++k)
    for (std::size_t c = 0; c < out.num_channels(); ++c)
      for (std::size_t n = 0; n < out.length(); ++n)
        out.channels[c][n] += parts[k]->channels[c][n];
  return out;
}

inline Waveform scaled(const Waveform& w, double g) {
  Waveform out = w;
  for (auto& ch : out.channels)
    for (double& v : ch) v *= g;
  return out;
}

}  // namespace detail

inline Waveform sum_accompaniment(const SourceSet& s) {
  s.validate();
  return detail::sum({&s.bass, &s.drums, &s.other});
}

inline Waveform sum_mixture(const SourceSet& s) {
  s.validate();
  return detail::sum({&s.vocals, &s.bass, &s.drums, &s.other});
}

struct Gains {
  double vocals = 1.0;
  double bass = 1.0;
  double drums = 1.0;
  double other = 1.0;

  std::vector<double> values() const { return {vocals, bass, drums, other}; }
};

inline constexpr double kMinRemixGain = 0.5;
inline constexpr double kMaxRemixGain = 1.25;

struct Remix {
  Waveform mixture;
  SourceSet targets;
};

// Each stem is drawn from a random set and scaled; without explicit gains
// they are sampled uniformly from [0.5, 1.25]. mixture = sum of targets.
inline Remix remix(const std::vector<SourceSet>& sets, std::optional<Gains> gains,
                   std::uint64_t seed) {
  if (sets.empty()) throw Error(ErrorCode::kInvalidArgument, "remix needs at least one source set");
  for (const auto& s : sets) {
    s.validate();
    if (s.vocals.length() != sets.front().vocals.length() ||
        s.vocals.num_channels() != sets.front().vocals.num_channels() ||
        s.vocals.sample_rate != sets.front().vocals.sample_rate)
      throw Error(ErrorCode::kShapeMismatch, "source sets differ in clip length or format");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, sets.size() - 1);
  std::uniform_real_distribution<double> gain(kMinRemixGain, kMaxRemixGain);
  Remix out;
  auto dst = out.targets.stems();
  const auto fixed = gains ? gains->values() : std::vector<double>{};
  for (std::size_t k = 0; k < dst.size(); ++k) {
    const SourceSet& src = sets[pick(rng)];
    const double g = gains ? fixed[k] : gain(rng);
    *dst[k] = detail::scaled(*src.stems()[k], g);
  }
  out.mixture = sum_mixture(out.targets);
  return out;
}

// ---- masking ----------------------------------------------------------------

inline ComplexSpectrogram apply_mask(const Mask& m, const ComplexSpectrogram& s) {
  if (!m.values.same_shape(s.bins))
    throw Error(ErrorCode::kShapeMismatch,
                "mask " + std::to_string(m.frames()) + "x" + std::to_string(m.bins()) +
                    " vs spectrogram " + std::to_string(s.frames()) + "x" +
                    std::to_string(s.num_bins()));
  ComplexSpectrogram out = s;
  for (std::size_t i = 0; i < out.bins.data.size(); ++i) out.bins.data[i] *= m.values.data[i];
  return out;
}

inline Mask ideal_ratio_mask(const MagnitudeSpectrogram& target,
                             const MagnitudeSpectrogram& residual) {
  if (!target.same_shape(residual))
    throw Error(ErrorCode::kShapeMismatch, "target and residual shapes differ");
  Mask m(target.frames, target.bins, 0.0);
  for (std::size_t i = 0; i < target.data.size(); ++i) {
    const double den = target.data[i] + residual.data[i];
    m.values.data[i] = den > 0.0 ? target.data[i] / den : 0.0;
  }
  return m;
}

// ---- model ------------------------------------------------------------------

struct SeparatorConfig {
  std::size_t bins = 257;
  std::size_t layers = 2;
  std::size_t hidden = 64;

  void validate() const {
    if (bins == 0 || layers == 0 || hidden == 0)
      throw Error(ErrorCode::kInvalidArgument, "separator sizes must be positive");
  }
};

inline constexpr double kSeparatorTag = 1.0;

// log-magnitude [T, F] -> batch norm -> LSTM stack -> dense + sigmoid -> mask [T, F].
class SeparatorModel {
 public:
  struct Cache {
    nn::BatchNorm::Cache norm;
    std::vector<nn::Lstm::Cache> lstm;
    nn::Dense::Cache head;
    nn::Tensor mask;
  };

  SeparatorModel() : SeparatorModel(SeparatorConfig{}) {}
  explicit SeparatorModel(const SeparatorConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    norm_ = nn::BatchNorm("sep.norm", cfg.bins);
    for (std::size_t l = 0; l < cfg.layers; ++l)
      lstm_.emplace_back("sep.lstm" + std::to_string(l), l == 0 ? cfg.bins : cfg.hidden,
                         cfg.hidden);
    head_ = nn::Dense("sep.head", cfg.hidden, cfg.bins);
  }

  const SeparatorConfig& config() const { return cfg_; }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& l : lstm_) l.init(rng);
    head_.init(rng);
  }

  nn::Tensor forward(const nn::Tensor& features, bool training, Cache* cache = nullptr) {
    if (features.rank() != 2 || features.dim(1) != cfg_.bins)
      throw Error(ErrorCode::kShapeMismatch, "separator expects [T, " +
                                                 std::to_string(cfg_.bins) + "], got " +
                                                 nn::shape_string(features.shape));
    if (cache) cache->lstm.resize(lstm_.size());
    nn::Tensor h = norm_.forward(features, training, cache ? &cache->norm : nullptr);
    for (std::size_t l = 0; l < lstm_.size(); ++l)
      h = lstm_[l].forward(h, cache ? &cache->lstm[l] : nullptr);
    nn::Tensor mask = nn::sigmoid(head_.forward(h, cache ? &cache->head : nullptr));
    if (cache) cache->mask = mask;
    return mask;
  }

  Mask predict(const Grid<double>& features) {
    nn::Tensor x({features.frames, features.bins});
    x.data = features.data;
    Mask m(features.frames, features.bins, 0.0);
    m.values.data = forward(x, false).data;
    return m;
  }

  // Accumulates parameter gradients from dL/dmask.
  void backward(const nn::Tensor& dmask, const Cache& cache) {
    nn::Tensor g = head_.backward(nn::sigmoid_backward(cache.mask, dmask), cache.head);
    for (std::size_t l = lstm_.size(); l-- > 0;) g = lstm_[l].backward(g, cache.lstm[l]);
    norm_.backward(g, cache.norm);
  }

  nn::ParamList params() {
    nn::ParamList out = norm_.params();
    for (auto& l : lstm_)
      for (auto* p : l.params()) out.push_back(p);
    for (auto* p : head_.params()) out.push_back(p);
    return out;
  }

  nn::TensorList to_tensors() {
    nn::TensorList out = nn::snapshot(params());
    nn::Tensor meta({4});
    meta.data = {kSeparatorTag, double(cfg_.bins), double(cfg_.layers), double(cfg_.hidden)};
    out.push_back({"meta.config", meta});
    out.push_back({"sep.norm.running_mean", norm_.running_mean});
    out.push_back({"sep.norm.running_var", norm_.running_var});
    return out;
  }

  static SeparatorModel from_tensors(const nn::TensorList& tensors) {
    const nn::Tensor& meta = nn::require_tensor(tensors, "meta.config");
    if (meta.size() != 4 || meta[0] != kSeparatorTag)
      throw Error(ErrorCode::kUnsupportedCodec, "checkpoint is not a separator model");
    SeparatorModel m(SeparatorConfig{std::size_t(meta[1]), std::size_t(meta[2]),
                                     std::size_t(meta[3])});
    nn::restore(m.params(), tensors);
    m.norm_.running_mean = nn::require_tensor(tensors, "sep.norm.running_mean");
    m.norm_.running_var = nn::require_tensor(tensors, "sep.norm.running_var");
    return m;
  }

  void save(const std::filesystem::path& path) { nn::save_checkpoint(path, to_tensors()); }
  static SeparatorModel load(const std::filesystem::path& path) {
    return from_tensors(nn::load_checkpoint(path));
  }

 private:
  SeparatorConfig cfg_;
  nn::BatchNorm norm_;
  std::vector<nn::Lstm> lstm_;
  nn::Dense head_;
};

inline Grid<double> separator_features(const ComplexSpectrogram& s) {
  return log_magnitude(s.magnitude(), LogMagParams{});
}

// ---- inference --------------------------------------------------------------

struct Separation {
  Waveform vocals;
  Waveform accompaniment;
  Mask mask;
};

inline Separation separate_with_mask(const ComplexSpectrogram& spec, const Mask& mask) {
  mask.validate();
  return {istft(apply_mask(mask, spec)), istft(apply_mask(mask.complement(), spec)), mask};
}

inline Separation separate(const Waveform& mixture, SeparatorModel& model,
                           const StftConfig& cfg) {
  const ComplexSpectrogram spec = stft(mixture, cfg);
  if (spec.num_bins() != model.config().bins)
    throw Error(ErrorCode::kShapeMismatch,
                "model expects " + std::to_string(model.config().bins) + " bins, STFT has " +
                    std::to_string(spec.num_bins()));
  return separate_with_mask(spec, model.predict(separator_features(spec)));
}

// ---- training ---------------------------------------------------------------

// mean |M X - V| + mean |(1 - M) X - A| over all TF-bins; gradient w.r.t. M.
inline nn::LossResult separator_loss(const nn::Tensor& mask, const MagnitudeSpectrogram& mix,
                                     const MagnitudeSpectrogram& vocals,
                                     const MagnitudeSpectrogram& accompaniment) {
  if (mask.size() != mix.data.size() || !mix.same_shape(vocals) ||
      !mix.same_shape(accompaniment))
    throw Error(ErrorCode::kShapeMismatch, "separator loss operands differ in shape");
  const std::size_t n = mix.data.size();
  nn::LossResult out{0.0, nn::Tensor(mask.shape)};
  auto sign = [](double v) { return v > 0.0 ? 1.0 : v < 0.0 ? -1.0 : 0.0; };
  for (std::size_t i = 0; i < n; ++i) {
    const double m = mask[i], x = mix.data[i];
    const double ev = m * x - vocals.data[i];
    const double ea = (1.0 - m) * x - accompaniment.data[i];
    out.value += std::abs(ev) + std::abs(ea);
    out.grad[i] = (sign(ev) * x - sign(ea) * x) / static_cast<double>(n);
  }
  out.value /= static_cast<double>(n);
  return out;
}

struct SeparatorExample {
  nn::Tensor features;  // [T, F] log-magnitude of the mixture
  MagnitudeSpectrogram mixture;
  MagnitudeSpectrogram vocals;
  MagnitudeSpectrogram accompaniment;
};

inline SeparatorExample make_example(const Waveform& mixture, const Waveform& vocals,
                                     const Waveform& accompaniment, const StftConfig& cfg) {
  const ComplexSpectrogram spec = stft(mixture, cfg);
  SeparatorExample ex;
  const Grid<double> f = separator_features(spec);
  ex.features = nn::Tensor({f.frames, f.bins});
  ex.features.data = f.data;
  ex.mixture = spec.magnitude();
  ex.vocals = stft(vocals, cfg).magnitude();
  ex.accompaniment = stft(accompaniment, cfg).magnitude();
  return ex;
}

inline SeparatorExample make_example(const SourceSet& set, const StftConfig& cfg) {
  return make_example(sum_mixture(set), downmix(set.vocals), sum_accompaniment(set), cfg);
}

// Mean loss over a batch; accumulates gradients when requested.
inline double separator_batch_loss(SeparatorModel& model,
                                   const std::vector<SeparatorExample>& data,
                                   std::span<const std::size_t> batch, bool accumulate) {
  double total = 0.0;
  for (std::size_t idx : batch) {
    const SeparatorExample& ex = data.at(idx);
    SeparatorModel::Cache cache;
    const nn::Tensor mask = model.forward(ex.features, true, &cache);
    nn::LossResult loss = separator_loss(mask, ex.mixture, ex.vocals, ex.accompaniment);
    total += loss.value;
    if (accumulate) {
      for (double& g : loss.grad.data) g /= static_cast<double>(batch.size());
      model.backward(loss.grad, cache);
    }
  }
  return total / static_cast<double>(batch.size());
}

inline nn::TrainResult train_separator(
    SeparatorModel& model, const std::vector<SeparatorExample>& data,
    const nn::TrainOptions& opts,
    const std::function<void(std::size_t, double)>& on_epoch = {}) {
  return nn::optimize(
      model.params(), data.size(),
      [&](std::span<const std::size_t> batch) {
        return separator_batch_loss(model, data, batch, true);
      },
      opts, on_epoch);
}

}  // namespace stemscribe::separation
