#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "stemscribe/audio_io.hpp"
#include "stemscribe/dsp.hpp"
#include "stemscribe/error.hpp"
#include "stemscribe/midi.hpp"
#include "stemscribe/nn/checkpoint.hpp"
#include "stemscribe/nn/layers.hpp"
#include "stemscribe/nn/loss.hpp"
#include "stemscribe/nn/optim.hpp"
#include "stemscribe/piano_roll.hpp"

namespace stemscribe::transcription {

inline constexpr std::size_t kSegmentFrames = 512;
inline constexpr std::size_t kSegmentHop = 256;
inline constexpr double kClipSeconds = 180.0;
inline constexpr double kDefaultThreshold = 0.5;
inline constexpr double kDefaultOnsetTolerance = 0.05;

// Log value of a silent CQT bin; used when padding feature grids.
inline double silence_level() { return log_magnitude(0.0, LogMagParams{}); }

// ---- features and segmentation ----------------------------------------------

// frames x bins log-CQT grid.
using Features = Grid<double>;

inline Features log_cqt(const Waveform& audio, const CqtConfig& cfg) {
  Waveform w = downmix(audio);
  if (w.sample_rate != cfg.sample_rate) w = resample(w, cfg.sample_rate);
  return log_magnitude(cqt(w, cfg), LogMagParams{});
}

struct SegmentedFeatures {
  std::vector<nn::Tensor> segments;  // each [bins, window]
  std::size_t window = kSegmentFrames;
  std::size_t hop = kSegmentHop;
  std::size_t source_length = 0;
};

inline std::size_t segment_count(std::size_t frames, std::size_t window = kSegmentFrames,
                                 std::size_t hop = kSegmentHop) {
  const std::size_t padded = std::max(frames, window);
  return (padded - window) / hop + 1;
}

// Smallest length >= frames whose segments cover every frame.
inline std::size_t covering_length(std::size_t frames, std::size_t window = kSegmentFrames,
                                   std::size_t hop = kSegmentHop) {
  if (frames <= window) return window;
  return window + (frames - window + hop - 1) / hop * hop;
}

inline Features pad_frames(const Features& f, std::size_t frames) {
  Features out(std::max(frames, f.frames), f.bins, silence_level());
  std::copy(f.data.begin(), f.data.end(), out.data.begin());
  return out;
}

// Windows of `window` frames every `hop` frames. Inputs shorter than one
// window are padded with silence; a tail shorter than a hop is not covered
// (pad with covering_length first when every frame matters).
inline SegmentedFeatures segment(const Features& features, std::size_t window = kSegmentFrames,
                                 std::size_t hop = kSegmentHop) {
  if (window == 0 || hop == 0)
    throw Error(ErrorCode::kInvalidArgument, "segment window and hop must be positive");
  SegmentedFeatures out;
  out.window = window;
  out.hop = hop;
  out.source_length = features.frames;
  const Features padded = pad_frames(features, window);
  const std::size_t count = segment_count(features.frames, window, hop);
  for (std::size_t s = 0; s < count; ++s) {
    nn::Tensor seg({padded.bins, window});
    for (std::size_t t = 0; t < window; ++t)
      for (std::size_t b = 0; b < padded.bins; ++b) seg.at(b, t) = padded.at(s * hop + t, b);
    out.segments.push_back(std::move(seg));
  }
  return out;
}

// Matching [window, 88] targets cut from a roll.
inline std::vector<nn::Tensor> segment_roll(const PianoRoll& roll,
                                            std::size_t window = kSegmentFrames,
                                            std::size_t hop = kSegmentHop) {
  std::vector<nn::Tensor> out;
  const std::size_t count = segment_count(roll.frames, window, hop);
  for (std::size_t s = 0; s < count; ++s) {
    nn::Tensor seg({window, kPitchRows});
    for (std::size_t t = 0; t < window && s * hop + t < roll.frames; ++t)
      for (std::size_t r = 0; r < kPitchRows; ++r) seg.at(t, r) = roll.at(r, s * hop + t);
    out.push_back(std::move(seg));
  }
  return out;
}

// ---- MIDI rasterization -----------------------------------------------------

// Note covers frames [round(start/dt), round(end/dt)), at least one frame.
inline PianoRoll rasterize(const std::vector<midi::NoteEvent>& notes, const FrameTiming& timing,
                           std::size_t frames) {
  const double dt = timing.time_per_frame();
  PianoRoll roll(frames, dt);
  for (const auto& n : notes) {
    if (n.pitch < kLowestPitch || n.pitch > kHighestPitch)
      throw Error(ErrorCode::kPitchOutOfRange, "pitch " + std::to_string(n.pitch));
    const auto a = static_cast<long long>(std::llround(n.start / dt));
    const auto b = std::max(static_cast<long long>(std::llround(n.end / dt)), a + 1);
    const auto row = static_cast<std::size_t>(n.pitch - kLowestPitch);
    for (long long t = std::max(0LL, a); t < b && t < static_cast<long long>(frames); ++t)
      roll.at(row, static_cast<std::size_t>(t)) = 1;
  }
  return roll;
}

struct TrainingPair {
  SegmentedFeatures features;
  PianoRoll roll;
};

// Audio and notes padded or truncated to `seconds`, both on the CQT frame
// grid: ceil(seconds * rate / hop) frames.
inline TrainingPair build_training_pair(const Waveform& audio,
                                        const std::vector<midi::NoteEvent>& notes,
                                        const CqtConfig& cfg, double seconds = kClipSeconds,
                                        std::size_t window = kSegmentFrames,
                                        std::size_t hop = kSegmentHop) {
  Waveform w = downmix(audio);
  if (w.sample_rate != cfg.sample_rate) w = resample(w, cfg.sample_rate);
  const auto samples = static_cast<std::size_t>(std::llround(seconds * cfg.sample_rate));
  w.mono().resize(samples, 0.0);
  const Features f = log_magnitude(cqt(w, cfg), LogMagParams{});
  TrainingPair pair;
  pair.features = segment(f, window, hop);
  pair.roll = rasterize(notes, FrameTiming{int(cfg.hop), cfg.sample_rate}, f.frames);
  return pair;
}

inline TrainingPair build_training_pair(const Waveform& audio, const midi::ParsedMidi& midi,
                                        const CqtConfig& cfg, double seconds = kClipSeconds) {
  return build_training_pair(audio, midi.notes, cfg, seconds);
}

// ---- model ------------------------------------------------------------------

struct AmtConfig {
  std::size_t bins = 84;
  std::size_t conv_maps = 16;
  std::size_t kernel = 3;
  std::size_t pool = 2;  // over frequency only
  std::size_t hidden = 64;
  double threshold = kDefaultThreshold;

  std::size_t pooled_bins() const { return bins / pool; }

  void validate() const {
    if (bins == 0 || conv_maps == 0 || hidden == 0 || pool == 0 || pool > bins)
      throw Error(ErrorCode::kInvalidArgument, "AMT sizes must be positive");
    if (kernel % 2 == 0) throw Error(ErrorCode::kInvalidArgument, "AMT kernel must be odd");
    if (!(threshold > 0.0 && threshold < 1.0))
      throw Error(ErrorCode::kInvalidArgument, "threshold must lie in (0, 1)");
  }
};

inline constexpr double kAmtTag = 2.0;

// segment [bins, T] -> batch norm over bins -> conv (tanh) -> max-pool over
// frequency -> time-major reshape -> BiLSTM -> dense + sigmoid -> [T, 88].
class AmtModel {
 public:
  struct Cache {
    nn::BatchNorm::Cache norm;
    nn::Conv2d::Cache conv;
    nn::Tensor activation;
    nn::MaxPool2d::Cache pool;
    nn::BiLstm::Cache lstm;
    nn::Dense::Cache head;
    nn::Tensor probs;
  };

  AmtModel() : AmtModel(AmtConfig{}) {}
  explicit AmtModel(const AmtConfig& cfg)
      : cfg_(cfg),
        norm_("amt.norm", cfg.bins),
        conv_("amt.conv", 1, cfg.conv_maps, cfg.kernel, cfg.kernel),
        pool_(cfg.pool, 1),
        lstm_("amt.lstm", cfg.conv_maps * cfg.pooled_bins(), cfg.hidden),
        head_("amt.head", 2 * cfg.hidden, kPitchRows) {
    cfg.validate();
  }

  const AmtConfig& config() const { return cfg_; }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    conv_.init(rng);
    lstm_.init(rng);
    head_.init(rng);
  }

  nn::Tensor forward(const nn::Tensor& segment, bool training, Cache* cache = nullptr) {
    if (segment.rank() != 2 || segment.dim(0) != cfg_.bins)
      throw Error(ErrorCode::kShapeMismatch, "AMT expects [" + std::to_string(cfg_.bins) +
                                                 ", T], got " + nn::shape_string(segment.shape));
    const std::size_t steps = segment.dim(1), bins = cfg_.bins;
    nn::Tensor rows({steps, bins});
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t b = 0; b < bins; ++b) rows.at(t, b) = segment.at(b, t);
    const nn::Tensor normed = norm_.forward(rows, training, cache ? &cache->norm : nullptr);
    nn::Tensor image({1, bins, steps});
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t b = 0; b < bins; ++b) image.at(0, b, t) = normed.at(t, b);
    const nn::Tensor act = nn::tanh(conv_.forward(image, cache ? &cache->conv : nullptr));
    const nn::Tensor pooled = pool_.forward(act, cache ? &cache->pool : nullptr);
    const nn::Tensor seq = to_sequence(pooled);
    const nn::Tensor h = lstm_.forward(seq, cache ? &cache->lstm : nullptr);
    nn::Tensor probs = nn::sigmoid(head_.forward(h, cache ? &cache->head : nullptr));
    if (cache) {
      cache->activation = act;
      cache->probs = probs;
    }
    return probs;
  }

  void backward(const nn::Tensor& dprobs, const Cache& cache) {
    const nn::Tensor dh = head_.backward(nn::sigmoid_backward(cache.probs, dprobs), cache.head);
    const nn::Tensor dseq = lstm_.backward(dh, cache.lstm);
    const nn::Tensor dpooled = from_sequence(dseq, cache.pool.input_shape);
    const nn::Tensor dact = pool_.backward(dpooled, cache.pool);
    const nn::Tensor dimage = conv_.backward(nn::tanh_backward(cache.activation, dact), cache.conv);
    const std::size_t bins = cfg_.bins, steps = dimage.dim(2);
    nn::Tensor drows({steps, bins});
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t b = 0; b < bins; ++b) drows.at(t, b) = dimage.at(0, b, t);
    norm_.backward(drows, cache.norm);
  }

  nn::ParamList params() {
    nn::ParamList out = norm_.params();
    for (auto* p : conv_.params()) out.push_back(p);
    for (auto* p : lstm_.params()) out.push_back(p);
    for (auto* p : head_.params()) out.push_back(p);
    return out;
  }

  nn::TensorList to_tensors() {
    nn::TensorList out = nn::snapshot(params());
    nn::Tensor meta({7});
    meta.data = {kAmtTag,          double(cfg_.bins),   double(cfg_.conv_maps),
                 double(cfg_.kernel), double(cfg_.pool), double(cfg_.hidden),
                 cfg_.threshold};
    out.push_back({"meta.config", meta});
    out.push_back({"amt.norm.running_mean", norm_.running_mean});
    out.push_back({"amt.norm.running_var", norm_.running_var});
    return out;
  }

  static AmtModel from_tensors(const nn::TensorList& tensors) {
    const nn::Tensor& meta = nn::require_tensor(tensors, "meta.config");
    if (meta.size() != 7 || meta[0] != kAmtTag)
      throw Error(ErrorCode::kUnsupportedCodec, "checkpoint is not an AMT model");
    AmtConfig cfg;
    cfg.bins = std::size_t(meta[1]);
    cfg.conv_maps = std::size_t(meta[2]);
    cfg.kernel = std::size_t(meta[3]);
    cfg.pool = std::size_t(meta[4]);
    cfg.hidden = std::size_t(meta[5]);
    cfg.threshold = meta[6];
    AmtModel m(cfg);
    nn::restore(m.params(), tensors);
    m.norm_.running_mean = nn::require_tensor(tensors, "amt.norm.running_mean");
    m.norm_.running_var = nn::require_tensor(tensors, "amt.norm.running_var");
    return m;
  }

  void save(const std::filesystem::path& path) { nn::save_checkpoint(path, to_tensors()); }
  static AmtModel load(const std::filesystem::path& path) {
    return from_tensors(nn::load_checkpoint(path));
  }

 private:
  // [maps, fbins, T] -> [T, maps * fbins]
  static nn::Tensor to_sequence(const nn::Tensor& x) {
    const std::size_t maps = x.dim(0), fb = x.dim(1), steps = x.dim(2);
    nn::Tensor y({steps, maps * fb});
    for (std::size_t m = 0; m < maps; ++m)
      for (std::size_t f = 0; f < fb; ++f)
        for (std::size_t t = 0; t < steps; ++t) y.at(t, m * fb + f) = x.at(m, f, t);
    return y;
  }

  static nn::Tensor from_sequence(const nn::Tensor& y, const std::vector<std::size_t>& pre_pool) {
    const std::size_t maps = pre_pool[0], fb = y.dim(1) / maps, steps = y.dim(0);
    nn::Tensor x({maps, fb, steps});
    for (std::size_t m = 0; m < maps; ++m)
      for (std::size_t f = 0; f < fb; ++f)
        for (std::size_t t = 0; t < steps; ++t) x.at(m, f, t) = y.at(t, m * fb + f);
    return x;
  }

  AmtConfig cfg_;
  nn::BatchNorm norm_;
  nn::Conv2d conv_;
  nn::MaxPool2d pool_;
  nn::BiLstm lstm_;
  nn::Dense head_;
};

inline nn::Tensor amt_forward(AmtModel& model, const nn::Tensor& segment) {
  return model.forward(segment, false);
}

// ---- stitching --------------------------------------------------------------

// Averages overlapping [window, 88] predictions into [source_length, 88];
// frames no segment reached stay 0.
inline nn::Tensor stitch(const std::vector<nn::Tensor>& outputs, std::size_t hop,
                         std::size_t source_length) {
  nn::Tensor sum({source_length, kPitchRows});
  std::vector<double> count(source_length, 0.0);
  for (std::size_t s = 0; s < outputs.size(); ++s) {
    const nn::Tensor& o = outputs[s];
    if (o.rank() != 2 || o.dim(1) != kPitchRows)
      throw Error(ErrorCode::kShapeMismatch, "segment output must be [T, 88]");
    for (std::size_t t = 0; t < o.dim(0); ++t) {
      const std::size_t g = s * hop + t;
      if (g >= source_length) break;
      for (std::size_t r = 0; r < kPitchRows; ++r) sum.at(g, r) += o.at(t, r);
      count[g] += 1.0;
    }
  }
  for (std::size_t t = 0; t < source_length; ++t)
    if (count[t] > 0.0)
      for (std::size_t r = 0; r < kPitchRows; ++r) sum.at(t, r) /= count[t];
  return sum;
}

inline PianoRoll threshold_probs(const nn::Tensor& probs, double frame_time,
                                 double threshold = kDefaultThreshold) {
  PianoRoll roll(probs.dim(0), frame_time);
  for (std::size_t t = 0; t < probs.dim(0); ++t)
    for (std::size_t r = 0; r < kPitchRows; ++r) roll.at(r, t) = probs.at(t, r) > threshold;
  return roll;
}

inline PianoRoll stitch_and_threshold(const std::vector<nn::Tensor>& outputs, std::size_t hop,
                                      std::size_t source_length, double frame_time,
                                      double threshold = kDefaultThreshold) {
  return threshold_probs(stitch(outputs, hop, source_length), frame_time, threshold);
}

// Features -> roll covering every input frame.
inline PianoRoll transcribe_features(AmtModel& model, const Features& features,
                                     double frame_time, std::size_t window = kSegmentFrames,
                                     std::size_t hop = kSegmentHop) {
  const std::size_t n = features.frames;
  const SegmentedFeatures segs = segment(pad_frames(features, covering_length(n, window, hop)),
                                         window, hop);
  std::vector<nn::Tensor> outputs;
  outputs.reserve(segs.segments.size());
  for (const auto& s : segs.segments) outputs.push_back(amt_forward(model, s));
  return stitch_and_threshold(outputs, hop, n, frame_time, model.config().threshold);
}

inline PianoRoll transcribe(const Waveform& audio, AmtModel& model, const CqtConfig& cfg,
                            std::size_t window = kSegmentFrames, std::size_t hop = kSegmentHop) {
  return transcribe_features(model, log_cqt(audio, cfg), cfg.frame_time(), window, hop);
}

// ---- metrics ----------------------------------------------------------------

struct PrfScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  bool precision_undefined = false;  // TP + FP = 0
  bool recall_undefined = false;     // TP + FN = 0
};

inline double f1_score(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

inline PrfScores prf(std::size_t tp, std::size_t fp, std::size_t fn) {
  PrfScores s;
  s.tp = tp;
  s.fp = fp;
  s.fn = fn;
  s.precision_undefined = tp + fp == 0;
  s.recall_undefined = tp + fn == 0;
  s.precision = s.precision_undefined ? 0.0 : double(tp) / double(tp + fp);
  s.recall = s.recall_undefined ? 0.0 : double(tp) / double(tp + fn);
  s.f1 = f1_score(s.precision, s.recall);
  return s;
}

// Cell counts over frames where either roll has an active note.
inline PrfScores frame_metrics(const PianoRoll& pred, const PianoRoll& truth) {
  expect_same_shape(pred, truth);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t t = 0; t < truth.frames; ++t) {
    if (!pred.frame_active(t) && !truth.frame_active(t)) continue;
    for (std::size_t r = 0; r < kPitchRows; ++r) {
      const bool p = pred.at(r, t), g = truth.at(r, t);
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
    }
  }
  return prf(tp, fp, fn);
}

// Per pitch row, the frames where an active run begins.
inline std::vector<std::vector<std::size_t>> onsets(const PianoRoll& roll) {
  std::vector<std::vector<std::size_t>> out(kPitchRows);
  for (std::size_t r = 0; r < kPitchRows; ++r)
    for (std::size_t t = 0; t < roll.frames; ++t)
      if (roll.at(r, t) && (t == 0 || !roll.at(r, t - 1))) out[r].push_back(t);
  return out;
}

// Greedy earliest-first one-to-one matching of same-pitch onsets within
// `tolerance` seconds.
inline PrfScores onset_metrics(const PianoRoll& pred, const PianoRoll& truth,
                               double tolerance = kDefaultOnsetTolerance) {
  if (std::abs(pred.frame_time - truth.frame_time) > 1e-12 * truth.frame_time)
    throw Error(ErrorCode::kShapeMismatch, "piano rolls use different frame times");
  const auto po = onsets(pred), to = onsets(truth);
  const double dt = truth.frame_time;
  std::size_t tp = 0, np = 0, nt = 0;
  for (std::size_t r = 0; r < kPitchRows; ++r) {
    np += po[r].size();
    nt += to[r].size();
    std::vector<bool> used(po[r].size(), false);
    for (std::size_t g : to[r]) {
      for (std::size_t k = 0; k < po[r].size(); ++k) {
        if (used[k]) continue;
        const double gap = std::abs(double(po[r][k]) - double(g)) * dt;
        if (gap <= tolerance + 1e-12) {
          used[k] = true;
          ++tp;
          break;
        }
      }
    }
  }
  return prf(tp, np - tp, nt - tp);
}

// ---- training ---------------------------------------------------------------

struct AmtExample {
  nn::Tensor segment;  // [bins, T]
  nn::Tensor target;   // [T, 88]
};

inline std::vector<AmtExample> make_examples(const TrainingPair& pair) {
  const auto targets = segment_roll(pair.roll, pair.features.window, pair.features.hop);
  std::vector<AmtExample> out;
  for (std::size_t s = 0; s < pair.features.segments.size(); ++s)
    out.push_back({pair.features.segments[s], targets[s]});
  return out;
}

inline double amt_batch_loss(AmtModel& model, const std::vector<AmtExample>& data,
                             std::span<const std::size_t> batch,
                             const nn::FocalLossParams& focal, bool accumulate) {
  double total = 0.0;
  for (std::size_t idx : batch) {
    const AmtExample& ex = data.at(idx);
    AmtModel::Cache cache;
    const nn::Tensor probs = model.forward(ex.segment, true, &cache);
    nn::LossResult loss = nn::focal_loss(probs, ex.target, focal);
    total += loss.value;
    if (accumulate) {
      for (double& g : loss.grad.data) g /= static_cast<double>(batch.size());
      model.backward(loss.grad, cache);
    }
  }
  return total / static_cast<double>(batch.size());
}

inline nn::TrainResult train_amt(AmtModel& model, const std::vector<AmtExample>& data,
                                 const nn::FocalLossParams& focal, const nn::TrainOptions& opts,
                                 const std::function<void(std::size_t, double)>& on_epoch = {}) {
  focal.validate();
  return nn::optimize(
      model.params(), data.size(),
      [&](std::span<const std::size_t> batch) {
        return amt_batch_loss(model, data, batch, focal, true);
      },
      opts, on_epoch);
}

}  // namespace stemscribe::transcription
