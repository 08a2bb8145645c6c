#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <string>
#include <vector>

#include "stemscribe/audio_io.hpp"
#include "stemscribe/error.hpp"
#include "stemscribe/fft.hpp"

namespace stemscribe {

// Row-major frames x bins grid.
template <typename T>
struct Grid {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(std::size_t n_frames, std::size_t n_bins, T fill = T{})
      : frames(n_frames), bins(n_bins), data(n_frames * n_bins, fill) {}

  T& at(std::size_t t, std::size_t f) { return data[t * bins + f]; }
  const T& at(std::size_t t, std::size_t f) const { return data[t * bins + f]; }

  bool same_shape(const auto& other) const {
    return frames == other.frames && bins == other.bins;
  }
};

using MagnitudeSpectrogram = Grid<double>;

enum class Window { kHann, kRectangular };

inline std::string to_string(Window w) {
  return w == Window::kHann ? "hann" : "rectangular";
}

inline Window window_from_string(const std::string& name) {
  if (name == "hann") return Window::kHann;
  if (name == "rectangular" || name == "rect") return Window::kRectangular;
  throw Error(ErrorCode::kInvalidArgument, "unknown window '" + name + "'");
}

// Periodic window of length n.
inline std::vector<double> make_window(Window kind, std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (kind == Window::kHann)
    for (std::size_t i = 0; i < n; ++i)
      w[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) /
                                  static_cast<double>(n));
  return w;
}

struct StftConfig {
  std::size_t fft_size = 512;
  std::size_t hop = 128;
  Window window = Window::kHann;

  std::size_t num_bins() const { return fft_size / 2 + 1; }

  void validate() const {
    if (fft_size == 0 || hop == 0 || hop > fft_size)
      throw Error(ErrorCode::kInvalidArgument,
                  "require 0 < hop <= fft_size");
  }

  // Weighted overlap-add condition for analysis + synthesis with the same
  // window: sum_m w^2(n - m*hop) must be constant in n.
  bool satisfies_cola(double tol = 1e-9) const {
    validate();
    const auto w = make_window(window, fft_size);
    double lo = HUGE_VAL, hi = 0.0;
    for (std::size_t r = 0; r < hop; ++r) {
      double s = 0.0;
      for (std::size_t n = r; n < fft_size; n += hop) s += w[n] * w[n];
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
    return lo > 0.0 && (hi - lo) <= tol * hi;
  }
};

struct ComplexSpectrogram {
  Grid<cplx> bins;
  StftConfig config;
  int sample_rate = 0;
  std::size_t signal_length = 0;

  std::size_t frames() const { return bins.frames; }
  std::size_t num_bins() const { return bins.bins; }

  MagnitudeSpectrogram magnitude() const {
    MagnitudeSpectrogram m(bins.frames, bins.bins);
    for (std::size_t i = 0; i < bins.data.size(); ++i)
      m.data[i] = std::abs(bins.data[i]);
    return m;
  }
};

// Frames start at t*hop with no centering; the last frame is zero-padded so
// every input sample lands in at least one frame.
inline std::size_t stft_frame_count(std::size_t len, const StftConfig& cfg) {
  if (len <= cfg.fft_size) return 1;
  return 1 + (len - cfg.fft_size + cfg.hop - 1) / cfg.hop;
}

inline ComplexSpectrogram stft(const Waveform& input, const StftConfig& cfg) {
  cfg.validate();
  const Waveform w = downmix(input);
  if (w.length() == 0)
    throw Error(ErrorCode::kInvalidArgument, "stft of an empty waveform");
  const auto& x = w.mono();
  const std::size_t n = cfg.fft_size;
  const std::size_t frames = stft_frame_count(x.size(), cfg);
  if (frames == 0 || (frames - 1) * cfg.hop + n < x.size())
    throw Error(ErrorCode::kInvalidArgument, "fft_size exceeds padded signal");

  const FftPlan plan(n);
  const auto window = make_window(cfg.window, n);
  ComplexSpectrogram s;
  s.config = cfg;
  s.sample_rate = w.sample_rate;
  s.signal_length = x.size();
  s.bins = Grid<cplx>(frames, cfg.num_bins());
  std::vector<cplx> buf(n);
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t start = t * cfg.hop;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t idx = start + i;
      buf[i] = idx < x.size() ? x[idx] * window[i] : 0.0;
    }
    plan.forward(buf);
    for (std::size_t f = 0; f < s.bins.bins; ++f) s.bins.at(t, f) = buf[f];
  }
  return s;
}

// Weighted overlap-add inverse. Each output sample is divided by the summed
// squared window that covered it. Near the signal ends that sum falls toward
// zero, so it is floored at a fraction of its steady-state value; otherwise a
// modified spectrogram would blow up at the edges. Interior samples
// reconstruct exactly.
inline constexpr double kWolaFloor = 0.1;

inline Waveform istft(const ComplexSpectrogram& s) {
  const auto& cfg = s.config;
  cfg.validate();
  if (!cfg.satisfies_cola())
    throw Error(ErrorCode::kNotCola,
                to_string(cfg.window) + " window, fft " +
                    std::to_string(cfg.fft_size) + ", hop " +
                    std::to_string(cfg.hop));
  const std::size_t n = cfg.fft_size;
  if (s.num_bins() != cfg.num_bins())
    throw Error(ErrorCode::kShapeMismatch, "bin count does not match fft size");

  const FftPlan plan(n);
  const auto window = make_window(cfg.window, n);
  const std::size_t span = s.frames() == 0 ? 0 : (s.frames() - 1) * cfg.hop + n;
  std::vector<double> acc(std::max(span, s.signal_length), 0.0);
  std::vector<double> norm(acc.size(), 0.0);
  std::vector<cplx> buf(n);
  for (std::size_t t = 0; t < s.frames(); ++t) {
    for (std::size_t f = 0; f < s.num_bins(); ++f) buf[f] = s.bins.at(t, f);
    // Hermitian completion of the one-sided spectrum.
    for (std::size_t f = s.num_bins(); f < n; ++f) buf[f] = std::conj(buf[n - f]);
    plan.inverse(buf);
    const std::size_t start = t * cfg.hop;
    for (std::size_t i = 0; i < n; ++i) {
      acc[start + i] += buf[i].real() / static_cast<double>(n) * window[i];
      norm[start + i] += window[i] * window[i];
    }
  }
  double steady = 0.0;
  for (std::size_t i = 0; i < n; i += cfg.hop) steady += window[i] * window[i];
  const double floor = kWolaFloor * steady;
  std::vector<double> out(s.signal_length, 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = acc[i] / std::max(norm[i], floor);
  return Waveform(std::move(out), s.sample_rate);
}

struct LogMagParams {
  double a_min = 1e-10;
  double ref = 1.0;
};

// 10 * (log10(max(S^2, a_min)) - log10(max(a_min, r^2))), elementwise.
inline double log_magnitude(double s, const LogMagParams& p) {
  return 10.0 * (std::log10(std::max(s * s, p.a_min)) -
                 std::log10(std::max(p.a_min, p.ref * p.ref)));
}

inline Grid<double> log_magnitude(const MagnitudeSpectrogram& s,
                                  const LogMagParams& p = {}) {
  if (!(p.a_min > 0.0) || !(p.ref > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "a_min and r must be positive");
  Grid<double> out(s.frames, s.bins);
  for (std::size_t i = 0; i < s.data.size(); ++i)
    out.data[i] = log_magnitude(s.data[i], p);
  return out;
}

struct CqtConfig {
  std::size_t n_bins = 84;
  std::size_t bins_per_octave = 12;
  double f_min = 27.5;
  std::size_t hop = 512;
  int sample_rate = 22050;

  double center_frequency(std::size_t k) const {
    return f_min * std::pow(2.0, static_cast<double>(k) /
                                     static_cast<double>(bins_per_octave));
  }
  double q_factor() const {
    return 1.0 / (std::pow(2.0, 1.0 / static_cast<double>(bins_per_octave)) - 1.0);
  }
  double frame_time() const {
    return static_cast<double>(hop) / sample_rate;
  }

  void validate() const {
    if (n_bins == 0 || bins_per_octave == 0 || hop == 0 || f_min <= 0.0 ||
        sample_rate <= 0)
      throw Error(ErrorCode::kInvalidArgument, "CQT parameters must be positive");
    const double top = f_min * std::pow(2.0, static_cast<double>(n_bins) /
                                                 static_cast<double>(bins_per_octave));
    if (top >= 0.5 * sample_rate)
      throw Error(ErrorCode::kAboveNyquist,
                  "top bin edge " + std::to_string(top) + " Hz");
  }
};

inline std::size_t cqt_frame_count(std::size_t len, std::size_t hop) {
  return (len + hop - 1) / hop;
}

// Direct complex-kernel constant-Q filterbank. Kernel k is a Hann-windowed
// complex exponential at the bin's center frequency, Q*sr/f_k samples long,
// centered on t*hop. Output magnitudes are scaled so a unit-amplitude sinusoid
// at a bin center reads close to 1.
class CqtKernel {
 public:
  explicit CqtKernel(const CqtConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    const double q = cfg.q_factor();
    kernels_.resize(cfg.n_bins);
    for (std::size_t k = 0; k < cfg.n_bins; ++k) {
      const double fk = cfg.center_frequency(k);
      const auto len = static_cast<std::size_t>(
          std::ceil(q * cfg.sample_rate / fk));
      auto& kern = kernels_[k];
      kern.resize(len);
      double wsum = 0.0;
      for (std::size_t n = 0; n < len; ++n) {
        const double w = 0.5 - 0.5 * std::cos(2.0 * M_PI * (n + 0.5) / len);
        wsum += w;
        kern[n] = w * std::polar(1.0, -2.0 * M_PI * fk * static_cast<double>(n) /
                                          cfg.sample_rate);
      }
      for (auto& c : kern) c *= 2.0 / wsum;
    }
  }

  const CqtConfig& config() const { return cfg_; }
  const std::vector<cplx>& kernel(std::size_t k) const { return kernels_[k]; }

  MagnitudeSpectrogram operator()(const Waveform& input) const {
    const Waveform w = downmix(input);
    if (w.sample_rate != cfg_.sample_rate)
      throw Error(ErrorCode::kInvalidArgument,
                  "CQT expects " + std::to_string(cfg_.sample_rate) + " Hz input");
    const auto& x = w.mono();
    const std::size_t frames = cqt_frame_count(x.size(), cfg_.hop);
    MagnitudeSpectrogram out(frames, cfg_.n_bins);
    const long n_in = static_cast<long>(x.size());
    for (std::size_t t = 0; t < frames; ++t) {
      const long center = static_cast<long>(t * cfg_.hop);
      for (std::size_t k = 0; k < cfg_.n_bins; ++k) {
        const auto& kern = kernels_[k];
        const long len = static_cast<long>(kern.size());
        const long start = center - len / 2;
        const long lo = std::max(0L, -start);
        const long hi = std::min(len, n_in - start);
        cplx acc = 0.0;
        for (long n = lo; n < hi; ++n)
          acc += x[static_cast<std::size_t>(start + n)] * kern[static_cast<std::size_t>(n)];
        out.at(t, k) = std::abs(acc);
      }
    }
    return out;
  }

 private:
  CqtConfig cfg_;
  std::vector<std::vector<cplx>> kernels_;
};

inline MagnitudeSpectrogram cqt(const Waveform& w, const CqtConfig& cfg) {
  return CqtKernel(cfg)(w);
}

}  // namespace stemscribe
