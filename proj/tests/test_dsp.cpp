#include "stemscribe/dsp.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <complex>
#include <random>

#include "test_util.hpp"

using namespace stemscribe;

namespace {

// O(N^2) DFT oracle, independent of FftPlan.
std::vector<std::complex<double>> naive_dft(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t t = 0; t < n; ++t)
      out[k] += x[t] * std::exp(std::complex<double>(0.0, -2.0 * M_PI * double(k * t) / n));
  return out;
}

double rel_l2_interior(const std::vector<double>& a, const std::vector<double>& b,
                       std::size_t margin) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = margin; i + margin < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += a[i] * a[i];
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST(Fft, MatchesNaiveDftPowerOfTwoAndOdd) {
  for (std::size_t n : {8u, 64u, 12u, 15u}) {
    const auto x = testutil::white_noise(n, n);
    std::vector<cplx> buf(x.begin(), x.end());
    FftPlan(n).forward(buf);
    const auto ref = naive_dft(x);
    for (std::size_t k = 0; k < n; ++k) EXPECT_LT(std::abs(buf[k] - ref[k]), 1e-10);
  }
}

TEST(Stft, ConstantSignalRectangularWindow) {
  const Waveform w(std::vector<double>(512, 1.0), 8000);
  const auto s = stft(w, {512, 512, Window::kRectangular});
  ASSERT_EQ(s.frames(), 1u);
  ASSERT_EQ(s.num_bins(), 257u);
  EXPECT_NEAR(std::abs(s.bins.at(0, 0)), 512.0, 1e-9);
  for (std::size_t f = 1; f < 257; ++f) EXPECT_NEAR(std::abs(s.bins.at(0, f)), 0.0, 1e-9);
}

TEST(Stft, ZeroSignalGivesZeroSpectrogram) {
  const auto s = stft(Waveform(std::vector<double>(2000, 0.0), 8000), {});
  for (const auto& v : s.bins.data) EXPECT_EQ(std::abs(v), 0.0);
  const auto back = istft(s);
  for (double v : back.mono()) EXPECT_EQ(v, 0.0);
}

TEST(Stft, BinCenteredSineMatchesOracle) {
  const int rate = 8192;
  std::vector<double> x(512);
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = std::sin(2.0 * M_PI * (16.0 * rate / 512.0) * i / rate);
  const auto s = stft(Waveform(x, rate), {512, 512, Window::kRectangular});
  const auto oracle = naive_dft(x);
  std::size_t arg = 0;
  for (std::size_t f = 0; f < s.num_bins(); ++f) {
    EXPECT_LT(std::abs(s.bins.at(0, f) - oracle[f]), 1e-8);
    if (std::abs(s.bins.at(0, f)) > std::abs(s.bins.at(0, arg))) arg = f;
  }
  EXPECT_EQ(arg, 16u);
}

TEST(Stft, FrameCountCoversSignal) {
  const StftConfig cfg{512, 128, Window::kHann};
  EXPECT_EQ(stft_frame_count(512, cfg), 1u);
  EXPECT_EQ(stft_frame_count(100, cfg), 1u);
  EXPECT_EQ(stft_frame_count(1024, cfg), 5u);
  EXPECT_EQ(stft_frame_count(1025, cfg), 6u);
  EXPECT_THROW(stft(Waveform(std::vector<double>{}, 8000), cfg), Error);
}

TEST(Stft, NoiseRoundTrip) {
  const auto x = testutil::white_noise(44100, 3);
  const Waveform w(x, 44100);
  const auto start = std::chrono::steady_clock::now();
  const auto back = istft(stft(w, {512, 128, Window::kHann}));
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ASSERT_EQ(back.length(), x.size());
  EXPECT_LT(rel_l2_interior(x, back.mono(), 512), 1e-6);
  EXPECT_LT(secs, 1.0);
}

TEST(Stft, ToneRoundTrip) {
  std::vector<double> x(20000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.3 * std::sin(2.0 * M_PI * 440.0 * i / 16000.0);
  const auto back = istft(stft(Waveform(x, 16000), {1024, 256, Window::kHann}));
  EXPECT_LT(rel_l2_interior(x, back.mono(), 1024), 1e-6);
}

TEST(Stft, NonColaConfigRejected) {
  const auto s = stft(Waveform(testutil::white_noise(4000, 1), 8000),
                      {512, 384, Window::kHann});
  try {
    istft(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotCola);
  }
  EXPECT_TRUE((StftConfig{512, 128, Window::kHann}.satisfies_cola()));
  EXPECT_TRUE((StftConfig{512, 512, Window::kRectangular}.satisfies_cola()));
  EXPECT_FALSE((StftConfig{512, 256, Window::kHann}.satisfies_cola()));
  EXPECT_THROW((StftConfig{512, 0, Window::kHann}.validate()), Error);
  EXPECT_THROW((StftConfig{512, 513, Window::kHann}.validate()), Error);
}

TEST(Stft, Linearity) {
  const auto x = testutil::white_noise(3000, 11);
  const auto y = testutil::white_noise(3000, 12);
  const double a = 0.7, b = -1.3;
  std::vector<double> z(x.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = a * x[i] + b * y[i];
  const StftConfig cfg{};
  const auto sx = stft(Waveform(x, 8000), cfg);
  const auto sy = stft(Waveform(y, 8000), cfg);
  const auto sz = stft(Waveform(z, 8000), cfg);
  for (std::size_t i = 0; i < sz.bins.data.size(); ++i) {
    const cplx expect = a * sx.bins.data[i] + b * sy.bins.data[i];
    EXPECT_LE(std::abs(sz.bins.data[i] - expect), 1e-9 * std::max(1.0, std::abs(expect)));
  }
}

TEST(Stft, ParsevalPerFrame) {
  const auto x = testutil::white_noise(2048, 21);
  const StftConfig cfg{512, 128, Window::kHann};
  const auto s = stft(Waveform(x, 8000), cfg);
  const auto win = make_window(cfg.window, cfg.fft_size);
  for (std::size_t t = 0; t < s.frames(); ++t) {
    double time_energy = 0.0;
    for (std::size_t i = 0; i < 512; ++i) {
      const std::size_t idx = t * cfg.hop + i;
      const double v = idx < x.size() ? x[idx] * win[i] : 0.0;
      time_energy += v * v;
    }
    // One-sided spectrum: interior bins stand for two conjugate bins.
    double freq_energy = 0.0;
    for (std::size_t f = 0; f < s.num_bins(); ++f) {
      const double m2 = std::norm(s.bins.at(t, f));
      freq_energy += (f == 0 || f == 256) ? m2 : 2.0 * m2;
    }
    freq_energy /= 512.0;
    EXPECT_NEAR(freq_energy / time_energy, 1.0, 1e-6);
  }
}

TEST(LogMagnitude, PointValues) {
  const LogMagParams p{1e-10, 1.0};
  EXPECT_NEAR(log_magnitude(1.0, p), 0.0, 1e-9);
  EXPECT_NEAR(log_magnitude(std::sqrt(10.0), p), 10.0, 1e-9);
  EXPECT_NEAR(log_magnitude(0.0, p), -100.0, 1e-9);
}

TEST(LogMagnitude, MonotoneAndBoundedBelow) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> mag(0.0, 10.0);
  std::uniform_real_distribution<double> ref(0.01, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    const LogMagParams p{1e-8, ref(rng)};
    const double a = mag(rng), b = mag(rng);
    const double lo = std::min(a, b), hi = std::max(a, b);
    EXPECT_LE(log_magnitude(lo, p), log_magnitude(hi, p));
    const double bound =
        10.0 * (std::log10(p.a_min) - std::log10(std::max(p.a_min, p.ref * p.ref)));
    EXPECT_GE(log_magnitude(lo, p), bound - 1e-12);
  }
  MagnitudeSpectrogram zero(3, 4, 0.0);
  EXPECT_THROW(log_magnitude(zero, {0.0, 1.0}), Error);
  for (double v : log_magnitude(zero).data) EXPECT_TRUE(std::isfinite(v));
}

namespace {

// Independent CQT oracle: inner product of the centered segment with a
// Hann-weighted complex exponential at the bin frequency.
double cqt_oracle(const std::vector<double>& x, int rate, double freq, double q,
                  long center) {
  const long len = static_cast<long>(std::ceil(q * rate / freq));
  std::complex<double> acc = 0.0;
  double wsum = 0.0;
  for (long n = 0; n < len; ++n) {
    const double w = std::pow(std::sin(M_PI * (n + 0.5) / len), 2);
    wsum += w;
    const long idx = center - len / 2 + n;
    if (idx < 0 || idx >= static_cast<long>(x.size())) continue;
    acc += x[idx] * w * std::exp(std::complex<double>(0.0, -2.0 * M_PI * freq * n / rate));
  }
  return 2.0 * std::abs(acc) / wsum;
}

std::vector<double> tone(double freq, int rate, std::size_t len) {
  std::vector<double> x(len);
  for (std::size_t i = 0; i < len; ++i) x[i] = std::sin(2.0 * M_PI * freq * i / rate);
  return x;
}

}  // namespace

TEST(Cqt, DefaultConfigShapeAndFrequencies) {
  const CqtConfig cfg;
  EXPECT_EQ(cfg.n_bins, 84u);
  for (std::size_t k = 0; k + 1 < cfg.n_bins; ++k)
    EXPECT_NEAR(cfg.center_frequency(k + 1) / cfg.center_frequency(k),
                std::pow(2.0, 1.0 / 12.0), 1e-12);
  EXPECT_DOUBLE_EQ(cfg.center_frequency(0), 27.5);
  EXPECT_NEAR(cfg.center_frequency(48), 440.0, 1e-9);
}

TEST(Cqt, ToneAtFminAndOctaveMatchOracle) {
  const CqtConfig cfg;
  const CqtKernel kernel(cfg);
  for (auto [freq, expect_bin] : {std::pair{27.5, 0ul}, std::pair{55.0, 12ul}}) {
    const auto x = tone(freq, cfg.sample_rate, 2 * cfg.sample_rate);
    const auto c = kernel(Waveform(x, cfg.sample_rate));
    ASSERT_EQ(c.bins, 84u);
    const std::size_t t = c.frames / 2;
    std::size_t arg = 0, oracle_arg = 0;
    double oracle_best = -1.0;
    for (std::size_t k = 0; k < c.bins; ++k) {
      const double o = cqt_oracle(x, cfg.sample_rate, cfg.center_frequency(k),
                                  cfg.q_factor(), static_cast<long>(t * cfg.hop));
      EXPECT_NEAR(c.at(t, k), o, 1e-9 * std::max(1.0, o));
      if (o > oracle_best) {
        oracle_best = o;
        oracle_arg = k;
      }
      if (c.at(t, k) > c.at(t, arg)) arg = k;
    }
    EXPECT_EQ(oracle_arg, expect_bin);
    EXPECT_EQ(arg, expect_bin);
    EXPECT_NEAR(c.at(t, expect_bin), 1.0, 0.02);
  }
}

TEST(Cqt, ZeroSignalAndFrameCount) {
  const CqtConfig cfg;
  const auto c = cqt(Waveform(std::vector<double>(22050, 0.0), 22050), cfg);
  EXPECT_EQ(c.frames, cqt_frame_count(22050, 512));
  EXPECT_EQ(c.frames, 44u);
  for (double v : c.data) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(cqt_frame_count(180 * 22050, 512), 7752u);
}

TEST(Cqt, TopBinAboveNyquistRejected) {
  CqtConfig cfg;
  cfg.sample_rate = 6000;  // 3520 Hz edge > 3000 Hz Nyquist
  try {
    CqtKernel k(cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAboveNyquist);
  }
}
