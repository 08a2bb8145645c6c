#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "stemscribe/error.hpp"

namespace stemscribe {

// Multi-channel audio buffer. Channel-major: channels[c][n].
struct Waveform {
  std::vector<std::vector<double>> channels;
  int sample_rate = 44100;

  Waveform() = default;
  Waveform(std::vector<double> mono, int rate)
      : channels{std::move(mono)}, sample_rate(rate) {}
  Waveform(std::vector<std::vector<double>> chans, int rate)
      : channels(std::move(chans)), sample_rate(rate) {}

  std::size_t num_channels() const { return channels.size(); }
  std::size_t length() const {
    return channels.empty() ? 0 : channels.front().size();
  }
  double duration() const {
    return static_cast<double>(length()) / sample_rate;
  }

  const std::vector<double>& mono() const { return channels.at(0); }
  std::vector<double>& mono() { return channels.at(0); }

  void validate() const {
    if (sample_rate <= 0)
      throw Error(ErrorCode::kInvalidArgument, "sample rate must be positive");
    for (const auto& ch : channels) {
      if (ch.size() != length())
        throw Error(ErrorCode::kShapeMismatch, "channel lengths differ");
      for (double v : ch)
        if (!std::isfinite(v))
          throw Error(ErrorCode::kInvalidArgument, "non-finite sample");
    }
  }
};

// Channel mean. A mono input is returned unchanged.
inline Waveform downmix(const Waveform& w) {
  if (w.num_channels() <= 1) return w;
  std::vector<double> out(w.length(), 0.0);
  for (const auto& ch : w.channels)
    for (std::size_t n = 0; n < out.size(); ++n) out[n] += ch[n];
  const double scale = 1.0 / static_cast<double>(w.num_channels());
  for (double& v : out) v *= scale;
  return Waveform(std::move(out), w.sample_rate);
}

enum class SampleFormat { kPcm16, kFloat32 };

namespace wav_detail {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

inline std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
         std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}
inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xFF);
}
inline void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(v & 0xFF);
  out.push_back((v >> 8) & 0xFF);
}
inline void put_tag(std::vector<unsigned char>& out, const char* tag) {
  out.insert(out.end(), tag, tag + 4);
}

}  // namespace wav_detail

inline std::int16_t quantize_pcm16(double v) {
  double scaled = std::round(v * 32768.0);
  scaled = std::clamp(scaled, -32768.0, 32767.0);
  return static_cast<std::int16_t>(scaled);
}

// Decodes an in-memory RIFF/WAVE image (PCM16 or float32).
inline Waveform decode_wav(const std::vector<unsigned char>& bytes) {
  using namespace wav_detail;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw Error(ErrorCode::kMalformedHeader, "missing RIFF/WAVE signature");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::uint32_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t len = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16 || body + len > bytes.size())
        throw Error(ErrorCode::kMalformedHeader, "short fmt chunk");
      const unsigned char* f = bytes.data() + body;
      format = read_u16(f);
      channels = read_u16(f + 2);
      rate = read_u32(f + 4);
      bits = read_u16(f + 14);
      if (format == kFormatExtensible) {
        if (len < 26)
          throw Error(ErrorCode::kMalformedHeader, "short extensible fmt");
        format = read_u16(f + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      // Some writers leave a placeholder length; clamp to what is present.
      data_len = static_cast<std::uint32_t>(
          std::min<std::size_t>(len, bytes.size() - body));
      break;
    }
    pos = body + len + (len & 1u);
  }
  if (!have_fmt) throw Error(ErrorCode::kMalformedHeader, "no fmt chunk");
  if (data == nullptr) throw Error(ErrorCode::kMalformedHeader, "no data chunk");
  if (channels == 0 || rate == 0)
    throw Error(ErrorCode::kMalformedHeader, "zero channels or rate");

  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool f32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !f32)
    throw Error(ErrorCode::kUnsupportedCodec,
                "format " + std::to_string(format) + " with " +
                    std::to_string(bits) + " bits");

  const std::size_t frame_bytes = std::size_t(channels) * (bits / 8);
  const std::size_t frames = data_len / frame_bytes;
  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  w.channels.assign(channels, std::vector<double>(frames));
  for (std::size_t n = 0; n < frames; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + n * frame_bytes + c * (bits / 8);
      if (pcm16) {
        const auto v = static_cast<std::int16_t>(read_u16(p));
        w.channels[c][n] = v / 32768.0;
      } else {
        const std::uint32_t raw = read_u32(p);
        float v;
        std::memcpy(&v, &raw, sizeof v);
        w.channels[c][n] = v;
      }
    }
  }
  return w;
}

inline std::vector<unsigned char> encode_wav(
    const Waveform& w, SampleFormat fmt = SampleFormat::kPcm16) {
  using namespace wav_detail;
  w.validate();
  const std::uint16_t channels =
      static_cast<std::uint16_t>(std::max<std::size_t>(1, w.num_channels()));
  const std::uint16_t bits = fmt == SampleFormat::kPcm16 ? 16 : 32;
  const std::uint32_t block = channels * (bits / 8);
  const std::uint32_t data_len =
      static_cast<std::uint32_t>(w.length() * block);

  std::vector<unsigned char> out;
  out.reserve(44 + data_len);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_len);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, fmt == SampleFormat::kPcm16 ? kFormatPcm : kFormatFloat);
  put_u16(out, channels);
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(w.sample_rate) * block);
  put_u16(out, static_cast<std::uint16_t>(block));
  put_u16(out, bits);
  put_tag(out, "data");
  put_u32(out, data_len);
  for (std::size_t n = 0; n < w.length(); ++n) {
    for (std::size_t c = 0; c < w.num_channels(); ++c) {
      const double v = w.channels[c][n];
      if (fmt == SampleFormat::kPcm16) {
        put_u16(out, static_cast<std::uint16_t>(quantize_pcm16(v)));
      } else {
        const float f = static_cast<float>(v);
        std::uint32_t raw;
        std::memcpy(&raw, &f, sizeof raw);
        put_u32(out, raw);
      }
    }
  }
  return out;
}

inline Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kFileNotFound, path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return decode_wav(bytes);
}

inline void write_wav(const Waveform& w, const std::filesystem::path& path,
                      SampleFormat fmt = SampleFormat::kPcm16) {
  const auto bytes = encode_wav(w, fmt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kUnwritablePath, path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kUnwritablePath, path.string());
}

// Polyphase windowed-sinc resampler. The lowpass cutoff sits at the lower of
// the two Nyquist frequencies; taps are Kaiser-windowed.
class Resampler {
 public:
  static constexpr double kZeroCrossings = 32.0;
  static constexpr double kKaiserBeta = 8.6;

  Resampler(int source_rate, int target_rate)
      : source_rate_(source_rate), target_rate_(target_rate) {
    if (source_rate <= 0 || target_rate <= 0)
      throw Error(ErrorCode::kInvalidArgument, "sample rates must be positive");
    const long g = std::gcd(source_rate, target_rate);
    up_ = target_rate / g;
    down_ = source_rate / g;
    cutoff_ = std::min(1.0, static_cast<double>(up_) / down_);
    half_width_ = kZeroCrossings / cutoff_;
    taps_ = static_cast<long>(std::ceil(half_width_));
    if (up_ <= 1024) {
      table_.resize(static_cast<std::size_t>(up_));
      for (long p = 0; p < up_; ++p) {
        auto& row = table_[static_cast<std::size_t>(p)];
        row.resize(static_cast<std::size_t>(2 * taps_ + 1));
        for (long j = -taps_; j <= taps_; ++j)
          row[static_cast<std::size_t>(j + taps_)] =
              kernel(static_cast<double>(p) / up_ + j);
      }
    }
  }

  Waveform operator()(const Waveform& w) const {
    w.validate();
    if (w.sample_rate != source_rate_)
      throw Error(ErrorCode::kInvalidArgument, "rate differs from resampler");
    if (up_ == down_) {
      Waveform copy = w;
      copy.sample_rate = target_rate_;
      return copy;
    }
    const auto out_len = static_cast<std::size_t>(std::llround(
        static_cast<double>(w.length()) * target_rate_ / source_rate_));
    Waveform out;
    out.sample_rate = target_rate_;
    for (const auto& ch : w.channels) out.channels.push_back(process(ch, out_len));
    return out;
  }

 private:
  double kernel(double t) const {
    if (std::abs(t) > half_width_) return 0.0;
    const double x = cutoff_ * t;
    const double sinc =
        x == 0.0 ? 1.0 : std::sin(M_PI * x) / (M_PI * x);
    const double r = t / half_width_;
    const double win = std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(1.0 - r * r)) /
                       std::cyl_bessel_i(0.0, kKaiserBeta);
    return cutoff_ * sinc * win;
  }

  std::vector<double> process(const std::vector<double>& x,
                              std::size_t out_len) const {
    std::vector<double> y(out_len, 0.0);
    const long n_in = static_cast<long>(x.size());
    for (std::size_t n = 0; n < out_len; ++n) {
      const long long pos = static_cast<long long>(n) * down_;
      const long base = static_cast<long>(pos / up_);
      const long phase = static_cast<long>(pos % up_);
      // Output time relative to input sample k is (base - k) + phase/up.
      double acc = 0.0;
      const long k_lo = std::max(0L, base - taps_);
      const long k_hi = std::min(n_in - 1, base + taps_);
      for (long k = k_lo; k <= k_hi; ++k) {
        const long j = base - k;
        const double h =
            table_.empty()
                ? kernel(static_cast<double>(phase) / up_ + j)
                : table_[static_cast<std::size_t>(phase)]
                        [static_cast<std::size_t>(j + taps_)];
        acc += x[static_cast<std::size_t>(k)] * h;
      }
      y[n] = acc;
    }
    return y;
  }

  int source_rate_;
  int target_rate_;
  long up_ = 1;
  long down_ = 1;
  double cutoff_ = 1.0;
  double half_width_ = 0.0;
  long taps_ = 0;
  std::vector<std::vector<double>> table_;
};

inline Waveform resample(const Waveform& w, int target_rate) {
  if (target_rate <= 0)
    throw Error(ErrorCode::kInvalidArgument, "target rate must be positive");
  if (w.sample_rate == target_rate) return w;
  return Resampler(w.sample_rate, target_rate)(w);
}

}  // namespace stemscribe
