#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "stemscribe/audio_io.hpp"
#include "stemscribe/midi.hpp"
#include "stemscribe/separation.hpp"

// Deterministic fixture generators with known stems and piano rolls.
namespace stemscribe::synthetic {

inline double pitch_frequency(int midi_pitch) {
  return 440.0 * std::pow(2.0, (midi_pitch - 69) / 12.0);
}

inline std::vector<double> sine(double freq, double amp, std::size_t n, int rate,
                                double phase = 0.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i)
    x[i] = amp * std::sin(2.0 * M_PI * freq * static_cast<double>(i) / rate + phase);
  return x;
}

inline std::vector<double> noise(std::size_t n, std::uint64_t seed, double stddev) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> x(n);
  for (double& v : x) v = dist(rng);
  return x;
}

// Vocals: steady tone. Bass: low tone. Drums: decaying noise bursts.
// Other: quiet broadband noise.
inline separation::SourceSet source_set(std::uint64_t seed, int rate, std::size_t n) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> vf(300.0, 900.0), bf(50.0, 110.0),
      ph(0.0, 2.0 * M_PI);
  separation::SourceSet s;
  s.vocals = Waveform(sine(vf(rng), 0.5, n, rate, ph(rng)), rate);
  s.bass = Waveform(sine(bf(rng), 0.3, n, rate, ph(rng)), rate);
  auto burst = noise(n, rng(), 0.3);
  const std::size_t period = std::max<std::size_t>(1, static_cast<std::size_t>(rate / 4));
  for (std::size_t i = 0; i < n; ++i)
    burst[i] *= std::exp(-static_cast<double>(i % period) / (0.03 * rate));
  s.drums = Waveform(std::move(burst), rate);
  s.other = Waveform(noise(n, rng(), 0.05), rate);
  return s;
}

// Two-source clip for separator training: a tone against white noise.
struct ToneNoiseClip {
  Waveform mixture;
  Waveform tone;
  Waveform noise;
};

inline ToneNoiseClip tone_noise_clip(std::uint64_t seed, int rate, std::size_t n,
                                     double noise_std = 0.2) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> freq(rate * 0.03, rate * 0.2), amp(0.3, 0.8),
      ph(0.0, 2.0 * M_PI);
  ToneNoiseClip c;
  c.tone = Waveform(sine(freq(rng), amp(rng), n, rate, ph(rng)), rate);
  c.noise = Waveform(noise(n, rng(), noise_std), rate);
  std::vector<double> mix(n);
  for (std::size_t i = 0; i < n; ++i) mix[i] = c.tone.mono()[i] + c.noise.mono()[i];
  c.mixture = Waveform(std::move(mix), rate);
  return c;
}

// Harmonic tone (fundamental plus two partials) with short linear fades.
inline void add_note(std::vector<double>& out, int rate, int pitch, double start, double end,
                     double amp) {
  const double f0 = pitch_frequency(pitch);
  const auto a = static_cast<std::size_t>(std::max(0.0, std::ceil(start * rate)));
  const auto b = std::min(out.size(), static_cast<std::size_t>(std::ceil(end * rate)));
  const double fade = 0.005 * rate;
  for (std::size_t i = a; i < b; ++i) {
    const double t = static_cast<double>(i) / rate;
    const double env = std::min({1.0, (i - a + 1) / fade, (b - i) / fade});
    double v = 0.0;
    for (int h = 1; h <= 3; ++h)
      if (h * f0 < 0.45 * rate) v += std::sin(2.0 * M_PI * h * f0 * t) / h;
    out[i] += amp * env * v;
  }
}

struct NoteClip {
  Waveform audio;
  std::vector<midi::NoteEvent> notes;
};

// One note from `pitches` covering a random span of the clip.
inline NoteClip single_note_clip(std::uint64_t seed, const std::vector<int>& pitches, int rate,
                                 double seconds) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pitches.size() - 1);
  std::uniform_real_distribution<double> start(0.05 * seconds, 0.35 * seconds),
      len(0.3 * seconds, 0.55 * seconds), amp(0.3, 0.6);
  NoteClip c;
  const int p = pitches[pick(rng)];
  const double s = start(rng);
  const double e = std::min(seconds, s + len(rng));
  std::vector<double> x(static_cast<std::size_t>(seconds * rate), 0.0);
  add_note(x, rate, p, s, e, amp(rng));
  c.audio = Waveform(std::move(x), rate);
  c.notes.push_back({p, s, e, 100});
  return c;
}

// Random polyphonic clip: up to max_notes notes, no same-pitch overlap.
inline NoteClip polyphonic_clip(std::uint64_t seed, int rate, double seconds,
                                std::size_t max_notes = 6, int low = 48, int high = 84) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> count(1, max_notes);
  std::uniform_int_distribution<int> pitch(low, high);
  std::uniform_real_distribution<double> start(0.0, 0.8 * seconds), len(0.1, 0.5 * seconds);
  NoteClip c;
  std::vector<double> x(static_cast<std::size_t>(seconds * rate), 0.0);
  const std::size_t n = count(rng);
  for (std::size_t k = 0; k < n; ++k) {
    const int p = pitch(rng);
    const double s = start(rng);
    const double e = std::min(seconds, s + len(rng));
    bool clash = false;
    for (const auto& o : c.notes)
      if (o.pitch == p && s < o.end && o.start < e) clash = true;
    if (clash) continue;
    add_note(x, rate, p, s, e, 0.2);
    c.notes.push_back({p, s, e, 100});
  }
  c.audio = Waveform(std::move(x), rate);
  return c;
}

}  // namespace stemscribe::synthetic
