#pragma once

#include <cstdint>
#include <vector>

#include "stemscribe/separation.hpp"
#include "stemscribe/synthetic.hpp"
#include "stemscribe/transcription.hpp"

// Small training problems that converge in seconds on one core.
namespace stemscribe::synthetic {

struct AmtTask {
  CqtConfig cqt;
  transcription::AmtConfig model;
  std::size_t window = 64;
  std::size_t hop = 32;
  std::vector<transcription::AmtExample> train;
  std::vector<transcription::Features> held_out_features;
  std::vector<PianoRoll> held_out_rolls;
};

// Single harmonic notes from a four-pitch vocabulary, three octaves of CQT.
inline AmtTask amt_task(std::uint64_t seed, std::size_t clips = 128, double seconds = 2.0) {
  AmtTask task;
  task.cqt.n_bins = 36;
  task.cqt.f_min = 130.8128;
  task.model.bins = task.cqt.n_bins;
  task.model.conv_maps = 4;
  task.model.hidden = 16;
  const std::vector<int> pitches{60, 64, 67, 72};
  const std::size_t n_train = clips * 3 / 4;
  for (std::size_t i = 0; i < clips; ++i) {
    const auto clip = single_note_clip(seed + i, pitches, task.cqt.sample_rate, seconds);
    const auto pair = transcription::build_training_pair(clip.audio, clip.notes, task.cqt,
                                                         seconds, task.window, task.hop);
    if (i < n_train) {
      for (auto& ex : transcription::make_examples(pair)) task.train.push_back(std::move(ex));
    } else {
      Waveform audio = clip.audio;
      audio.mono().resize(static_cast<std::size_t>(std::llround(seconds * audio.sample_rate)));
      task.held_out_features.push_back(transcription::log_cqt(audio, task.cqt));
      task.held_out_rolls.push_back(pair.roll);
    }
  }
  return task;
}

// Frame scores pooled over every held-out clip.
inline transcription::PrfScores held_out_frame_scores(transcription::AmtModel& model,
                                                      const AmtTask& task) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < task.held_out_rolls.size(); ++i) {
    const PianoRoll& truth = task.held_out_rolls[i];
    const PianoRoll pred = transcription::transcribe_features(
        model, task.held_out_features[i], truth.frame_time, task.window, task.hop);
    const auto s = transcription::frame_metrics(pred, truth);
    tp += s.tp;
    fp += s.fp;
    fn += s.fn;
  }
  return transcription::prf(tp, fp, fn);
}

inline nn::TrainOptions amt_task_options(std::uint64_t seed) {
  nn::TrainOptions o;
  o.epochs = 100;
  o.batch_size = 8;
  o.learning_rate = 3e-3;
  o.seed = seed;
  return o;
}

struct SeparatorTask {
  StftConfig stft;
  separation::SeparatorConfig model;
  std::vector<separation::SeparatorExample> train;
};

// Tone against white noise at 8 kHz; the tone plays the vocal stem.
inline SeparatorTask separator_task(std::uint64_t seed, std::size_t clips = 32) {
  SeparatorTask task;
  task.stft.fft_size = 256;
  task.stft.hop = 64;
  task.model = separation::SeparatorConfig{task.stft.num_bins(), 1, 16};
  for (std::size_t i = 0; i < clips; ++i) {
    const auto c = tone_noise_clip(seed + i, 8000, 4000);
    task.train.push_back(separation::make_example(c.mixture, c.tone, c.noise, task.stft));
  }
  return task;
}

inline nn::TrainOptions separator_task_options(std::uint64_t seed) {
  nn::TrainOptions o;
  o.epochs = 50;
  o.batch_size = 8;
  o.learning_rate = 1e-2;
  o.seed = seed;
  return o;
}

}  // namespace stemscribe::synthetic
