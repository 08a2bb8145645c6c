#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "stemscribe/audio_io.hpp"
#include "stemscribe/bss_metrics.hpp"
#include "stemscribe/midi.hpp"
#include "stemscribe/notation.hpp"
#include "stemscribe/separation.hpp"
#include "stemscribe/synthetic_tasks.hpp"
#include "stemscribe/transcription.hpp"

// Command layer: configuration, manifests, artifacts and exit codes.
namespace stemscribe::app {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int {
  kExitOk = 0,
  kExitInvalidInput = 2,
  kExitMissingDependency = 3,
  kExitDivergence = 4,
};

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kExecutableNotFound:
    case ErrorCode::kProcessFailed:
    case ErrorCode::kTimeout:
    case ErrorCode::kOutputMissing:
      return kExitMissingDependency;
    case ErrorCode::kDivergence:
      return kExitDivergence;
    default:
      return kExitInvalidInput;
  }
}

// Serializes console output from concurrent workers.
class Reporter {
 public:
  explicit Reporter(std::ostream& out = std::cout, std::ostream& err = std::cerr)
      : out_(out), err_(err) {}
  void info(const std::string& msg) {
    std::lock_guard<std::mutex> lock(mu_);
    out_ << msg << '\n';
  }
  void warn(const std::string& msg) {
    std::lock_guard<std::mutex> lock(mu_);
    err_ << "warning: " << msg << '\n';
  }
  void error(const std::string& msg) {
    std::lock_guard<std::mutex> lock(mu_);
    err_ << "error: " << msg << '\n';
  }

 private:
  std::ostream& out_;
  std::ostream& err_;
  std::mutex mu_;
};

// ---- configuration ----------------------------------------------------------

struct PipelineConfig {
  StftConfig stft;
  CqtConfig cqt;
  struct Separator {
    std::size_t layers = 2;
    std::size_t hidden = 64;
    std::size_t epochs = 200;
    std::size_t batch_size = 10;
    double clip_seconds = 7.0;
    double learning_rate = 1e-3;
  } separator;
  struct Amt {
    std::size_t conv_maps = 16;
    std::size_t hidden = 64;
    double threshold = transcription::kDefaultThreshold;
    double alpha = 0.35;
    double gamma = 3.0;
    std::size_t epochs = 200;
    std::size_t batch_size = 10;
    double learning_rate = 1e-3;
    std::size_t window = transcription::kSegmentFrames;
    std::size_t hop = transcription::kSegmentHop;
  } amt;
  struct Paths {
    std::string work_dir = ".";
    std::string musescore;
  } paths;
  std::uint64_t seed = 0;

  void validate() const {
    stft.validate();
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0)) throw Error(ErrorCode::kInvalidArgument, std::string(name) + " must be positive");
    };
    positive(double(cqt.n_bins), "cqt.n_bins");
    positive(double(cqt.bins_per_octave), "cqt.bins_per_octave");
    positive(cqt.f_min, "cqt.f_min");
    positive(double(cqt.hop), "cqt.hop");
    positive(double(cqt.sample_rate), "cqt.sample_rate");
    positive(double(separator.layers), "separator.layers");
    positive(double(separator.hidden), "separator.hidden");
    positive(double(separator.batch_size), "separator.batch_size");
    positive(separator.clip_seconds, "separator.clip_seconds");
    positive(separator.learning_rate, "separator.learning_rate");
    positive(double(amt.conv_maps), "amt.conv_maps");
    positive(double(amt.hidden), "amt.hidden");
    positive(double(amt.batch_size), "amt.batch_size");
    positive(amt.learning_rate, "amt.learning_rate");
    positive(double(amt.window), "amt.window");
    positive(double(amt.hop), "amt.hop");
    if (!(amt.threshold > 0.0 && amt.threshold < 1.0))
      throw Error(ErrorCode::kInvalidArgument, "amt.threshold must lie in (0, 1)");
    if (!(amt.alpha > 0.0 && amt.alpha < 1.0))
      throw Error(ErrorCode::kInvalidArgument, "amt.alpha must lie in (0, 1)");
    if (!(amt.gamma >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "amt.gamma must be >= 0");
  }

  separation::SeparatorConfig separator_model() const {
    return {stft.num_bins(), separator.layers, separator.hidden};
  }
  transcription::AmtConfig amt_model() const {
    transcription::AmtConfig c;
    c.bins = cqt.n_bins;
    c.conv_maps = amt.conv_maps;
    c.hidden = amt.hidden;
    c.threshold = amt.threshold;
    return c;
  }
  nn::FocalLossParams focal() const { return {amt.alpha, amt.gamma}; }

  bool operator==(const PipelineConfig& o) const;
};

inline json to_json(const PipelineConfig& c) {
  return json{
      {"stft", {{"fft_size", c.stft.fft_size}, {"hop", c.stft.hop}, {"window", to_string(c.stft.window)}}},
      {"cqt",
       {{"n_bins", c.cqt.n_bins},
        {"bins_per_octave", c.cqt.bins_per_octave},
        {"f_min", c.cqt.f_min},
        {"hop", c.cqt.hop},
        {"sample_rate", c.cqt.sample_rate}}},
      {"separator",
       {{"layers", c.separator.layers},
        {"hidden", c.separator.hidden},
        {"epochs", c.separator.epochs},
        {"batch_size", c.separator.batch_size},
        {"clip_seconds", c.separator.clip_seconds},
        {"learning_rate", c.separator.learning_rate}}},
      {"amt",
       {{"conv_maps", c.amt.conv_maps},
        {"hidden", c.amt.hidden},
        {"threshold", c.amt.threshold},
        {"alpha", c.amt.alpha},
        {"gamma", c.amt.gamma},
        {"epochs", c.amt.epochs},
        {"batch_size", c.amt.batch_size},
        {"learning_rate", c.amt.learning_rate},
        {"window", c.amt.window},
        {"hop", c.amt.hop}}},
      {"paths", {{"work_dir", c.paths.work_dir}, {"musescore", c.paths.musescore}}},
      {"seed", c.seed},
  };
}

namespace detail {

template <typename T>
void read_key(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("config key '") + key + "': " + e.what());
  }
}

inline void reject_unknown(const json& obj, std::initializer_list<const char*> keys,
                           const std::string& where) {
  for (const auto& [k, v] : obj.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* x) { return k == x; }))
      throw Error(ErrorCode::kInvalidArgument, "unknown config key '" + where + k + "'");
  }
}

}  // namespace detail

// Missing keys keep their defaults; unknown keys are rejected.
inline PipelineConfig config_from_json(const json& j, PipelineConfig c = {}) {
  using detail::read_key;
  if (!j.is_object()) throw Error(ErrorCode::kInvalidArgument, "config must be a JSON object");
  detail::reject_unknown(j, {"stft", "cqt", "separator", "amt", "paths", "seed"}, "");
  if (j.contains("stft")) {
    const json& s = j["stft"];
    detail::reject_unknown(s, {"fft_size", "hop", "window"}, "stft.");
    read_key(s, "fft_size", c.stft.fft_size);
    read_key(s, "hop", c.stft.hop);
    if (s.contains("window")) c.stft.window = window_from_string(s["window"].get<std::string>());
  }
  if (j.contains("cqt")) {
    const json& s = j["cqt"];
    detail::reject_unknown(s, {"n_bins", "bins_per_octave", "f_min", "hop", "sample_rate"}, "cqt.");
    read_key(s, "n_bins", c.cqt.n_bins);
    read_key(s, "bins_per_octave", c.cqt.bins_per_octave);
    read_key(s, "f_min", c.cqt.f_min);
    read_key(s, "hop", c.cqt.hop);
    read_key(s, "sample_rate", c.cqt.sample_rate);
  }
  if (j.contains("separator")) {
    const json& s = j["separator"];
    detail::reject_unknown(
        s, {"layers", "hidden", "epochs", "batch_size", "clip_seconds", "learning_rate"},
        "separator.");
    read_key(s, "layers", c.separator.layers);
    read_key(s, "hidden", c.separator.hidden);
    read_key(s, "epochs", c.separator.epochs);
    read_key(s, "batch_size", c.separator.batch_size);
    read_key(s, "clip_seconds", c.separator.clip_seconds);
    read_key(s, "learning_rate", c.separator.learning_rate);
  }
  if (j.contains("amt")) {
    const json& s = j["amt"];
    detail::reject_unknown(s,
                           {"conv_maps", "hidden", "threshold", "alpha", "gamma", "epochs",
                            "batch_size", "learning_rate", "window", "hop"},
                           "amt.");
    read_key(s, "conv_maps", c.amt.conv_maps);
    read_key(s, "hidden", c.amt.hidden);
    read_key(s, "threshold", c.amt.threshold);
    read_key(s, "alpha", c.amt.alpha);
    read_key(s, "gamma", c.amt.gamma);
    read_key(s, "epochs", c.amt.epochs);
    read_key(s, "batch_size", c.amt.batch_size);
    read_key(s, "learning_rate", c.amt.learning_rate);
    read_key(s, "window", c.amt.window);
    read_key(s, "hop", c.amt.hop);
  }
  if (j.contains("paths")) {
    const json& s = j["paths"];
    detail::reject_unknown(s, {"work_dir", "musescore"}, "paths.");
    read_key(s, "work_dir", c.paths.work_dir);
    read_key(s, "musescore", c.paths.musescore);
  }
  read_key(j, "seed", c.seed);
  c.validate();
  return c;
}

inline bool PipelineConfig::operator==(const PipelineConfig& o) const {
  return to_json(*this) == to_json(o);
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kFileNotFound, path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kInvalidArgument, path.string() + ": " + e.what());
  }
}

inline void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kUnwritablePath, path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::kUnwritablePath, path.string());
}

inline PipelineConfig load_config(const fs::path& path) { return config_from_json(read_json(path)); }
inline void save_config(const PipelineConfig& c, const fs::path& path) { write_json(to_json(c), path); }

// ---- manifest ---------------------------------------------------------------

struct TrackEntry {
  std::string name;
  fs::path mixture;
  std::optional<fs::path> vocals, bass, drums, other, accompaniment;
  std::optional<fs::path> midi;
  // Precomputed outputs to score instead of running a model.
  std::optional<fs::path> vocals_estimate, accompaniment_estimate, predicted_midi;

  bool has_stems() const { return vocals && bass && drums && other; }
};

struct TrackManifest {
  std::vector<TrackEntry> tracks;
};

// Relative paths resolve against the manifest's directory.
inline TrackManifest manifest_from_json(const json& j, const fs::path& base) {
  if (!j.is_object() || !j.contains("tracks") || !j["tracks"].is_array())
    throw Error(ErrorCode::kInvalidArgument, "manifest needs a 'tracks' array");
  auto file = [&](const json& t, const char* key) -> std::optional<fs::path> {
    if (!t.contains(key)) return std::nullopt;
    fs::path p = t[key].get<std::string>();
    if (p.is_relative()) p = base / p;
    if (!fs::is_regular_file(p))
      throw Error(ErrorCode::kFileNotFound, std::string(key) + ": " + p.string());
    return p;
  };
  TrackManifest m;
  for (const json& t : j["tracks"]) {
    TrackEntry e;
    e.name = t.value("name", "track" + std::to_string(m.tracks.size()));
    const auto mix = file(t, "mixture");
    if (!mix) throw Error(ErrorCode::kInvalidArgument, "track '" + e.name + "' has no mixture");
    e.mixture = *mix;
    e.vocals = file(t, "vocals");
    e.bass = file(t, "bass");
    e.drums = file(t, "drums");
    e.other = file(t, "other");
    e.accompaniment = file(t, "accompaniment");
    e.midi = file(t, "midi");
    e.vocals_estimate = file(t, "vocals_estimate");
    e.accompaniment_estimate = file(t, "accompaniment_estimate");
    e.predicted_midi = file(t, "predicted_midi");
    m.tracks.push_back(std::move(e));
  }
  return m;
}

inline TrackManifest load_manifest(const fs::path& path) {
  return manifest_from_json(read_json(path), path.parent_path());
}

struct Split {
  std::vector<std::size_t> train, validation, test;
};

// 80/10/10 by track after a seeded shuffle; every split gets a track once
// there are enough of them.
inline Split split_tracks(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::floor(0.1 * n));
  const auto n_val = static_cast<std::size_t>(std::floor(0.1 * n));
  Split s;
  s.train.assign(order.begin(), order.end() - n_val - n_test);
  s.validation.assign(order.end() - n_val - n_test, order.end() - n_test);
  s.test.assign(order.end() - n_test, order.end());
  return s;
}

inline Waveform accompaniment_of(const TrackEntry& t) {
  if (t.accompaniment) return downmix(read_wav(*t.accompaniment));
  if (t.bass && t.drums && t.other) {
    separation::SourceSet s;
    s.vocals = read_wav(*t.vocals);
    s.bass = read_wav(*t.bass);
    s.drums = read_wav(*t.drums);
    s.other = read_wav(*t.other);
    return downmix(separation::sum_accompaniment(s));
  }
  const Waveform mix = downmix(read_wav(t.mixture)), voc = downmix(read_wav(*t.vocals));
  if (mix.length() != voc.length())
    throw Error(ErrorCode::kShapeMismatch, t.name + ": vocals and mixture lengths differ");
  std::vector<double> acc(mix.length());
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = mix.mono()[i] - voc.mono()[i];
  return Waveform(std::move(acc), mix.sample_rate);
}

// ---- artifacts --------------------------------------------------------------

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir)) throw Error(ErrorCode::kUnwritablePath, dir.string());
}

inline void write_mask_csv(const separation::Mask& m, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kUnwritablePath, path.string());
  out << std::setprecision(6);
  for (std::size_t t = 0; t < m.frames(); ++t) {
    for (std::size_t f = 0; f < m.bins(); ++f) out << (f ? "," : "") << m.values.at(t, f);
    out << '\n';
  }
}

// Per-frame energy, peak magnitude and peak bin of the mixture spectrogram.
inline void write_spectrogram_stats(const MagnitudeSpectrogram& s, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kUnwritablePath, path.string());
  out << "frame,energy,peak,peak_bin\n" << std::setprecision(9);
  for (std::size_t t = 0; t < s.frames; ++t) {
    double energy = 0.0, peak = 0.0;
    std::size_t arg = 0;
    for (std::size_t f = 0; f < s.bins; ++f) {
      const double v = s.at(t, f);
      energy += v * v;
      if (v > peak) {
        peak = v;
        arg = f;
      }
    }
    out << t << ',' << energy << ',' << peak << ',' << arg << '\n';
  }
}

inline void write_loss_csv(const std::vector<double>& trace, double initial,
                           const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kUnwritablePath, path.string());
  out << "epoch,loss\n" << std::setprecision(12) << 0 << ',' << initial << '\n';
  for (std::size_t e = 0; e < trace.size(); ++e) out << e + 1 << ',' << trace[e] << '\n';
}

inline json metrics_json(const bss::MetricReport& r) {
  json j;
  for (const auto& [k, v] : r.fields()) j[k] = v;
  j["clamped"] = r.clamped();
  return j;
}

inline json prf_json(const transcription::PrfScores& s) {
  return {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1},
          {"tp", s.tp},               {"fp", s.fp},         {"fn", s.fn},
          {"precision_undefined", s.precision_undefined},
          {"recall_undefined", s.recall_undefined}};
}

// ---- models -----------------------------------------------------------------

inline separation::SeparatorModel separator_for(const PipelineConfig& cfg,
                                                const std::optional<fs::path>& checkpoint,
                                                Reporter& rep) {
  if (checkpoint) return separation::SeparatorModel::load(*checkpoint);
  rep.warn("no separator checkpoint; using an untrained model seeded from the config");
  separation::SeparatorModel m(cfg.separator_model());
  m.init(cfg.seed);
  return m;
}

inline transcription::AmtModel amt_for(const PipelineConfig& cfg,
                                       const std::optional<fs::path>& checkpoint, Reporter& rep) {
  if (checkpoint) return transcription::AmtModel::load(*checkpoint);
  rep.warn("no AMT checkpoint; using an untrained model seeded from the config");
  transcription::AmtModel m(cfg.amt_model());
  m.init(cfg.seed + 1);
  return m;
}

// ---- commands ---------------------------------------------------------------

enum class MaskSource { kModel, kOnes, kOracle };

struct SeparateOptions {
  fs::path input;
  fs::path out_dir;
  std::optional<fs::path> checkpoint;
  MaskSource mask = MaskSource::kModel;
  std::optional<fs::path> reference_vocals;  // required for kOracle, scored when present
};

struct SeparateOutputs {
  fs::path vocals, accompaniment, mask_csv, stats_csv;
  std::optional<fs::path> report;
};

inline SeparateOutputs run_separate(const SeparateOptions& opt, const PipelineConfig& cfg,
                                    Reporter& rep) {
  const Waveform mixture = downmix(read_wav(opt.input));
  ensure_dir(opt.out_dir);
  const ComplexSpectrogram spec = stft(mixture, cfg.stft);

  std::optional<Waveform> reference;
  if (opt.reference_vocals) {
    reference = downmix(read_wav(*opt.reference_vocals));
    if (reference->length() != mixture.length() || reference->sample_rate != mixture.sample_rate)
      throw Error(ErrorCode::kShapeMismatch, "reference vocals do not match the mixture");
  }

  separation::Mask mask;
  switch (opt.mask) {
    case MaskSource::kOnes:
      mask = separation::Mask(spec.frames(), spec.num_bins(), 1.0);
      break;
    case MaskSource::kOracle: {
      if (!reference)
        throw Error(ErrorCode::kInvalidArgument, "oracle mask needs --reference-vocals");
      std::vector<double> residual(mixture.length());
      for (std::size_t i = 0; i < residual.size(); ++i)
        residual[i] = mixture.mono()[i] - reference->mono()[i];
      mask = separation::ideal_ratio_mask(
          stft(*reference, cfg.stft).magnitude(),
          stft(Waveform(std::move(residual), mixture.sample_rate), cfg.stft).magnitude());
      break;
    }
    case MaskSource::kModel: {
      auto model = separator_for(cfg, opt.checkpoint, rep);
      if (model.config().bins != spec.num_bins())
        throw Error(ErrorCode::kShapeMismatch,
                    "separator expects " + std::to_string(model.config().bins) +
                        " bins, STFT gives " + std::to_string(spec.num_bins()));
      mask = model.predict(separation::separator_features(spec));
      break;
    }
  }
  const auto sep = separation::separate_with_mask(spec, mask);

  const std::string stem = opt.input.stem().string();
  SeparateOutputs out;
  out.vocals = opt.out_dir / (stem + "_vocals.wav");
  out.accompaniment = opt.out_dir / (stem + "_accompaniment.wav");
  out.mask_csv = opt.out_dir / (stem + "_mask.csv");
  out.stats_csv = opt.out_dir / (stem + "_spectrogram_stats.csv");
  write_wav(sep.vocals, out.vocals, SampleFormat::kFloat32);
  write_wav(sep.accompaniment, out.accompaniment, SampleFormat::kFloat32);
  write_mask_csv(sep.mask, out.mask_csv);
  write_spectrogram_stats(spec.magnitude(), out.stats_csv);

  if (reference) {
    bss::EvalPair pair{reference->mono(), sep.vocals.mono(), {}};
    json report = {{"input", opt.input.string()},
                   {"vocals", metrics_json(bss::evaluate(pair, mixture.mono()))}};
    out.report = opt.out_dir / (stem + "_report.json");
    write_json(report, *out.report);
  }
  rep.info("wrote " + out.vocals.string() + " and " + out.accompaniment.string());
  return out;
}

struct TranscribeOptions {
  fs::path input;
  fs::path output;  // .mid
  std::optional<fs::path> checkpoint;
};

struct TranscribeOutputs {
  fs::path midi, roll;
  std::size_t notes = 0;
};

inline TranscribeOutputs run_transcribe(const TranscribeOptions& opt, const PipelineConfig& cfg,
                                        Reporter& rep) {
  const Waveform audio = read_wav(opt.input);
  auto model = amt_for(cfg, opt.checkpoint, rep);
  if (model.config().bins != cfg.cqt.n_bins)
    throw Error(ErrorCode::kShapeMismatch,
                "AMT model expects " + std::to_string(model.config().bins) +
                    " CQT bins, config gives " + std::to_string(cfg.cqt.n_bins));
  const auto features = transcription::log_cqt(audio, cfg.cqt);
  const PianoRoll roll = transcription::transcribe_features(model, features, cfg.cqt.frame_time(),
                                                            cfg.amt.window, cfg.amt.hop);
  const FrameTiming timing{static_cast<int>(cfg.cqt.hop), cfg.cqt.sample_rate};
  const auto notes = midi::roll_to_notes(roll, timing);
  if (opt.output.has_parent_path()) ensure_dir(opt.output.parent_path());
  TranscribeOutputs out;
  out.midi = opt.output;
  out.roll = fs::path(opt.output).replace_extension(".roll");
  midi::write_smf(notes, out.midi);
  write_roll(roll, out.roll);
  out.notes = notes.size();
  rep.info("wrote " + out.midi.string() + " (" + std::to_string(notes.size()) + " notes)");
  return out;
}

struct RenderOptions {
  fs::path midi;
  fs::path output;
  std::optional<fs::path> executable;
  std::chrono::milliseconds timeout = notation::kDefaultTimeout;
};

inline fs::path run_render(const RenderOptions& opt, const PipelineConfig& cfg,
                           const notation::EnvLookup& env = notation::process_env) {
  midi::read_smf(opt.midi);  // reject malformed input before looking for the binary
  std::optional<fs::path> explicit_exe = opt.executable;
  if (!explicit_exe && !cfg.paths.musescore.empty()) explicit_exe = cfg.paths.musescore;
  const fs::path exe = notation::resolve_executable(env, explicit_exe);
  return notation::export_sheet({opt.midi, opt.output, exe}, opt.timeout);
}

struct PipelineOptions {
  fs::path input;
  fs::path out_dir;
  std::optional<fs::path> separator_checkpoint;
  std::optional<fs::path> amt_checkpoint;
  std::optional<fs::path> musescore;
  std::string sheet_format = "pdf";
};

struct StageResult {
  std::string stage;
  std::string status;  // ok | failed | skipped
  std::string detail;
  std::vector<std::string> artifacts;
};

struct PipelineReport {
  std::vector<StageResult> stages;
  int exit_code = kExitOk;
};

// separate -> transcribe(vocals) -> render. A failed render only warns;
// any other failure skips the later stages.
inline PipelineReport run_pipeline(const PipelineOptions& opt, const PipelineConfig& cfg,
                                   Reporter& rep,
                                   const notation::EnvLookup& env = notation::process_env) {
  PipelineReport report;
  ensure_dir(opt.out_dir);
  const std::string stem = opt.input.stem().string();
  bool failed = false;

  auto run_stage = [&](const std::string& name, bool fatal, auto&& body) {
    StageResult r{name, "ok", "", {}};
    if (failed) {
      r.status = "skipped";
      r.detail = "earlier stage failed";
    } else {
      try {
        r.artifacts = body();
      } catch (const Error& e) {
        r.status = "failed";
        r.detail = e.what();
        if (fatal) {
          failed = true;
          report.exit_code = exit_code_for(e.code());
          rep.error(name + ": " + e.what());
        } else {
          rep.warn(name + " skipped: " + e.what());
        }
      }
    }
    report.stages.push_back(std::move(r));
  };

  fs::path vocals;
  run_stage("separate", true, [&] {
    const auto out = run_separate({opt.input, opt.out_dir, opt.separator_checkpoint,
                                   MaskSource::kModel, std::nullopt},
                                  cfg, rep);
    vocals = out.vocals;
    return std::vector<std::string>{out.vocals.string(), out.accompaniment.string(),
                                    out.mask_csv.string(), out.stats_csv.string()};
  });
  const fs::path midi_path = opt.out_dir / (stem + "_vocals.mid");
  run_stage("transcribe", true, [&] {
    const auto out = run_transcribe({vocals, midi_path, opt.amt_checkpoint}, cfg, rep);
    return std::vector<std::string>{out.midi.string(), out.roll.string()};
  });
  run_stage("render", false, [&] {
    const fs::path sheet = opt.out_dir / (stem + "_vocals." + opt.sheet_format);
    run_render({midi_path, sheet, opt.musescore}, cfg, env);
    return std::vector<std::string>{sheet.string()};
  });

  json j = json::array();
  for (const auto& s : report.stages)
    j.push_back({{"stage", s.stage}, {"status", s.status}, {"detail", s.detail},
                 {"artifacts", s.artifacts}});
  write_json({{"input", opt.input.string()}, {"stages", j}, {"exit_code", report.exit_code}},
             opt.out_dir / (stem + "_pipeline.json"));
  return report;
}

struct EvaluateOptions {
  fs::path manifest;
  std::optional<fs::path> separator_checkpoint;
  std::optional<fs::path> amt_checkpoint;
  std::optional<fs::path> output;  // JSON report; stdout when absent
  double onset_tolerance = transcription::kDefaultOnsetTolerance;
};

inline json evaluate_track(const TrackEntry& t, const EvaluateOptions& opt,
                           const PipelineConfig& cfg, Reporter& rep) {
  json out = {{"name", t.name}};
  const Waveform mixture = downmix(read_wav(t.mixture));

  if (t.vocals) {
    const Waveform ref_voc = downmix(read_wav(*t.vocals));
    const Waveform ref_acc = accompaniment_of(t);
    std::optional<Waveform> est_voc, est_acc;
    if (t.vocals_estimate) est_voc = downmix(read_wav(*t.vocals_estimate));
    if (t.accompaniment_estimate) est_acc = downmix(read_wav(*t.accompaniment_estimate));
    if ((!est_voc || !est_acc) && opt.separator_checkpoint) {
      auto model = separation::SeparatorModel::load(*opt.separator_checkpoint);
      const auto sep = separation::separate(mixture, model, cfg.stft);
      if (!est_voc) est_voc = sep.vocals;
      if (!est_acc) est_acc = sep.accompaniment;
    }
    json sep = json::object();
    if (est_voc)
      sep["vocals"] = metrics_json(
          bss::evaluate({ref_voc.mono(), est_voc->mono(), {ref_acc.mono()}}, mixture.mono()));
    if (est_acc)
      sep["accompaniment"] = metrics_json(
          bss::evaluate({ref_acc.mono(), est_acc->mono(), {ref_voc.mono()}}, mixture.mono()));
    if (!sep.empty()) out["separation"] = sep;
  }

  if (t.midi) {
    const FrameTiming timing{static_cast<int>(cfg.cqt.hop), cfg.cqt.sample_rate};
    const auto truth_notes = midi::read_smf(*t.midi).notes;
    std::optional<PianoRoll> pred;
    std::size_t frames = cqt_frame_count(
        static_cast<std::size_t>(std::llround(mixture.duration() * cfg.cqt.sample_rate)),
        cfg.cqt.hop);
    if (t.predicted_midi) {
      pred = transcription::rasterize(midi::read_smf(*t.predicted_midi).notes, timing, frames);
    } else if (opt.amt_checkpoint) {
      auto model = transcription::AmtModel::load(*opt.amt_checkpoint);
      const auto features = transcription::log_cqt(mixture, cfg.cqt);
      frames = features.frames;
      pred = transcription::transcribe_features(model, features, timing.time_per_frame(),
                                                cfg.amt.window, cfg.amt.hop);
    }
    if (pred) {
      const PianoRoll truth = transcription::rasterize(truth_notes, timing, frames);
      out["transcription"] = {
          {"frame", prf_json(transcription::frame_metrics(*pred, truth))},
          {"onset", prf_json(transcription::onset_metrics(*pred, truth, opt.onset_tolerance))}};
    }
  }
  rep.info("evaluated " + t.name);
  return out;
}

// Tracks are scored on worker threads; results keep manifest order.
inline json run_evaluate(const EvaluateOptions& opt, const PipelineConfig& cfg, Reporter& rep) {
  const TrackManifest m = load_manifest(opt.manifest);
  std::vector<json> results(m.tracks.size());
  std::vector<std::string> errors(m.tracks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < m.tracks.size(); i = next++) {
      try {
        results[i] = evaluate_track(m.tracks[i], opt, cfg, rep);
      } catch (const Error& e) {
        errors[i] = e.what();
      }
    }
  };
  const std::size_t n_threads =
      std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, std::max<std::size_t>(1, m.tracks.size()));
  std::vector<std::thread> pool;
  for (std::size_t k = 1; k < n_threads; ++k) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty()) throw Error(ErrorCode::kInvalidArgument, m.tracks[i].name + ": " + errors[i]);

  json report = {{"tracks", results}};
  if (opt.output) write_json(report, *opt.output);
  return report;
}

struct TrainOptions {
  std::optional<fs::path> manifest;
  bool synthetic = false;
  fs::path out_dir;
  std::optional<std::size_t> epochs;  // overrides config and synthetic defaults
};

struct TrainOutputs {
  fs::path checkpoint, loss_csv;
  nn::TrainResult result;
  std::optional<transcription::PrfScores> held_out;
};

namespace detail {

// Fixed-length chunks; the tail is zero-padded when at least half full.
inline std::vector<std::vector<double>> chunks(const std::vector<double>& x, std::size_t len) {
  std::vector<std::vector<double>> out;
  for (std::size_t start = 0; start < x.size(); start += len) {
    const std::size_t n = std::min(len, x.size() - start);
    if (n * 2 < len && start > 0) break;
    std::vector<double> c(x.begin() + start, x.begin() + start + n);
    c.resize(len, 0.0);
    out.push_back(std::move(c));
  }
  return out;
}

inline std::vector<std::size_t> train_tracks(const TrackManifest& m, std::uint64_t seed) {
  return split_tracks(m.tracks.size(), seed).train;
}

}  // namespace detail

inline TrainOutputs run_train_separator(const TrainOptions& opt, const PipelineConfig& cfg,
                                        Reporter& rep) {
  ensure_dir(opt.out_dir);
  std::vector<separation::SeparatorExample> data;
  separation::SeparatorConfig model_cfg = cfg.separator_model();
  nn::TrainOptions to;
  to.epochs = cfg.separator.epochs;
  to.batch_size = cfg.separator.batch_size;
  to.learning_rate = cfg.separator.learning_rate;
  to.seed = cfg.seed;
  if (opt.synthetic) {
    auto task = synthetic::separator_task(cfg.seed);
    data = std::move(task.train);
    model_cfg = task.model;
    to = synthetic::separator_task_options(cfg.seed);
  } else {
    if (!opt.manifest) throw Error(ErrorCode::kInvalidArgument, "need --manifest or --synthetic");
    const TrackManifest m = load_manifest(*opt.manifest);
    for (std::size_t i : detail::train_tracks(m, cfg.seed)) {
      const TrackEntry& t = m.tracks[i];
      if (!t.vocals) continue;
      const Waveform mix = downmix(read_wav(t.mixture)), voc = downmix(read_wav(*t.vocals));
      const Waveform acc = accompaniment_of(t);
      const auto len = static_cast<std::size_t>(cfg.separator.clip_seconds * mix.sample_rate);
      const auto mc = detail::chunks(mix.mono(), len), vc = detail::chunks(voc.mono(), len),
                 ac = detail::chunks(acc.mono(), len);
      for (std::size_t k = 0; k < std::min({mc.size(), vc.size(), ac.size()}); ++k)
        data.push_back(separation::make_example(Waveform(mc[k], mix.sample_rate),
                                                Waveform(vc[k], mix.sample_rate),
                                                Waveform(ac[k], mix.sample_rate), cfg.stft));
    }
    if (data.empty()) throw Error(ErrorCode::kInvalidArgument, "no training track has a vocals stem");
  }
  if (opt.epochs) to.epochs = *opt.epochs;

  separation::SeparatorModel model(model_cfg);
  model.init(cfg.seed);
  TrainOutputs out;
  out.checkpoint = opt.out_dir / "separator.ckpt";
  out.loss_csv = opt.out_dir / "separator_loss.csv";
  model.save(out.checkpoint);
  std::vector<double> trace;
  out.result = separation::train_separator(model, data, to, [&](std::size_t e, double loss) {
    trace.push_back(loss);
    model.save(out.checkpoint);
    write_loss_csv(trace, out.result.initial_loss, out.loss_csv);
    rep.info("separator epoch " + std::to_string(e + 1) + " loss " + std::to_string(loss));
  });
  write_loss_csv(out.result.trace, out.result.initial_loss, out.loss_csv);
  return out;
}

inline TrainOutputs run_train_amt(const TrainOptions& opt, const PipelineConfig& cfg,
                                  Reporter& rep) {
  ensure_dir(opt.out_dir);
  std::vector<transcription::AmtExample> data;
  transcription::AmtConfig model_cfg = cfg.amt_model();
  nn::TrainOptions to;
  to.epochs = cfg.amt.epochs;
  to.batch_size = cfg.amt.batch_size;
  to.learning_rate = cfg.amt.learning_rate;
  to.seed = cfg.seed;
  std::optional<synthetic::AmtTask> task;
  if (opt.synthetic) {
    task = synthetic::amt_task(cfg.seed);
    data = task->train;
    model_cfg = task->model;
    to = synthetic::amt_task_options(cfg.seed);
  } else {
    if (!opt.manifest) throw Error(ErrorCode::kInvalidArgument, "need --manifest or --synthetic");
    const TrackManifest m = load_manifest(*opt.manifest);
    for (std::size_t i : detail::train_tracks(m, cfg.seed)) {
      const TrackEntry& t = m.tracks[i];
      if (!t.midi) continue;
      const Waveform audio = read_wav(t.vocals ? *t.vocals : t.mixture);
      const auto pair = transcription::build_training_pair(
          audio, midi::read_smf(*t.midi).notes, cfg.cqt, transcription::kClipSeconds,
          cfg.amt.window, cfg.amt.hop);
      for (auto& ex : transcription::make_examples(pair)) data.push_back(std::move(ex));
    }
    if (data.empty()) throw Error(ErrorCode::kInvalidArgument, "no training track has a MIDI file");
  }
  if (opt.epochs) to.epochs = *opt.epochs;

  transcription::AmtModel model(model_cfg);
  model.init(cfg.seed + 1);
  TrainOutputs out;
  out.checkpoint = opt.out_dir / "amt.ckpt";
  out.loss_csv = opt.out_dir / "amt_loss.csv";
  model.save(out.checkpoint);
  std::vector<double> trace;
  out.result =
      transcription::train_amt(model, data, cfg.focal(), to, [&](std::size_t e, double loss) {
        trace.push_back(loss);
        model.save(out.checkpoint);
        write_loss_csv(trace, out.result.initial_loss, out.loss_csv);
        rep.info("amt epoch " + std::to_string(e + 1) + " loss " + std::to_string(loss));
      });
  write_loss_csv(out.result.trace, out.result.initial_loss, out.loss_csv);
  if (task) {
    out.held_out = synthetic::held_out_frame_scores(model, *task);
    write_json({{"held_out_frame", prf_json(*out.held_out)}}, opt.out_dir / "amt_report.json");
    rep.info("held-out frame F1 " + std::to_string(out.held_out->f1));
  }
  return out;
}

struct MixOptions {
  fs::path manifest;
  std::size_t count = 0;
  fs::path out_dir;
};

// Random stem recombinations written as float WAVs (mixture plus four targets).
inline std::vector<fs::path> run_mix(const MixOptions& opt, const PipelineConfig& cfg,
                                     Reporter& rep) {
  std::vector<fs::path> written;
  if (opt.count == 0) return written;
  const TrackManifest m = load_manifest(opt.manifest);
  std::vector<separation::SourceSet> sets;
  for (const TrackEntry& t : m.tracks) {
    if (!t.has_stems()) continue;
    separation::SourceSet s;
    s.vocals = downmix(read_wav(*t.vocals));
    s.bass = downmix(read_wav(*t.bass));
    s.drums = downmix(read_wav(*t.drums));
    s.other = downmix(read_wav(*t.other));
    s.validate();
    sets.push_back(std::move(s));
  }
  if (sets.empty()) throw Error(ErrorCode::kInvalidArgument, "no track has all four stems");
  std::size_t len = static_cast<std::size_t>(cfg.separator.clip_seconds * sets[0].vocals.sample_rate);
  for (const auto& s : sets) len = std::min(len, s.vocals.length());
  for (auto& s : sets)
    for (Waveform* w : s.stems()) w->mono().resize(len);

  ensure_dir(opt.out_dir);
  for (std::size_t i = 0; i < opt.count; ++i) {
    const auto r = separation::remix(sets, std::nullopt, cfg.seed + i);
    const std::string base = "mix" + std::to_string(i) + "_";
    const std::pair<const char*, const Waveform*> files[] = {
        {"mixture", &r.mixture},        {"vocals", &r.targets.vocals},
        {"bass", &r.targets.bass},      {"drums", &r.targets.drums},
        {"other", &r.targets.other}};
    for (const auto& [name, w] : files) {
      written.push_back(opt.out_dir / (base + name + ".wav"));
      write_wav(*w, written.back(), SampleFormat::kFloat32);
    }
  }
  rep.info("wrote " + std::to_string(opt.count) + " remixes to " + opt.out_dir.string());
  return written;
}

}  // namespace stemscribe::app
