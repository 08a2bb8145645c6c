// stemscribe: separate vocals, transcribe them to MIDI and render sheet music.

#include <CLI11.hpp>

#include <iostream>
#include <map>

#include "stemscribe/pipeline.hpp"

namespace fs = std::filesystem;
using namespace stemscribe;
using namespace stemscribe::app;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> fft_size, stft_hop;
  std::optional<double> threshold;
  std::optional<std::string> musescore;
};

PipelineConfig effective_config(const std::string& path, const Overrides& o) {
  PipelineConfig cfg = path.empty() ? PipelineConfig{} : load_config(path);
  if (o.seed) cfg.seed = *o.seed;
  if (o.fft_size) cfg.stft.fft_size = *o.fft_size;
  if (o.stft_hop) cfg.stft.hop = *o.stft_hop;
  if (o.threshold) cfg.amt.threshold = *o.threshold;
  if (o.musescore) cfg.paths.musescore = *o.musescore;
  cfg.validate();
  return cfg;
}

std::optional<fs::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vocal separation, transcription and sheet-music export"};
  app.require_subcommand(1);

  std::string config_path, dump_config;
  Overrides ov;
  app.add_option("-c,--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", ov.seed, "Override config seed");
  app.add_option("--fft-size", ov.fft_size, "Override STFT size");
  app.add_option("--stft-hop", ov.stft_hop, "Override STFT hop");
  app.add_option("--threshold", ov.threshold, "Override AMT threshold");
  app.add_option("--dump-config", dump_config, "Write the effective config to this path");

  // separate
  auto* sep = app.add_subcommand("separate", "Split a mixture into vocals and accompaniment");
  SeparateOptions sep_opt;
  std::string sep_ckpt, sep_ref, sep_mask = "model";
  sep->add_option("input", sep_opt.input, "Mixture WAV")->required();
  sep->add_option("-o,--out-dir", sep_opt.out_dir, "Output directory")->required();
  sep->add_option("--checkpoint", sep_ckpt, "Separator checkpoint");
  sep->add_option("--mask", sep_mask, "model, ones or oracle")
      ->check(CLI::IsMember({"model", "ones", "oracle"}));
  sep->add_option("--reference-vocals", sep_ref, "Reference vocals; enables the metric report");

  // transcribe
  auto* tr = app.add_subcommand("transcribe", "Transcribe a WAV to MIDI");
  TranscribeOptions tr_opt;
  std::string tr_ckpt;
  tr->add_option("input", tr_opt.input, "Input WAV")->required();
  tr->add_option("output", tr_opt.output, "Output .mid")->required();
  tr->add_option("--checkpoint", tr_ckpt, "AMT checkpoint");

  // render
  auto* rd = app.add_subcommand("render", "Export MIDI to sheet music through MuseScore");
  RenderOptions rd_opt;
  std::string rd_exe;
  double rd_timeout = 120.0;
  rd->add_option("midi", rd_opt.midi, "Input .mid")->required();
  rd->add_option("output", rd_opt.output, "Output .pdf, .musicxml or .png")->required();
  rd->add_option("--musescore", rd_exe, "MuseScore executable");
  rd->add_option("--timeout", rd_timeout, "Seconds before the export is killed");

  // pipeline
  auto* pl = app.add_subcommand("pipeline", "separate, transcribe vocals, render");
  PipelineOptions pl_opt;
  std::string pl_sep, pl_amt, pl_exe;
  pl->add_option("input", pl_opt.input, "Mixture WAV")->required();
  pl->add_option("out_dir", pl_opt.out_dir, "Output directory")->required();
  pl->add_option("--separator-checkpoint", pl_sep);
  pl->add_option("--amt-checkpoint", pl_amt);
  pl->add_option("--musescore", pl_exe, "MuseScore executable");
  pl->add_option("--format", pl_opt.sheet_format, "Sheet format")
      ->check(CLI::IsMember({"pdf", "musicxml", "png"}));

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Score separation and transcription on a manifest");
  EvaluateOptions ev_opt;
  std::string ev_sep, ev_amt, ev_out;
  ev->add_option("manifest", ev_opt.manifest, "Track manifest JSON")->required();
  ev->add_option("--separator-checkpoint", ev_sep);
  ev->add_option("--amt-checkpoint", ev_amt);
  ev->add_option("-o,--output", ev_out, "Report path (stdout when omitted)");
  ev->add_option("--onset-tolerance", ev_opt.onset_tolerance, "Seconds");

  // training
  TrainOptions ts_opt, ta_opt;
  std::string ts_manifest, ta_manifest;
  auto* ts = app.add_subcommand("train-separator", "Train the mask estimator");
  auto* ta = app.add_subcommand("train-amt", "Train the transcription model");
  for (auto [cmd, opt, manifest] :
       {std::tuple{ts, &ts_opt, &ts_manifest}, std::tuple{ta, &ta_opt, &ta_manifest}}) {
    auto* m = cmd->add_option("--manifest", *manifest, "Track manifest JSON");
    auto* s = cmd->add_flag("--synthetic", opt->synthetic, "Use the built-in synthetic task");
    m->excludes(s);
    cmd->add_option("-o,--out-dir", opt->out_dir, "Checkpoint directory")->required();
    cmd->add_option("--epochs", opt->epochs, "Override epoch count");
  }

  // mix
  auto* mx = app.add_subcommand("mix", "Write random stem remixes");
  MixOptions mx_opt;
  mx->add_option("manifest", mx_opt.manifest, "Track manifest JSON")->required();
  mx->add_option("-n,--count", mx_opt.count, "Number of remixes")->required();
  mx->add_option("-o,--out-dir", mx_opt.out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitInvalidInput;
  }

  Reporter rep;
  try {
    const PipelineConfig cfg = effective_config(config_path, ov);
    if (!dump_config.empty()) save_config(cfg, dump_config);

    if (*sep) {
      sep_opt.checkpoint = opt_path(sep_ckpt);
      sep_opt.reference_vocals = opt_path(sep_ref);
      sep_opt.mask = sep_mask == "ones"     ? MaskSource::kOnes
                     : sep_mask == "oracle" ? MaskSource::kOracle
                                            : MaskSource::kModel;
      run_separate(sep_opt, cfg, rep);
    } else if (*tr) {
      tr_opt.checkpoint = opt_path(tr_ckpt);
      run_transcribe(tr_opt, cfg, rep);
    } else if (*rd) {
      rd_opt.executable = opt_path(rd_exe);
      rd_opt.timeout = std::chrono::milliseconds(static_cast<long long>(rd_timeout * 1000.0));
      rep.info("wrote " + run_render(rd_opt, cfg).string());
    } else if (*pl) {
      pl_opt.separator_checkpoint = opt_path(pl_sep);
      pl_opt.amt_checkpoint = opt_path(pl_amt);
      pl_opt.musescore = opt_path(pl_exe);
      return run_pipeline(pl_opt, cfg, rep).exit_code;
    } else if (*ev) {
      ev_opt.separator_checkpoint = opt_path(ev_sep);
      ev_opt.amt_checkpoint = opt_path(ev_amt);
      ev_opt.output = opt_path(ev_out);
      const json report = run_evaluate(ev_opt, cfg, rep);
      if (!ev_opt.output) std::cout << report.dump(2) << '\n';
    } else if (*ts) {
      ts_opt.manifest = opt_path(ts_manifest);
      run_train_separator(ts_opt, cfg, rep);
    } else if (*ta) {
      ta_opt.manifest = opt_path(ta_manifest);
      run_train_amt(ta_opt, cfg, rep);
    } else if (*mx) {
      run_mix(mx_opt, cfg, rep);
    }
  } catch (const Error& e) {
    rep.error(e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    rep.error(e.what());
    return kExitInvalidInput;
  }
  return kExitOk;
}
