// gamseg command-line front end.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gamseg/gamseg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  bool verbose = false;
};

struct ArchOptions {
  std::string preset = "full";
  int conv1 = -1;
  int conv2 = -1;
  int hidden = -1;
  int layers = -1;
  double dropout = -1.0;
  bool max_pool = false;

  gamseg::nn::Architecture build() const {
    gamseg::nn::Architecture a;
    if (preset == "reduced") a = gamseg::nn::Architecture::reduced();
    if (conv1 >= 0) a.conv1_filters = static_cast<std::size_t>(conv1);
    if (conv2 >= 0) a.conv2_filters = static_cast<std::size_t>(conv2);
    if (hidden >= 0) a.hidden = static_cast<std::size_t>(hidden);
    if (layers >= 0) a.lstm_layers = static_cast<std::size_t>(layers);
    if (dropout >= 0.0) a.dropout = dropout;
    a.max_pool = a.max_pool || max_pool;
    return a;
  }
};

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    std::cout.flush();
  } else {
    gamseg::detail::write_text(path, text);
  }
}

void add_peak_options(CLI::App* sub, gamseg::PeakParams& peaks) {
  sub->add_option("--half-width", peaks.half_width, "Peak-picking window half width (frames)");
  sub->add_option("--threshold", peaks.threshold, "Peak probability threshold");
}

void add_training_options(CLI::App* sub, gamseg::TrainingConfig& cfg, ArchOptions& arch) {
  sub->add_option("--epochs", cfg.epochs, "Training epochs");
  sub->add_option("--lr", cfg.lr, "Adam learning rate");
  sub->add_option("--pos-weight", cfg.pos_weight, "Positive-class weight in the BCE loss");
  sub->add_option("--chunk-frames", cfg.chunk_frames, "Frames per training chunk");
  sub->add_option("--chunk-overlap", cfg.chunk_overlap, "Overlap between chunks (frames)");
  sub->add_option("--tempo-min", cfg.augment.tempo_min, "Lowest augmentation tempo rate");
  sub->add_option("--tempo-max", cfg.augment.tempo_max, "Highest augmentation tempo rate");
  sub->add_option("--pitch-min", cfg.augment.pitch_min, "Lowest augmentation pitch shift (semitones)");
  sub->add_option("--pitch-max", cfg.augment.pitch_max, "Highest augmentation pitch shift (semitones)");
  sub->add_option("--copies-per-track", cfg.augment.copies_per_track,
                  "Augmented copies generated per training track");
  sub->add_option("--smear", cfg.smear, "Target widening half width (frames)");
  sub->add_option("--tolerance", cfg.tolerance, "Validation hit tolerance (s)");
  add_peak_options(sub, cfg.peaks);
  sub->add_option("--arch", arch.preset, "Architecture preset")
      ->check(CLI::IsMember({"full", "reduced"}));
  sub->add_option("--conv1", arch.conv1, "conv1 filters (-1 = preset)");
  sub->add_option("--conv2", arch.conv2, "conv2 filters (-1 = preset)");
  sub->add_option("--hidden", arch.hidden, "LSTM hidden size (-1 = preset)");
  sub->add_option("--layers", arch.layers, "LSTM layers (-1 = preset)");
  sub->add_option("--dropout", arch.dropout, "Dropout between LSTM layers (-1 = preset)");
  sub->add_flag("--max-pool", arch.max_pool, "Enable 2x2 max pooling after the conv stack");
}

gamseg::HyperGrid parse_grid(const std::string& text) {
  gamseg::HyperGrid grid;
  std::stringstream groups(text);
  std::string group;
  while (std::getline(groups, group, ';')) {
    if (group.empty()) continue;
    const auto eq = group.find('=');
    if (eq == std::string::npos) throw gamseg::ConfigError("grid entry '" + group + "' lacks '='");
    auto& values = grid[group.substr(0, eq)];
    std::stringstream list(group.substr(eq + 1));
    std::string v;
    while (std::getline(list, v, ',')) {
      try {
        values.push_back(std::stod(v));
      } catch (const std::exception&) {
        throw gamseg::ConfigError("grid value '" + v + "' is not a number");
      }
    }
  }
  return grid;
}

json report_with_format(const gamseg::EvalReport& r) { return r.to_json(); }

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Music boundary segmentation toolkit", "gamseg"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "Random seed for every stochastic stage");
  app.add_option("--threads", g.threads, "Worker threads for per-track stages")
      ->check(CLI::PositiveNumber);
  app.add_flag("--verbose", g.verbose, "Log progress to stderr");

  gamseg::FeatureConfig features;

  // extract
  auto* extract = app.add_subcommand("extract", "Audio file to feature file");
  std::string extract_audio;
  std::string extract_out;
  extract->add_option("--audio", extract_audio, "Input WAV file")->required();
  extract->add_option("--out", extract_out, "Output feature file")->required();
  extract->add_option("--window", features.window, "STFT window (samples)");
  extract->add_option("--hop", features.hop, "STFT hop (samples)");

  // annotate-convert
  auto* convert = app.add_subcommand("annotate-convert", "Convert between annotation formats");
  std::string convert_in;
  std::string convert_out;
  std::string convert_from = "two_column";
  std::string convert_to = "savgm";
  convert->add_option("--in", convert_in, "Input annotation file")->required();
  convert->add_option("--out", convert_out, "Output annotation file ('-' = stdout)");
  convert->add_option("--from", convert_from, "Input format")
      ->check(CLI::IsMember({"savgm", "two_column"}));
  convert->add_option("--to", convert_to, "Output format")
      ->check(CLI::IsMember({"savgm", "two_column"}));

  // stats
  auto* stats = app.add_subcommand("stats", "Boundary-category histogram and segment durations");
  std::string stats_manifest;
  std::string stats_split;
  std::vector<std::string> stats_files;
  std::string stats_format = "savgm";
  std::string stats_out;
  stats->add_option("--manifest", stats_manifest, "Manifest whose annotations are counted");
  stats->add_option("--split", stats_split, "Restrict the manifest to one split (empty = all)");
  stats->add_option("files", stats_files, "Annotation files (instead of a manifest)");
  stats->add_option("--format", stats_format, "Format of positional annotation files")
      ->check(CLI::IsMember({"savgm", "two_column"}));
  stats->add_option("--out", stats_out, "Output JSON file ('-' = stdout)");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with known boundaries");
  gamseg::CorpusOptions corpus;
  std::string synth_out;
  synth->add_option("--tracks", corpus.tracks, "Number of tracks");
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--min-sections", corpus.min_sections, "Fewest sections per track");
  synth->add_option("--max-sections", corpus.max_sections, "Most sections per track");
  synth->add_option("--min-duration", corpus.min_duration, "Shortest section (s)");
  synth->add_option("--max-duration", corpus.max_duration, "Longest section (s)");
  synth->add_option("--val-fraction", corpus.val_fraction, "Fraction of tracks in the val split");
  synth->add_option("--test-fraction", corpus.test_fraction, "Fraction of tracks in the test split");

  // train
  auto* train = app.add_subcommand("train", "Train a boundary detector from a manifest");
  gamseg::TrainingConfig train_cfg;
  ArchOptions train_arch;
  std::string train_manifest;
  std::string train_out;
  std::string train_init;
  std::string train_log;
  std::string train_best;
  train->add_option("--manifest", train_manifest, "Dataset manifest (JSON Lines)")->required();
  train->add_option("--out", train_out, "Final checkpoint path")->required();
  train->add_option("--init-checkpoint", train_init, "Continue from this checkpoint (fine-tuning)");
  train->add_option("--log", train_log, "Per-epoch metrics CSV (empty = <out>.metrics.csv)");
  train->add_option("--best-out", train_best, "Best-val checkpoint (empty = <out>.best)");
  add_training_options(train, train_cfg, train_arch);

  // tune
  auto* tune = app.add_subcommand("tune", "Grid search over training hyperparameters");
  gamseg::TrainingConfig tune_cfg;
  ArchOptions tune_arch;
  std::string tune_manifest;
  std::string tune_grid = "lr=0.01;pos_weight=100";
  std::size_t tune_cap = gamseg::kDefaultGridCap;
  std::string tune_out;
  tune->add_option("--manifest", tune_manifest, "Dataset manifest (JSON Lines)")->required();
  tune->add_option("--grid", tune_grid, "Grid as 'key=v1,v2;key=v1' over lr, pos_weight, smear, threshold, half_width");
  tune->add_option("--grid-epochs", tune_cfg.grid_epochs, "Epochs per grid point");
  tune->add_option("--cap", tune_cap, "Largest allowed grid");
  tune->add_option("--out", tune_out, "Ranked results JSON ('-' = stdout)");
  add_training_options(tune, tune_cfg, tune_arch);

  // predict
  auto* predict = app.add_subcommand("predict", "Predict boundaries for one audio file");
  std::string predict_audio;
  std::string predict_ckpt;
  std::string predict_out;
  std::string predict_logits;
  gamseg::PeakParams predict_peaks;
  predict->add_option("--audio", predict_audio, "Input WAV file")->required();
  predict->add_option("--checkpoint", predict_ckpt, "Model checkpoint")->required();
  predict->add_option("--out", predict_out, "Predictions 'time<TAB>probability' ('-' = stdout)");
  predict->add_option("--logits", predict_logits, "Also write the logit curve as a 1xT feature file");
  add_peak_options(predict, predict_peaks);

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on one manifest split");
  std::string eval_manifest;
  std::string eval_split = "test";
  std::string eval_ckpt;
  double eval_tolerance = 3.0;
  std::string eval_out;
  gamseg::PeakParams eval_peaks;
  evaluate->add_option("--manifest", eval_manifest, "Dataset manifest (JSON Lines)")->required();
  evaluate->add_option("--split", eval_split, "Split to score")
      ->check(CLI::IsMember({"train", "val", "test"}));
  evaluate->add_option("--checkpoint", eval_ckpt, "Model checkpoint")->required();
  evaluate->add_option("--tolerance", eval_tolerance, "Hit tolerance (s)");
  evaluate->add_option("--out", eval_out, "Report JSON ('-' = stdout)");
  add_peak_options(evaluate, eval_peaks);

  // baseline
  auto* baseline = app.add_subcommand("baseline", "Checkerboard-novelty boundaries (no training)");
  std::string base_audio;
  std::string base_manifest;
  std::string base_split = "test";
  double base_tolerance = 3.0;
  std::string base_out;
  gamseg::BaselineConfig base_cfg;
  baseline->add_option("--audio", base_audio, "Input WAV file");
  baseline->add_option("--manifest", base_manifest, "Score a manifest split instead of one file");
  baseline->add_option("--split", base_split, "Split to score with --manifest")
      ->check(CLI::IsMember({"train", "val", "test"}));
  baseline->add_option("--tolerance", base_tolerance, "Hit tolerance (s) with --manifest");
  baseline->add_option("--kernel-half-width", base_cfg.kernel_half_width,
                       "Checkerboard kernel half width (frames)");
  baseline->add_option("--out", base_out, "Predictions or report ('-' = stdout)");
  add_peak_options(baseline, base_cfg.peaks);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  auto log = [&g](const std::string& msg) {
    if (g.verbose) std::cerr << msg << '\n';
  };

  try {
    if (*extract) {
      const auto fm = gamseg::extract_features(gamseg::decode_audio(extract_audio), features);
      gamseg::write_feature_file(fm, extract_out);
      log("wrote " + std::to_string(fm.rows()) + "x" + std::to_string(fm.cols()) + " features");
    } else if (*convert) {
      const auto track = convert_from == "savgm" ? gamseg::parse_annotation_file(convert_in)
                                                 : gamseg::parse_two_column_file(convert_in);
      write_output(convert_out, convert_to == "savgm" ? gamseg::serialize_annotation_file(track)
                                                      : gamseg::serialize_two_column(track));
    } else if (*stats) {
      std::vector<gamseg::AnnotationTrack> tracks;
      if (!stats_manifest.empty()) {
        const auto m = gamseg::load_manifest(stats_manifest);
        for (const auto& e : m.entries) {
          if (stats_split.empty() || e.split == stats_split) tracks.push_back(gamseg::load_annotation(e));
        }
      }
      for (const auto& f : stats_files) {
        tracks.push_back(stats_format == "savgm" ? gamseg::parse_annotation_file(f)
                                                 : gamseg::parse_two_column_file(f));
      }
      if (tracks.empty()) throw gamseg::EmptyManifest("no annotations given");
      write_output(stats_out, gamseg::corpus_stats(tracks).to_json().dump(2) + "\n");
    } else if (*synth) {
      corpus.seed = g.seed;
      const auto m = gamseg::generate_corpus(synth_out, corpus);
      log("wrote " + std::to_string(m.entries.size()) + " tracks to " + synth_out);
    } else if (*train) {
      train_cfg.seed = g.seed;
      train_cfg.threads = g.threads;
      const auto manifest = gamseg::load_manifest(train_manifest);
      std::optional<gamseg::ModelCheckpoint> init;
      if (!train_init.empty()) init = gamseg::load_checkpoint(train_init);
      const auto result = gamseg::train(
          manifest, train_arch.build(), train_cfg, init ? &*init : nullptr, features,
          [&](const gamseg::EpochMetrics& m) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "epoch %zu loss %.6f val P %.3f R %.3f F1 %.3f", m.epoch,
                          m.train_loss, m.val_precision, m.val_recall, m.val_f1);
            log(buf);
          });
      gamseg::save_checkpoint(result.final_checkpoint, train_out);
      gamseg::save_checkpoint(result.best_checkpoint,
                              train_best.empty() ? train_out + ".best" : train_best);
      gamseg::detail::write_text(train_log.empty() ? train_out + ".metrics.csv" : train_log,
                                 gamseg::metrics_csv(result.log));
    } else if (*tune) {
      tune_cfg.seed = g.seed;
      tune_cfg.threads = g.threads;
      const auto manifest = gamseg::load_manifest(tune_manifest);
      const auto results = gamseg::grid_search(manifest, tune_arch.build(), parse_grid(tune_grid),
                                               tune_cfg, features, tune_cap);
      write_output(tune_out, gamseg::grid_results_json(results).dump(2) + "\n");
    } else if (*predict) {
      const auto ckpt = gamseg::load_checkpoint(predict_ckpt);
      const auto result = gamseg::predict_boundaries(fs::path(predict_audio), ckpt, predict_peaks);
      write_output(predict_out, gamseg::format_predictions(result.prediction));
      if (!predict_logits.empty()) {
        gamseg::FeatureMatrix curve;
        curve.data = gamseg::Matrix(1, result.logits.size());
        curve.data.data = result.logits;
        curve.frame_rate = result.frame_rate;
        curve.names = {{"logits", 1}};
        gamseg::write_feature_file(curve, predict_logits);
      }
    } else if (*evaluate) {
      const auto manifest = gamseg::load_manifest(eval_manifest);
      const auto ckpt = gamseg::load_checkpoint(eval_ckpt);
      const auto report = gamseg::evaluate_corpus(manifest, eval_split, ckpt, eval_tolerance, eval_peaks);
      write_output(eval_out, report_with_format(report).dump(2) + "\n");
    } else if (*baseline) {
      if (base_audio.empty() == base_manifest.empty()) {
        std::cerr << "baseline: give exactly one of --audio or --manifest\n";
        return 1;
      }
      if (!base_audio.empty()) {
        const auto r = gamseg::baseline_segment(fs::path(base_audio), base_cfg, features);
        write_output(base_out, gamseg::format_predictions(r.prediction));
      } else {
        const auto manifest = gamseg::load_manifest(base_manifest);
        const auto entries = manifest.split(base_split);
        if (entries.empty()) throw gamseg::EmptyManifest("split '" + base_split + "' has no entries");
        gamseg::EvalReport report;
        report.tolerance = base_tolerance;
        for (const auto& e : entries) {
          const auto r = gamseg::baseline_segment(e.audio_path, base_cfg, features);
          report.add(e.id(), gamseg::evaluate_track(r.prediction.times,
                                                    gamseg::load_annotation(e).interior_times(),
                                                    base_tolerance));
        }
        report.aggregate();
        write_output(base_out, report.to_json().dump(2) + "\n");
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "gamseg: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

int main(int argc, char** argv) { return run_cli(argc, argv); }
