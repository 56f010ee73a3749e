#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"

#include "gamseg/augment.hpp"
#include "gamseg/checkpoint.hpp"
#include "gamseg/error.hpp"
#include "gamseg/features.hpp"
#include "gamseg/inference.hpp"
#include "gamseg/manifest.hpp"
#include "gamseg/model.hpp"
#include "gamseg/postprocess.hpp"
#include "gamseg/rng.hpp"

namespace gamseg {

struct AugmentConfig {
  double tempo_min = 0.8;
  double tempo_max = 1.2;
  double pitch_min = -2.0;
  double pitch_max = 2.0;
  std::size_t copies_per_track = 1;

  AugmentBounds bounds() const {
    return {tempo_min, tempo_max, std::max(std::abs(pitch_min), std::abs(pitch_max))};
  }
};

struct TrainingConfig {
  std::size_t epochs = 60;
  double lr = 0.01;
  double pos_weight = 100.0;
  std::size_t chunk_frames = 2048;
  std::size_t chunk_overlap = 256;
  std::uint64_t seed = 0;
  AugmentConfig augment;
  std::size_t smear = 0;
  PeakParams peaks;
  double tolerance = 3.0;
  std::size_t grid_epochs = 10;
  std::size_t threads = 1;

  ChunkSpec chunks() const { return {chunk_frames, chunk_overlap}; }

  void validate() const {
    chunks().validate();
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (!(pos_weight > 0.0)) throw ConfigError("pos_weight must be positive");
    if (!(augment.tempo_min > 0.0) || augment.tempo_max < augment.tempo_min) {
      throw ConfigError("tempo range must satisfy 0 < min <= max");
    }
    if (augment.pitch_max < augment.pitch_min || std::abs(augment.pitch_min) > 12.0 ||
        std::abs(augment.pitch_max) > 12.0) {
      throw ConfigError("pitch range must lie within [-12, 12] semitones");
    }
    if (!(tolerance > 0.0)) throw ConfigError("tolerance must be positive");
  }
};

inline void to_json(nlohmann::json& j, const TrainingConfig& c) {
  j = {{"epochs", c.epochs},
       {"lr", c.lr},
       {"pos_weight", c.pos_weight},
       {"chunk_frames", c.chunk_frames},
       {"chunk_overlap", c.chunk_overlap},
       {"seed", c.seed},
       {"augment",
        {{"tempo_range", {c.augment.tempo_min, c.augment.tempo_max}},
         {"pitch_semitones", {c.augment.pitch_min, c.augment.pitch_max}},
         {"copies_per_track", c.augment.copies_per_track}}},
       {"smear", c.smear},
       {"peak_half_width", c.peaks.half_width},
       {"peak_threshold", c.peaks.threshold},
       {"tolerance", c.tolerance}};
}

inline void from_json(const nlohmann::json& j, TrainingConfig& c) {
  c = TrainingConfig{};
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.pos_weight = j.value("pos_weight", c.pos_weight);
  c.chunk_frames = j.value("chunk_frames", c.chunk_frames);
  c.chunk_overlap = j.value("chunk_overlap", c.chunk_overlap);
  c.seed = j.value("seed", c.seed);
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    if (a.contains("tempo_range")) {
      c.augment.tempo_min = a.at("tempo_range").at(0).get<double>();
      c.augment.tempo_max = a.at("tempo_range").at(1).get<double>();
    }
    if (a.contains("pitch_semitones")) {
      c.augment.pitch_min = a.at("pitch_semitones").at(0).get<double>();
      c.augment.pitch_max = a.at("pitch_semitones").at(1).get<double>();
    }
    c.augment.copies_per_track = a.value("copies_per_track", c.augment.copies_per_track);
  }
  c.smear = j.value("smear", c.smear);
  c.peaks.half_width = j.value("peak_half_width", c.peaks.half_width);
  c.peaks.threshold = j.value("peak_threshold", c.peaks.threshold);
  c.tolerance = j.value("tolerance", c.tolerance);
}

// ---------------------------------------------------------------------------
// Chunking
// ---------------------------------------------------------------------------

struct TrainingChunk {
  Matrix features;             // rows × chunk_frames, zero beyond `valid`
  std::vector<float> targets;  // chunk_frames
  std::vector<float> mask;     // 1 on the first `valid` frames
  std::size_t start = 0;
  std::size_t valid = 0;
};

inline std::vector<TrainingChunk> make_training_chunks(const FeatureMatrix& fm,
                                                       const FrameTargets& targets,
                                                       const ChunkSpec& spec) {
  const std::size_t total = fm.cols();
  if (targets.values.size() != total) {
    throw LengthMismatch(std::to_string(total) + " feature frames, " +
                         std::to_string(targets.values.size()) + " targets");
  }
  std::vector<TrainingChunk> out;
  for (std::size_t start : chunk_starts(total, spec)) {
    TrainingChunk c;
    c.start = start;
    c.valid = std::min(spec.frames, total - start);
    c.features = Matrix(fm.rows(), spec.frames);
    for (std::size_t r = 0; r < fm.rows(); ++r) {
      for (std::size_t t = 0; t < c.valid; ++t) c.features(r, t) = fm.data(r, start + t);
    }
    c.targets.assign(spec.frames, 0.0F);
    c.mask.assign(spec.frames, 0.0F);
    for (std::size_t t = 0; t < c.valid; ++t) {
      c.targets[t] = targets.values[start + t];
      c.mask[t] = 1.0F;
    }
    out.push_back(std::move(c));
  }
  return out;
}

/// Pairwise max so targets line up with a max-pooled time axis.
inline std::vector<float> pool_targets(std::span<const float> v) {
  std::vector<float> out((v.size() + 1) / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = v[2 * i];
    if (2 * i + 1 < v.size()) out[i] = std::max(out[i], v[2 * i + 1]);
  }
  return out;
}

/// Weighted BCE over one chunk. Only the unmasked prefix runs through the
/// network, so padding can affect neither the recurrent state nor the loss.
template <typename T>
nn::TensorPtr<T> chunk_loss(const nn::Model<T>& model, const TrainingChunk& chunk,
                            double pos_weight, const nn::ForwardOptions<T>& opt = {}) {
  std::size_t valid = 0;
  while (valid < chunk.mask.size() && chunk.mask[valid] != 0.0F) ++valid;
  if (valid == 0) throw LengthMismatch("chunk has no unmasked frames");
  const Matrix input = slice_columns(chunk.features, 0, valid);
  auto logits = model.forward(input, opt);
  std::span<const float> targets(chunk.targets.data(), valid);
  if (model.architecture().max_pool) {
    const auto pooled = pool_targets(targets);
    return nn::weighted_bce_with_logits(opt.tape, logits, pooled, pos_weight);
  }
  return nn::weighted_bce_with_logits(opt.tape, logits, targets, pos_weight);
}

// ---------------------------------------------------------------------------
// Data preparation
// ---------------------------------------------------------------------------

struct PreparedTrack {
  std::string id;
  FeatureMatrix features;
  AnnotationTrack annotation;
  bool augmented = false;
};

inline FrameTargets targets_for(const PreparedTrack& t, std::size_t smear) {
  return boundaries_to_frame_targets(t.annotation, t.features.frame_rate, t.features.cols(), smear);
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be
/// written to per-index slots; the first exception is rethrown.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&]() {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// Loads entries and extracts features. With `copies` > 0 each entry also
/// yields that many augmented versions, with tempo and pitch drawn from a
/// stream seeded by (seed, entry, copy). Output order is entry-major and
/// independent of the thread count.
inline std::vector<PreparedTrack> prepare_tracks(const std::vector<ManifestEntry>& entries,
                                                 const FeatureConfig& features,
                                                 const AugmentConfig& augment, std::size_t copies,
                                                 std::uint64_t seed, std::size_t threads = 1) {
  const std::size_t per_entry = 1 + copies;
  std::vector<PreparedTrack> out(entries.size() * per_entry);
  parallel_for(out.size(), threads, [&](std::size_t job) {
    const std::size_t index = job / per_entry;
    const std::size_t copy = job % per_entry;
    const auto& e = entries[index];
    try {
      AudioClip clip = decode_audio(e.audio_path);
      if (clip.sample_rate != features.sample_rate) clip = resample(clip, features.sample_rate);
      AnnotationTrack track = load_annotation(e);
      PreparedTrack& p = out[job];
      p.id = e.id();
      if (copy > 0) {
        Rng rng(mix_seed(mix_seed(seed, index), copy));
        const double tempo = rng.uniform(augment.tempo_min, augment.tempo_max);
        const double pitch = rng.uniform(augment.pitch_min, augment.pitch_max);
        auto aug = augment_track(clip, track, tempo, pitch, augment.bounds());
        clip = std::move(aug.clip);
        track = std::move(aug.track);
        p.id += "#aug" + std::to_string(copy);
        p.augmented = true;
      }
      p.features = extract_features(clip, features);
      p.annotation = std::move(track);
    } catch (const std::exception& ex) {
      throw FeatureExtractionFailed(e.audio_path.string() + ": " + ex.what());
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_precision = 0.0;
  double val_recall = 0.0;
  double val_f1 = 0.0;
};

struct TrainResult {
  ModelCheckpoint final_checkpoint;
  ModelCheckpoint best_checkpoint;
  std::size_t best_epoch = 0;
  std::vector<EpochMetrics> log;
};

inline std::string metrics_csv(const std::vector<EpochMetrics>& log) {
  std::string out = "epoch,train_loss,val_precision,val_recall,val_f1\n";
  char buf[160];
  for (const auto& m : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.6f,%.6f,%.6f\n", m.epoch, m.train_loss,
                  m.val_precision, m.val_recall, m.val_f1);
    out += buf;
  }
  return out;
}

/// Mean precision, recall and F1 of the model over prepared tracks.
template <typename T>
EpochMetrics score_tracks(const nn::Model<T>& model, const std::vector<PreparedTrack>& tracks,
                          const TrainingConfig& cfg) {
  EvalReport report;
  report.tolerance = cfg.tolerance;
  for (const auto& t : tracks) {
    const auto logits = predict_logits(model, t.features.data, cfg.chunks());
    const double fps =
        model.architecture().max_pool ? t.features.frame_rate / 2.0 : t.features.frame_rate;
    const auto pred = peak_pick(logits, fps, cfg.peaks);
    report.add(t.id, evaluate_track(pred.times, t.annotation.interior_times(), cfg.tolerance));
  }
  report.aggregate();
  EpochMetrics m;
  m.val_precision = report.precision.mean;
  m.val_recall = report.recall.mean;
  m.val_f1 = report.f1.mean;
  return m;
}

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Sequential Adam over shuffled chunks, one chunk per step. The best
/// checkpoint maximizes val F1 (earliest epoch wins ties); without val tracks
/// it minimizes train loss.
inline TrainResult train_prepared(const std::vector<PreparedTrack>& train_tracks,
                                  const std::vector<PreparedTrack>& val_tracks,
                                  const nn::Architecture& arch, const TrainingConfig& cfg,
                                  const FeatureConfig& features,
                                  const ModelCheckpoint* init = nullptr,
                                  const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train_tracks.empty()) throw EmptyManifest("no training tracks");
  const nn::Architecture& used = init ? init->architecture() : arch;
  for (const auto& t : train_tracks) {
    if (t.features.rows() != used.n_features) {
      throw FeatureExtractionFailed(t.id + ": features have " + std::to_string(t.features.rows()) +
                                    " rows, model expects " + std::to_string(used.n_features));
    }
  }

  ModelCheckpoint ckpt;
  ckpt.model = init ? init->model : nn::Model<float>(arch, mix_seed(cfg.seed, 1));
  ckpt.features = features;
  ckpt.training = cfg;
  ckpt.seed = cfg.seed;

  std::vector<TrainingChunk> chunks;
  for (const auto& t : train_tracks) {
    auto c = make_training_chunks(t.features, targets_for(t, cfg.smear), cfg.chunks());
    std::move(c.begin(), c.end(), std::back_inserter(chunks));
  }

  TrainResult result;
  nn::AdamState<float> adam;
  const nn::AdamConfig adam_cfg{cfg.lr};
  std::vector<std::size_t> order(chunks.size());
  double best_score = -std::numeric_limits<double>::infinity();
  std::uint64_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(mix_seed(cfg.seed, 1000 + epoch));
    rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    for (std::size_t idx : order) {
      nn::Tape<float> tape;
      nn::ForwardOptions<float> opt;
      opt.mode = nn::Mode::Train;
      opt.dropout_seed = mix_seed(cfg.seed, 1ULL << 32 | step++);
      opt.tape = &tape;
      ckpt.model.zero_grad();
      auto loss = chunk_loss(ckpt.model, chunks[idx], cfg.pos_weight, opt);
      tape.backward(loss);
      nn::adam_step(ckpt.model.params(), adam, adam_cfg);
      loss_sum += static_cast<double>(loss->data[0]);
    }

    EpochMetrics m;
    if (!val_tracks.empty()) m = score_tracks(ckpt.model, val_tracks, cfg);
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(chunks.size());
    result.log.push_back(m);
    if (on_epoch) on_epoch(m);

    const double score = val_tracks.empty() ? -m.train_loss : m.val_f1;
    if (score > best_score) {
      best_score = score;
      result.best_epoch = epoch;
      result.best_checkpoint = ckpt;
    }
  }
  if (cfg.epochs == 0) result.best_checkpoint = ckpt;
  result.final_checkpoint = std::move(ckpt);
  return result;
}

/// Trains on the manifest's train split (plus augmented copies), validating on
/// its val split. Pass `init` to continue from an earlier checkpoint; its
/// architecture and feature configuration then take precedence.
inline TrainResult train(const DatasetManifest& manifest, const nn::Architecture& arch,
                         const TrainingConfig& cfg, const ModelCheckpoint* init = nullptr,
                         const FeatureConfig& features = {}, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const auto train_entries = manifest.split("train");
  if (train_entries.empty()) throw EmptyManifest("manifest has no train entries");
  const FeatureConfig& fc = init ? init->features : features;
  const std::size_t expected = init ? init->architecture().n_features : arch.n_features;
  if (fc.n_features() != expected) {
    throw FeatureExtractionFailed("feature configuration yields " + std::to_string(fc.n_features()) +
                                  " rows, model expects " + std::to_string(expected));
  }
  const auto train_tracks = prepare_tracks(train_entries, fc, cfg.augment,
                                           cfg.augment.copies_per_track, cfg.seed, cfg.threads);
  const auto val_tracks = prepare_tracks(manifest.split("val"), fc, cfg.augment, 0, cfg.seed,
                                         cfg.threads);
  return train_prepared(train_tracks, val_tracks, arch, cfg, fc, init, on_epoch);
}

// ---------------------------------------------------------------------------
// Grid search
// ---------------------------------------------------------------------------

inline constexpr std::size_t kDefaultGridCap = 64;

using HyperGrid = std::map<std::string, std::vector<double>>;

struct GridResult {
  std::map<std::string, double> params;
  double lr = 0.0;
  double pos_weight = 0.0;
  EpochMetrics metrics;  // final epoch of the reduced run
};

inline std::size_t grid_size(const HyperGrid& grid) {
  if (grid.empty()) return 0;
  std::size_t n = 1;
  for (const auto& [key, values] : grid) n *= values.size();
  return n;
}

inline void apply_hyperparameter(TrainingConfig& cfg, const std::string& key, double value) {
  if (key == "lr") {
    cfg.lr = value;
  } else if (key == "pos_weight") {
    cfg.pos_weight = value;
  } else if (key == "smear") {
    cfg.smear = static_cast<std::size_t>(std::llround(value));
  } else if (key == "threshold") {
    cfg.peaks.threshold = value;
  } else if (key == "half_width") {
    cfg.peaks.half_width = static_cast<std::size_t>(std::llround(value));
  } else {
    throw ConfigError("unknown grid hyperparameter '" + key +
                      "' (expected lr, pos_weight, smear, threshold, half_width)");
  }
}

/// Trains every combination for cfg.grid_epochs epochs and ranks by val F1,
/// breaking ties by lr then pos_weight, both ascending.
inline std::vector<GridResult> grid_search(const std::vector<PreparedTrack>& train_tracks,
                                           const std::vector<PreparedTrack>& val_tracks,
                                           const nn::Architecture& arch, const HyperGrid& grid,
                                           const TrainingConfig& base, const FeatureConfig& features,
                                           std::size_t cap = kDefaultGridCap) {
  const std::size_t size = grid_size(grid);
  if (size == 0 || size > cap) throw GridTooLarge(size, cap);
  if (val_tracks.empty()) throw EmptyManifest("grid search needs a val split");
  std::vector<GridResult> results;
  for (std::size_t combo = 0; combo < size; ++combo) {
    TrainingConfig cfg = base;
    cfg.epochs = base.grid_epochs;
    GridResult r;
    std::size_t rest = combo;
    for (auto it = grid.rbegin(); it != grid.rend(); ++it) {
      const double v = it->second[rest % it->second.size()];
      rest /= it->second.size();
      apply_hyperparameter(cfg, it->first, v);
      r.params[it->first] = v;
    }
    r.lr = cfg.lr;
    r.pos_weight = cfg.pos_weight;
    const auto trained = train_prepared(train_tracks, val_tracks, arch, cfg, features);
    r.metrics = trained.log.empty() ? EpochMetrics{} : trained.log.back();
    results.push_back(std::move(r));
  }
  std::stable_sort(results.begin(), results.end(), [](const GridResult& a, const GridResult& b) {
    if (a.metrics.val_f1 != b.metrics.val_f1) return a.metrics.val_f1 > b.metrics.val_f1;
    if (a.lr != b.lr) return a.lr < b.lr;
    return a.pos_weight < b.pos_weight;
  });
  return results;
}

inline std::vector<GridResult> grid_search(const DatasetManifest& manifest,
                                           const nn::Architecture& arch, const HyperGrid& grid,
                                           const TrainingConfig& cfg,
                                           const FeatureConfig& features = {},
                                           std::size_t cap = kDefaultGridCap) {
  const std::size_t size = grid_size(grid);
  if (size == 0 || size > cap) throw GridTooLarge(size, cap);
  const auto train_entries = manifest.split("train");
  if (train_entries.empty()) throw EmptyManifest("manifest has no train entries");
  const auto train_tracks = prepare_tracks(train_entries, features, cfg.augment,
                                           cfg.augment.copies_per_track, cfg.seed, cfg.threads);
  const auto val_tracks =
      prepare_tracks(manifest.split("val"), features, cfg.augment, 0, cfg.seed, cfg.threads);
  return grid_search(train_tracks, val_tracks, arch, grid, cfg, features, cap);
}

inline nlohmann::json grid_results_json(const std::vector<GridResult>& results) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    rows.push_back({{"rank", i + 1},
                    {"params", r.params},
                    {"train_loss", r.metrics.train_loss},
                    {"val_precision", r.metrics.val_precision},
                    {"val_recall", r.metrics.val_recall},
                    {"val_f1", r.metrics.val_f1}});
  }
  return rows;
}

}  // namespace gamseg
