#pragma once

#include <algorithm>
#include <filesystem>
#include <string_view>
#include <vector>

#include "gamseg/audio_io.hpp"
#include "gamseg/checkpoint.hpp"
#include "gamseg/error.hpp"
#include "gamseg/features.hpp"
#include "gamseg/manifest.hpp"
#include "gamseg/model.hpp"
#include "gamseg/postprocess.hpp"

namespace gamseg {

struct ChunkSpec {
  std::size_t frames = 2048;
  std::size_t overlap = 256;

  std::size_t stride() const { return frames - overlap; }
  void validate() const {
    if (frames == 0) throw ConfigError("chunk_frames must be positive");
    if (overlap >= frames) throw ConfigError("chunk_overlap must be smaller than chunk_frames");
  }
};

/// Window starts 0, stride, 2·stride, … until a window reaches the end.
inline std::vector<std::size_t> chunk_starts(std::size_t total, const ChunkSpec& spec) {
  spec.validate();
  std::vector<std::size_t> starts{0};
  while (starts.back() + spec.frames < total) starts.push_back(starts.back() + spec.stride());
  return starts;
}

inline Matrix slice_columns(const Matrix& m, std::size_t start, std::size_t count) {
  Matrix out(m.rows, count);
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < count; ++c) out(r, c) = m(r, start + c);
  }
  return out;
}

/// Eval-mode logits over a whole track. Long inputs run in overlapping
/// chunks; each chunk contributes its center region and the first and last
/// chunks also keep their outer edge. With max pooling the track runs in one
/// piece so the halved time axis stays aligned.
template <typename T>
std::vector<double> predict_logits(const nn::Model<T>& model, const Matrix& features,
                                   const ChunkSpec& spec = {}) {
  const std::size_t total = features.cols;
  std::vector<double> logits;
  auto run = [&](const Matrix& m) {
    const auto out = model.forward(m);
    return std::vector<double>(out->data.begin(), out->data.end());
  };
  if (model.architecture().max_pool || total <= spec.frames) return run(features);

  const auto starts = chunk_starts(total, spec);
  const std::size_t lead = spec.overlap / 2;
  logits.reserve(total);
  for (std::size_t k = 0; k < starts.size(); ++k) {
    const std::size_t start = starts[k];
    const std::size_t len = std::min(spec.frames, total - start);
    const auto chunk = run(slice_columns(features, start, len));
    const std::size_t keep_from = k == 0 ? start : start + lead;
    const std::size_t keep_to = k + 1 == starts.size() ? total : starts[k + 1] + lead;
    for (std::size_t i = keep_from; i < keep_to; ++i) logits.push_back(chunk[i - start]);
  }
  return logits;
}

struct PredictionResult {
  BoundaryPrediction prediction;
  std::vector<double> logits;
  double frame_rate = 0.0;  // of the logit curve
};

inline PredictionResult predict_features(const ModelCheckpoint& ckpt, const FeatureMatrix& fm,
                                         const PeakParams& peaks = {}, const ChunkSpec& spec = {}) {
  PredictionResult out;
  out.logits = predict_logits(ckpt.model, fm.data, spec);
  out.frame_rate = ckpt.architecture().max_pool ? fm.frame_rate / 2.0 : fm.frame_rate;
  out.prediction = peak_pick(out.logits, out.frame_rate, peaks);
  return out;
}

inline PredictionResult predict_boundaries(const AudioClip& clip, const ModelCheckpoint& ckpt,
                                           const PeakParams& peaks = {}, const ChunkSpec& spec = {}) {
  return predict_features(ckpt, extract_features(clip, ckpt.features), peaks, spec);
}

inline PredictionResult predict_boundaries(const std::filesystem::path& audio,
                                           const ModelCheckpoint& ckpt,
                                           const PeakParams& peaks = {}, const ChunkSpec& spec = {}) {
  return predict_boundaries(decode_audio(audio), ckpt, peaks, spec);
}

/// Scores every entry of one split. References drop the b/e markers.
inline EvalReport evaluate_corpus(const DatasetManifest& manifest, std::string_view split,
                                  const ModelCheckpoint& ckpt, double tolerance = 3.0,
                                  const PeakParams& peaks = {}, const ChunkSpec& spec = {}) {
  const auto entries = manifest.split(split);
  if (entries.empty()) throw EmptyManifest("split '" + std::string(split) + "' has no entries");
  EvalReport report;
  report.tolerance = tolerance;
  for (const auto& e : entries) {
    const auto pred = predict_boundaries(e.audio_path, ckpt, peaks, spec);
    const auto ref = load_annotation(e).interior_times();
    report.add(e.id(), evaluate_track(pred.prediction.times, ref, tolerance));
  }
  report.aggregate();
  return report;
}

}  // namespace gamseg
