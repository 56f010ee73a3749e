#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "gamseg/audio_io.hpp"
#include "gamseg/error.hpp"
#include "gamseg/features.hpp"
#include "gamseg/matrix.hpp"
#include "gamseg/postprocess.hpp"

namespace gamseg {

inline constexpr std::size_t kMaxSsmFrames = 20000;

struct SelfSimilarityMatrix {
  Matrix values;
  double frame_rate = 0.0;
  std::size_t size() const { return values.rows; }
};

/// Cosine similarity between every pair of feature columns.
inline SelfSimilarityMatrix compute_ssm(const Matrix& features, double frame_rate) {
  const std::size_t n = features.cols;
  if (n > kMaxSsmFrames) {
    throw SequenceTooLong(std::to_string(n) + " frames exceeds the SSM cap of " +
                          std::to_string(kMaxSsmFrames));
  }
  // Unit-normalized columns, stored frame-major for contiguous dot products.
  std::vector<double> unit(n * features.rows, 0.0);
  std::vector<char> nonzero(n, 0);
  for (std::size_t t = 0; t < n; ++t) {
    double norm = 0.0;
    for (std::size_t r = 0; r < features.rows; ++r) norm += features(r, t) * features(r, t);
    norm = std::sqrt(norm);
    if (norm == 0.0) continue;
    nonzero[t] = 1;
    for (std::size_t r = 0; r < features.rows; ++r) {
      unit[t * features.rows + r] = features(r, t) / norm;
    }
  }
  SelfSimilarityMatrix ssm{Matrix(n, n), frame_rate};
  for (std::size_t i = 0; i < n; ++i) {
    ssm.values(i, i) = 1.0;
    if (!nonzero[i]) continue;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!nonzero[j]) continue;
      double dot = 0.0;
      const double* a = &unit[i * features.rows];
      const double* b = &unit[j * features.rows];
      for (std::size_t r = 0; r < features.rows; ++r) dot += a[r] * b[r];
      dot = std::clamp(dot, -1.0, 1.0);
      ssm.values(i, j) = dot;
      ssm.values(j, i) = dot;
    }
  }
  return ssm;
}

inline SelfSimilarityMatrix compute_ssm(const FeatureMatrix& fm) {
  return compute_ssm(fm.data, fm.frame_rate);
}

/// 2L×2L checkerboard (+1 on the diagonal blocks, −1 off) with a Gaussian
/// taper of σ = L/2 measured from the kernel center.
inline Matrix checkerboard_kernel(std::size_t half_width) {
  const std::size_t n = 2 * half_width;
  const double sigma = static_cast<double>(half_width) / 2.0;
  Matrix k(n, n);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) {
      const double da = static_cast<double>(a) - static_cast<double>(half_width) + 0.5;
      const double db = static_cast<double>(b) - static_cast<double>(half_width) + 0.5;
      const double sign = ((a < half_width) == (b < half_width)) ? 1.0 : -1.0;
      k(a, b) = sign * std::exp(-(da * da + db * db) / (2.0 * sigma * sigma));
    }
  }
  return k;
}

/// Novelty at frame i correlates the kernel with ssm[i−L, i+L) × [i−L, i+L).
/// Only positions where the kernel fits (L ≤ i ≤ T−L) are computed; the rest
/// stay zero. The computed values are min-max scaled to [0, 1] and a flat
/// curve maps to all zeros.
inline std::vector<double> foote_novelty(const SelfSimilarityMatrix& ssm, std::size_t half_width) {
  const std::size_t n = ssm.size();
  if (half_width == 0) throw KernelTooLarge("kernel half width must be at least 1");
  if (2 * half_width > n) {
    throw KernelTooLarge("kernel width " + std::to_string(2 * half_width) + " exceeds " +
                         std::to_string(n) + " frames");
  }
  const Matrix kernel = checkerboard_kernel(half_width);
  const std::size_t width = 2 * half_width;
  std::vector<double> curve(n, 0.0);
  const std::size_t first = half_width;
  const std::size_t last = n - half_width;
  for (std::size_t i = first; i <= last; ++i) {
    const std::size_t base = i - half_width;
    double acc = 0.0;
    for (std::size_t a = 0; a < width; ++a) {
      for (std::size_t b = 0; b < width; ++b) acc += kernel(a, b) * ssm.values(base + a, base + b);
    }
    curve[i] = acc;
  }
  const auto [lo, hi] = std::minmax_element(curve.begin() + static_cast<std::ptrdiff_t>(first),
                                            curve.begin() + static_cast<std::ptrdiff_t>(last) + 1);
  const double min = *lo;
  const double range = *hi - min;
  for (std::size_t i = first; i <= last; ++i) {
    curve[i] = range > 1e-12 * std::max(1.0, std::abs(*hi)) ? (curve[i] - min) / range : 0.0;
  }
  return curve;
}

struct BaselineConfig {
  std::size_t kernel_half_width = 128;
  PeakParams peaks{64, 0.3};
};

struct BaselineResult {
  BoundaryPrediction prediction;
  std::vector<double> novelty;
  double frame_rate = 0.0;
};

inline BaselineResult baseline_segment(const FeatureMatrix& fm, const BaselineConfig& cfg = {}) {
  BaselineResult out;
  out.frame_rate = fm.frame_rate;
  out.novelty = foote_novelty(compute_ssm(fm), cfg.kernel_half_width);
  out.prediction = peak_pick_scores(out.novelty, fm.frame_rate, cfg.peaks);
  return out;
}

inline BaselineResult baseline_segment(const std::filesystem::path& audio,
                                       const BaselineConfig& cfg = {},
                                       const FeatureConfig& features = {}) {
  return baseline_segment(extract_features(decode_audio(audio), features), cfg);
}

}  // namespace gamseg
