#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include "gamseg/annotations.hpp"
#include "gamseg/audio_io.hpp"
#include "gamseg/error.hpp"
#include "gamseg/features.hpp"
#include "gamseg/fft.hpp"

namespace gamseg {

inline constexpr std::size_t kVocoderWindow = 2048;
inline constexpr std::size_t kVocoderHop = 512;

/// Inverse of stft(): Hann-windowed overlap-add normalized by the summed
/// squared window, centered frames trimmed, output cut or zero-padded to
/// `length` samples.
inline std::vector<double> istft(const std::vector<std::vector<dsp::Complex>>& frames,
                                 std::size_t window, std::size_t hop, std::size_t length) {
  const auto w = detail::hann(window);
  const std::size_t full = window + hop * (frames.empty() ? 0 : frames.size() - 1);
  std::vector<double> acc(full, 0.0);
  std::vector<double> norm(full, 0.0);
  std::vector<dsp::Complex> spec(window / 2 + 1);
  std::vector<double> buf(window);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    spec.assign(frames[t].begin(), frames[t].end());
    dsp::irfft(spec, buf);
    for (std::size_t i = 0; i < window; ++i) {
      acc[t * hop + i] += buf[i] / static_cast<double>(window) * w[i];
      norm[t * hop + i] += w[i] * w[i];
    }
  }
  std::vector<double> out(length, 0.0);
  const std::size_t offset = window / 2;
  for (std::size_t n = 0; n < length && n + offset < full; ++n) {
    const double d = norm[n + offset];
    out[n] = d > 1e-10 ? acc[n + offset] / d : acc[n + offset];
  }
  return out;
}

namespace detail {

/// For each bin, the spectral peak whose region it belongs to. Regions split
/// at the lowest bin between neighbouring peaks.
inline std::vector<std::size_t> peak_owners(const std::vector<double>& mag) {
  const std::size_t n = mag.size();
  std::vector<std::size_t> peaks;
  for (std::size_t k = 0; k < n; ++k) {
    const bool left = k == 0 || mag[k] > mag[k - 1];
    const bool right = k + 1 == n || mag[k] >= mag[k + 1];
    if (left && right) peaks.push_back(k);
  }
  std::vector<std::size_t> owner(n, 0);
  if (peaks.empty()) {
    for (std::size_t k = 0; k < n; ++k) owner[k] = k;
    return owner;
  }
  std::size_t from = 0;
  for (std::size_t i = 0; i < peaks.size(); ++i) {
    std::size_t to = n;
    if (i + 1 < peaks.size()) {
      to = peaks[i];
      for (std::size_t k = peaks[i]; k <= peaks[i + 1]; ++k) {
        if (mag[k] < mag[to]) to = k;
      }
      to = std::max(to, peaks[i] + 1);
    }
    for (std::size_t k = from; k < to; ++k) owner[k] = peaks[i];
    from = to;
  }
  return owner;
}

}  // namespace detail

/// Phase-vocoder time stretch: rate r > 1 speeds up, output length is
/// round(len / r). Peak bins carry the accumulated phase; the other bins keep
/// their analysis phase offset from the peak they belong to (identity phase
/// locking), so partials spread over several bins stay coherent.
inline std::vector<double> time_stretch(std::span<const double> samples, double rate) {
  if (!(rate > 0.0) || !std::isfinite(rate)) throw RateOutOfRange("stretch rate must be positive");
  const auto spec = stft(samples, kVocoderWindow, kVocoderHop);
  const std::size_t bins = kVocoderWindow / 2 + 1;
  const std::size_t n_frames = spec.size();
  std::vector<double> advance(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    advance[k] = std::numbers::pi * static_cast<double>(kVocoderHop) * static_cast<double>(k) /
                 static_cast<double>(bins - 1);
  }
  auto column = [&](std::size_t t, std::size_t k) {
    return t < n_frames ? spec[t][k] : dsp::Complex{};
  };
  std::vector<double> phase(bins);
  for (std::size_t k = 0; k < bins; ++k) phase[k] = std::arg(spec[0][k]);

  std::vector<std::vector<dsp::Complex>> out;
  std::vector<double> mag(bins);
  for (std::size_t step_index = 0;; ++step_index) {
    const double step = static_cast<double>(step_index) * rate;
    if (step >= static_cast<double>(n_frames)) break;
    const auto t = static_cast<std::size_t>(step);
    const double alpha = step - static_cast<double>(t);
    for (std::size_t k = 0; k < bins; ++k) {
      mag[k] = (1.0 - alpha) * std::abs(column(t, k)) + alpha * std::abs(column(t + 1, k));
    }
    const auto owner = detail::peak_owners(mag);
    std::vector<dsp::Complex> frame(bins);
    for (std::size_t k = 0; k < bins; ++k) {
      const std::size_t p = owner[k];
      const double locked = phase[p] + std::arg(column(t, k)) - std::arg(column(t, p));
      frame[k] = std::polar(mag[k], locked);
    }
    for (std::size_t k = 0; k < bins; ++k) {
      double dphase = std::arg(column(t + 1, k)) - std::arg(column(t, k)) - advance[k];
      dphase -= 2.0 * std::numbers::pi * std::round(dphase / (2.0 * std::numbers::pi));
      phase[k] += advance[k] + dphase;
    }
    out.push_back(std::move(frame));
  }
  const auto length = static_cast<std::size_t>(std::llround(static_cast<double>(samples.size()) / rate));
  return istft(out, kVocoderWindow, kVocoderHop, length);
}

/// Stretch by 2^(−s/12), then resample by the same factor; length preserved.
inline std::vector<double> pitch_shift(std::span<const double> samples, double semitones) {
  const double rate = std::pow(2.0, -semitones / 12.0);
  const auto stretched = time_stretch(samples, rate);
  return resample_ratio(stretched, rate, samples.size());
}

struct AugmentBounds {
  double tempo_min = 0.8;
  double tempo_max = 1.2;
  double max_semitones = 2.0;
};

struct AugmentedTrack {
  AudioClip clip;
  AnnotationTrack track;
};

/// Tempo stretch then pitch shift. Annotation times are divided by the tempo
/// rate; pitch shifting leaves them alone.
inline AugmentedTrack augment_track(const AudioClip& clip, const AnnotationTrack& track,
                                    double tempo_rate, double semitones,
                                    const AugmentBounds& bounds = {}) {
  if (!(tempo_rate >= bounds.tempo_min && tempo_rate <= bounds.tempo_max)) {
    throw RateOutOfRange("tempo rate " + std::to_string(tempo_rate) + " outside [" +
                         std::to_string(bounds.tempo_min) + ", " +
                         std::to_string(bounds.tempo_max) + "]");
  }
  if (!(std::abs(semitones) <= bounds.max_semitones)) {
    throw RateOutOfRange("pitch shift " + std::to_string(semitones) + " exceeds ±" +
                         std::to_string(bounds.max_semitones) + " semitones");
  }
  AugmentedTrack out;
  out.clip.sample_rate = clip.sample_rate;
  out.clip.samples = pitch_shift(time_stretch(clip.samples, tempo_rate), semitones);
  out.track = scale_annotation_times(track, tempo_rate);
  return out;
}

}  // namespace gamseg
