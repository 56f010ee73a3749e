#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "gamseg/audio_io.hpp"
#include "gamseg/error.hpp"
#include "gamseg/fft.hpp"
#include "gamseg/matrix.hpp"

namespace gamseg {

struct FeatureConfig {
  std::size_t window = 2048;
  std::size_t hop = 512;
  std::size_t n_mfcc = 13;
  std::size_t n_mels = 128;
  std::size_t n_cqt_bins = 84;
  double cqt_fmin = 32.703;  // C1
  std::size_t bins_per_octave = 12;
  int sample_rate = kCanonicalRate;

  double frame_rate() const { return static_cast<double>(sample_rate) / static_cast<double>(hop); }
  std::size_t n_features() const { return n_mfcc + n_cqt_bins + 1; }

  void validate() const {
    if (!dsp::is_power_of_two(window)) throw ConfigError("window must be a power of two");
    if (hop == 0 || hop > window) throw ConfigError("hop must be in 1..window");
    if (n_mfcc == 0 || n_mfcc > n_mels) throw ConfigError("n_mfcc must be in 1..n_mels");
    if (bins_per_octave == 0 || n_cqt_bins == 0 || n_cqt_bins % bins_per_octave != 0) {
      throw ConfigError("n_cqt_bins must be a positive multiple of bins_per_octave");
    }
    if (!(cqt_fmin > 0.0)) throw ConfigError("cqt_fmin must be positive");
    const double top = cqt_fmin * std::exp2(static_cast<double>(n_cqt_bins - 1) /
                                            static_cast<double>(bins_per_octave));
    if (top >= sample_rate / 2.0) throw ConfigError("highest CQT bin exceeds Nyquist");
  }

  bool operator==(const FeatureConfig&) const = default;
};

struct RowGroup {
  std::string name;
  std::size_t count = 0;
  bool operator==(const RowGroup&) const = default;
};

/// Feature rows × time frames, the model input.
struct FeatureMatrix {
  Matrix data;
  double frame_rate = static_cast<double>(kCanonicalRate) / 512.0;
  std::vector<RowGroup> names;

  std::size_t rows() const noexcept { return data.rows; }
  std::size_t cols() const noexcept { return data.cols; }
};

/// Number of centered frames: 1 + floor(len / hop).
constexpr std::size_t frame_count(std::size_t len, std::size_t hop) noexcept {
  return 1 + len / hop;
}

/// Center frequency of CQT bin k: fmin * 2^(k / bins_per_octave).
inline double cqt_bin_frequency(const FeatureConfig& cfg, std::size_t k) {
  return cfg.cqt_fmin *
         std::exp2(static_cast<double>(k) / static_cast<double>(cfg.bins_per_octave));
}

namespace detail {

inline void check_clip(const AudioClip& clip, const FeatureConfig& cfg) {
  cfg.validate();
  if (clip.sample_rate != cfg.sample_rate) {
    throw std::invalid_argument("feature extraction expects " + std::to_string(cfg.sample_rate) +
                                " Hz audio, got " + std::to_string(clip.sample_rate));
  }
  if (clip.samples.size() < cfg.window) {
    throw ClipTooShort(std::to_string(clip.samples.size()) + " samples < window " +
                       std::to_string(cfg.window));
  }
}

/// Periodic Hann window.
inline std::vector<double> hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                static_cast<double>(n));
  }
  return w;
}

/// numpy-style "reflect" index (edge sample not repeated).
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  const auto len = static_cast<std::ptrdiff_t>(n);
  if (len == 1) return 0;
  const std::ptrdiff_t period = 2 * (len - 1);
  i %= period;
  if (i < 0) i += period;
  if (i >= len) i = period - i;
  return static_cast<std::size_t>(i);
}

}  // namespace detail

/// Complex STFT with centered, reflect-padded, Hann-windowed frames.
/// Result is indexed [frame][bin] with window/2 + 1 bins.
inline std::vector<std::vector<dsp::Complex>> stft(std::span<const double> samples,
                                                   std::size_t window, std::size_t hop) {
  const std::size_t frames = frame_count(samples.size(), hop);
  const auto w = detail::hann(window);
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  std::vector<double> buf(window);
  std::vector<std::vector<dsp::Complex>> out(frames, std::vector<dsp::Complex>(window / 2 + 1));
  for (std::size_t t = 0; t < frames; ++t) {
    const auto start = static_cast<std::ptrdiff_t>(t * hop) - half;
    for (std::size_t i = 0; i < window; ++i) {
      buf[i] = samples[detail::reflect_index(start + static_cast<std::ptrdiff_t>(i), samples.size())] *
               w[i];
    }
    dsp::rfft(buf, out[t]);
  }
  return out;
}

/// Power spectrogram, bins × frames.
inline Matrix power_spectrogram(const AudioClip& clip, const FeatureConfig& cfg) {
  detail::check_clip(clip, cfg);
  const auto spec = stft(clip.samples, cfg.window, cfg.hop);
  const std::size_t bins = cfg.window / 2 + 1;
  Matrix power(bins, spec.size());
  for (std::size_t t = 0; t < spec.size(); ++t) {
    for (std::size_t k = 0; k < bins; ++k) power(k, t) = std::norm(spec[t][k]);
  }
  return power;
}

/// Slaney-style mel scale (linear below 1 kHz, logarithmic above).
inline double hz_to_mel(double hz) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (hz < min_log_hz) return hz / f_sp;
  return min_log_mel + std::log(hz / min_log_hz) / logstep;
}

inline double mel_to_hz(double mel) {
  constexpr double f_sp = 200.0 / 3.0;
  constexpr double min_log_hz = 1000.0;
  constexpr double min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  if (mel < min_log_mel) return mel * f_sp;
  return min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

/// Triangular mel filterbank (n_mels × (n_fft/2 + 1)), Slaney area normalization.
inline Matrix mel_filterbank(int sample_rate, std::size_t n_fft, std::size_t n_mels) {
  const std::size_t bins = n_fft / 2 + 1;
  const double fmax = sample_rate / 2.0;
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(fmax);
  std::vector<double> hz(n_mels + 2);
  for (std::size_t i = 0; i < hz.size(); ++i) {
    hz[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                   static_cast<double>(n_mels + 1));
  }
  Matrix fb(n_mels, bins);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lower_w = hz[m + 1] - hz[m];
    const double upper_w = hz[m + 2] - hz[m + 1];
    const double enorm = 2.0 / (hz[m + 2] - hz[m]);
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
      const double lower = (f - hz[m]) / lower_w;
      const double upper = (hz[m + 2] - f) / upper_w;
      fb(m, k) = std::max(0.0, std::min(lower, upper)) * enorm;
    }
  }
  return fb;
}

/// Mel power spectrogram, n_mels × frames.
inline Matrix mel_spectrogram(const Matrix& power, const FeatureConfig& cfg) {
  const Matrix fb = mel_filterbank(cfg.sample_rate, cfg.window, cfg.n_mels);
  Matrix mel(cfg.n_mels, power.cols);
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const auto filt = fb.row(m);
    const auto first = static_cast<std::size_t>(
        std::find_if(filt.begin(), filt.end(), [](double v) { return v > 0.0; }) - filt.begin());
    std::size_t last = filt.size();
    while (last > first && filt[last - 1] <= 0.0) --last;
    for (std::size_t t = 0; t < power.cols; ++t) {
      double acc = 0.0;
      for (std::size_t k = first; k < last; ++k) acc += filt[k] * power(k, t);
      mel(m, t) = acc;
    }
  }
  return mel;
}

/// 10·log10(max(S, amin)) − 10·log10(max(ref, amin)), floored at max − top_db.
inline Matrix power_to_db(const Matrix& power, double ref, double amin = 1e-10,
                          double top_db = 80.0) {
  Matrix db(power.rows, power.cols);
  const double ref_db = 10.0 * std::log10(std::max(amin, ref));
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < power.data.size(); ++i) {
    db.data[i] = 10.0 * std::log10(std::max(amin, power.data[i])) - ref_db;
    peak = std::max(peak, db.data[i]);
  }
  for (double& v : db.data) v = std::max(v, peak - top_db);
  return db;
}

namespace detail {

inline Matrix mfcc_from_mel(const Matrix& mel, const FeatureConfig& cfg) {
  const Matrix db = power_to_db(mel, 1.0);
  const std::size_t n = cfg.n_mels;
  Matrix out(cfg.n_mfcc, mel.cols);
  // Orthonormal DCT-II basis.
  Matrix basis(cfg.n_mfcc, n);
  for (std::size_t k = 0; k < cfg.n_mfcc; ++k) {
    const double scale = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      basis(k, i) = scale * std::cos(std::numbers::pi * static_cast<double>(k) *
                                     (2.0 * static_cast<double>(i) + 1.0) /
                                     (2.0 * static_cast<double>(n)));
    }
  }
  for (std::size_t k = 0; k < cfg.n_mfcc; ++k) {
    for (std::size_t t = 0; t < mel.cols; ++t) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += basis(k, i) * db(i, t);
      out(k, t) = acc;
    }
  }
  return out;
}

inline Matrix onset_from_mel(const Matrix& mel, const FeatureConfig& cfg) {
  double peak = 0.0;
  for (double v : mel.data) peak = std::max(peak, v);
  const Matrix db = power_to_db(mel, peak);
  const std::size_t frames = mel.cols;
  // Flux of frame u lands at u + window / (2 * hop) so that the envelope lines
  // up with the frame whose center sits on the onset.
  const std::size_t shift = cfg.window / (2 * cfg.hop);
  Matrix env(1, frames, 0.0);
  for (std::size_t u = 1; u + shift < frames; ++u) {
    double flux = 0.0;
    for (std::size_t m = 0; m < db.rows; ++m) flux += std::max(0.0, db(m, u) - db(m, u - 1));
    env(0, u + shift) = flux;
  }
  return env;
}

struct CqtKernel {
  std::size_t fft_len = 0;
  // Sparse conjugated spectral kernel per bin: (fft bin, weight).
  std::vector<std::vector<std::pair<std::size_t, dsp::Complex>>> bins;
};

inline CqtKernel build_cqt_kernel(const FeatureConfig& cfg) {
  const double q = 1.0 / (std::exp2(1.0 / static_cast<double>(cfg.bins_per_octave)) - 1.0);
  const auto length_for = [&](std::size_t k) {
    return static_cast<std::size_t>(
        std::ceil(q * cfg.sample_rate / cqt_bin_frequency(cfg, k)));
  };
  CqtKernel kernel;
  kernel.fft_len = dsp::next_power_of_two(length_for(0));
  const std::size_t n = kernel.fft_len;
  kernel.bins.resize(cfg.n_cqt_bins);
  std::vector<dsp::Complex> time(n);
  std::vector<dsp::Complex> spec(n);
  for (std::size_t k = 0; k < cfg.n_cqt_bins; ++k) {
    const std::size_t len = length_for(k);
    const double f = cqt_bin_frequency(cfg, k);
    const auto window = hann(len);
    std::fill(time.begin(), time.end(), dsp::Complex{});
    const std::size_t start = (n - len) / 2;
    for (std::size_t i = 0; i < len; ++i) {
      // Phase referenced to the frame center keeps the kernel centered.
      const double t = (static_cast<double>(start + i) - static_cast<double>(n / 2)) /
                       cfg.sample_rate;
      time[start + i] = window[i] / static_cast<double>(len) *
                        std::polar(1.0, 2.0 * std::numbers::pi * f * t);
    }
    dsp::fft(time, spec);
    double peak = 0.0;
    for (std::size_t j = 0; j <= n / 2; ++j) peak = std::max(peak, std::abs(spec[j]));
    for (std::size_t j = 0; j <= n / 2; ++j) {
      if (std::abs(spec[j]) >= 0.005 * peak) {
        kernel.bins[k].emplace_back(j, std::conj(spec[j]) / static_cast<double>(n));
      }
    }
  }
  return kernel;
}

inline const CqtKernel& cqt_kernel(const FeatureConfig& cfg) {
  static std::mutex mutex;
  static std::map<std::tuple<int, double, std::size_t, std::size_t>, CqtKernel> cache;
  const auto key = std::make_tuple(cfg.sample_rate, cfg.cqt_fmin, cfg.n_cqt_bins,
                                   cfg.bins_per_octave);
  std::lock_guard lock(mutex);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, build_cqt_kernel(cfg)).first;
  return it->second;
}

}  // namespace detail

/// MFCC (n_mfcc × T): power STFT → mel filterbank → dB → orthonormal DCT-II.
inline Matrix compute_mfcc(const AudioClip& clip, const FeatureConfig& cfg = {}) {
  return detail::mfcc_from_mel(mel_spectrogram(power_spectrogram(clip, cfg), cfg), cfg);
}

/// Constant-Q magnitude (n_cqt_bins × T) via a sparse spectral kernel.
/// Frames are centered at t·hop with zeros beyond the clip edges.
inline Matrix compute_cqt_mag(const AudioClip& clip, const FeatureConfig& cfg = {}) {
  detail::check_clip(clip, cfg);
  const auto& kernel = detail::cqt_kernel(cfg);
  const std::size_t n = kernel.fft_len;
  const std::size_t frames = frame_count(clip.samples.size(), cfg.hop);
  const auto len = static_cast<std::ptrdiff_t>(clip.samples.size());
  std::vector<double> buf(n);
  std::vector<dsp::Complex> spec(n / 2 + 1);
  Matrix out(cfg.n_cqt_bins, frames);
  for (std::size_t t = 0; t < frames; ++t) {
    const auto start = static_cast<std::ptrdiff_t>(t * cfg.hop) - static_cast<std::ptrdiff_t>(n / 2);
    for (std::size_t i = 0; i < n; ++i) {
      const auto idx = start + static_cast<std::ptrdiff_t>(i);
      buf[i] = (idx >= 0 && idx < len) ? clip.samples[static_cast<std::size_t>(idx)] : 0.0;
    }
    dsp::rfft(buf, spec);
    for (std::size_t k = 0; k < cfg.n_cqt_bins; ++k) {
      dsp::Complex acc{};
      for (const auto& [j, w] : kernel.bins[k]) acc += spec[j] * w;
      out(k, t) = std::abs(acc);
    }
  }
  return out;
}

/// Positive spectral flux of the dB mel spectrogram (1 × T, non-negative).
inline Matrix compute_onset_env(const AudioClip& clip, const FeatureConfig& cfg = {}) {
  return detail::onset_from_mel(mel_spectrogram(power_spectrogram(clip, cfg), cfg), cfg);
}

/// Per-row z-score with population std; rows with std < 1e-8 become zero.
inline Matrix zscore_normalize(const Matrix& m) {
  Matrix out(m.rows, m.cols);
  if (m.cols == 0) return out;
  const auto n = static_cast<double>(m.cols);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const auto row = m.row(r);
    const double mean = std::accumulate(row.begin(), row.end(), 0.0) / n;
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / n);
    auto dst = out.row(r);
    if (sd < 1e-8) {
      std::fill(dst.begin(), dst.end(), 0.0);
      continue;
    }
    for (std::size_t c = 0; c < m.cols; ++c) dst[c] = (row[c] - mean) / sd;
  }
  return out;
}

/// Z-scores each block and stacks them as [mfcc; cqt; onset].
inline FeatureMatrix stack_features(const Matrix& mfcc, const Matrix& cqt, const Matrix& onset,
                                    double frame_rate = static_cast<double>(kCanonicalRate) / 512.0) {
  if (mfcc.cols != cqt.cols || mfcc.cols != onset.cols) {
    throw ColumnMismatch("mfcc " + std::to_string(mfcc.cols) + ", cqt " +
                         std::to_string(cqt.cols) + ", onset " + std::to_string(onset.cols));
  }
  FeatureMatrix fm;
  fm.frame_rate = frame_rate;
  fm.data = Matrix(mfcc.rows + cqt.rows + onset.rows, mfcc.cols);
  std::size_t row = 0;
  for (const auto* block : {&mfcc, &cqt, &onset}) {
    const Matrix z = zscore_normalize(*block);
    std::copy(z.data.begin(), z.data.end(), fm.data.row(row).begin());
    row += z.rows;
  }
  fm.names = {{"mfcc", mfcc.rows}, {"cqt", cqt.rows}, {"onset", onset.rows}};
  return fm;
}

/// Full pipeline: resample to the configured rate, extract the three feature
/// blocks from one shared mel spectrogram, normalize and stack.
inline FeatureMatrix extract_features(const AudioClip& clip, const FeatureConfig& cfg = {}) {
  const AudioClip canonical =
      clip.sample_rate == cfg.sample_rate ? clip : resample(clip, cfg.sample_rate);
  const Matrix mel = mel_spectrogram(power_spectrogram(canonical, cfg), cfg);
  return stack_features(detail::mfcc_from_mel(mel, cfg), compute_cqt_mag(canonical, cfg),
                        detail::onset_from_mel(mel, cfg), cfg.frame_rate());
}

// ---------------------------------------------------------------------------
// Feature file: "FEAT0001" | u32 rows | u32 cols | f64 frame_rate | f32 payload
// ---------------------------------------------------------------------------

inline constexpr char kFeatureMagic[8] = {'F', 'E', 'A', 'T', '0', '0', '0', '1'};

inline std::string encode_feature_file(const FeatureMatrix& fm) {
  if (fm.rows() == 0 || fm.cols() == 0 || fm.rows() > UINT32_MAX || fm.cols() > UINT32_MAX) {
    throw DimensionOverflow(std::to_string(fm.rows()) + "x" + std::to_string(fm.cols()));
  }
  std::string out(kFeatureMagic, 8);
  detail::put_u32le(out, static_cast<std::uint32_t>(fm.rows()));
  detail::put_u32le(out, static_cast<std::uint32_t>(fm.cols()));
  const auto rate_bits = std::bit_cast<std::uint64_t>(fm.frame_rate);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((rate_bits >> (8 * i)) & 0xFF));
  out.reserve(out.size() + fm.data.data.size() * 4);
  for (double v : fm.data.data) {
    detail::put_u32le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

inline FeatureMatrix decode_feature_file(std::string_view bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kFeatureMagic, 8) != 0) {
    throw BadMagic("not a feature file");
  }
  if (bytes.size() < 24) throw IoError("truncated feature header");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint64_t rows = detail::read_u32le(p + 8);
  const std::uint64_t cols = detail::read_u32le(p + 12);
  std::uint64_t rate_bits = 0;
  for (int i = 0; i < 8; ++i) rate_bits |= static_cast<std::uint64_t>(p[16 + i]) << (8 * i);
  if (rows == 0 || cols == 0) {
    throw DimensionOverflow("rows=" + std::to_string(rows) + " cols=" + std::to_string(cols));
  }
  if (rows * cols * 4 != bytes.size() - 24) {
    throw DimensionOverflow("payload of " + std::to_string(bytes.size() - 24) + " bytes for " +
                            std::to_string(rows) + "x" + std::to_string(cols));
  }
  FeatureMatrix fm;
  fm.frame_rate = std::bit_cast<double>(rate_bits);
  fm.data = Matrix(rows, cols);
  for (std::size_t i = 0; i < fm.data.data.size(); ++i) {
    fm.data.data[i] = static_cast<double>(std::bit_cast<float>(detail::read_u32le(p + 24 + 4 * i)));
  }
  return fm;
}

inline void write_feature_file(const FeatureMatrix& fm, const std::filesystem::path& path) {
  const std::string bytes = encode_feature_file(fm);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

inline FeatureMatrix read_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_feature_file(bytes);
}

}  // namespace gamseg
