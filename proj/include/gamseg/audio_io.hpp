#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gamseg/error.hpp"

namespace gamseg {

/// Sampling rate every feature extractor expects.
inline constexpr int kCanonicalRate = 22050;

/// Mono audio. `sample_rate` is the native file rate until resample() is applied.
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = kCanonicalRate;
  std::optional<std::string> source_path;

  std::size_t size() const noexcept { return samples.size(); }
  double duration() const noexcept {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
};

enum class WavEncoding { Pcm16, Float32 };

namespace detail {

inline std::uint32_t read_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16le(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void put_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u16le(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}

}  // namespace detail

/// Decodes a RIFF/WAVE file holding 16-bit PCM or 32-bit float samples with
/// one or two channels. Stereo is averaged to mono.
inline AudioClip decode_audio(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UnreadableFile(path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw UnreadableFile(path.string() + ": not a RIFF/WAVE file");
  }

  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t bits = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = detail::read_u32le(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = bytes.size() - body;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || size > avail) throw UnreadableFile(path.string() + ": bad fmt chunk");
      format = detail::read_u16le(chunk + 8);
      channels = detail::read_u16le(chunk + 10);
      rate = detail::read_u32le(chunk + 12);
      bits = detail::read_u16le(chunk + 22);
      if (format == 0xFFFE && size >= 40) {
        // WAVE_FORMAT_EXTENSIBLE: the subformat GUID starts with the format tag.
        format = detail::read_u16le(chunk + 32);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_size = std::min<std::size_t>(size, avail);
      break;
    }
    pos = body + size + (size & 1U);
  }
  if (!have_fmt || data == nullptr) throw UnreadableFile(path.string() + ": missing fmt or data");

  const bool pcm16 = format == 1 && bits == 16;
  const bool float32 = format == 3 && bits == 32;
  if (!pcm16 && !float32) {
    throw UnsupportedEncoding(path.string() + ": format " + std::to_string(format) + ", " +
                              std::to_string(bits) + " bits");
  }
  if (channels < 1 || channels > 2) {
    throw UnsupportedEncoding(path.string() + ": " + std::to_string(channels) + " channels");
  }
  if (rate == 0) throw UnreadableFile(path.string() + ": zero sample rate");

  const std::size_t width = bits / 8;
  const std::size_t frames = data_size / (width * channels);
  if (frames == 0) throw UnreadableFile(path.string() + ": no samples");

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.source_path = path.string();
  clip.samples.resize(frames);
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t ch = 0; ch < channels; ++ch) {
      const unsigned char* p = data + (i * channels + ch) * width;
      if (pcm16) {
        acc += static_cast<double>(static_cast<std::int16_t>(detail::read_u16le(p))) / 32768.0;
      } else {
        acc += static_cast<double>(std::bit_cast<float>(detail::read_u32le(p)));
      }
    }
    clip.samples[i] = acc / static_cast<double>(channels);
  }
  return clip;
}

/// Encodes interleaved channel data (channels × frames) as a WAV byte string.
inline std::string encode_wav(std::span<const double> interleaved, int channels, int sample_rate,
                              WavEncoding encoding) {
  const std::uint16_t format = encoding == WavEncoding::Pcm16 ? 1 : 3;
  const std::uint16_t bits = encoding == WavEncoding::Pcm16 ? 16 : 32;
  const std::uint16_t block = static_cast<std::uint16_t>(channels * bits / 8);
  const auto data_size = static_cast<std::uint32_t>(interleaved.size() * (bits / 8));
  std::string out;
  out.reserve(44 + data_size);
  out += "RIFF";
  detail::put_u32le(out, 36 + data_size);
  out += "WAVEfmt ";
  detail::put_u32le(out, 16);
  detail::put_u16le(out, format);
  detail::put_u16le(out, static_cast<std::uint16_t>(channels));
  detail::put_u32le(out, static_cast<std::uint32_t>(sample_rate));
  detail::put_u32le(out, static_cast<std::uint32_t>(sample_rate) * block);
  detail::put_u16le(out, block);
  detail::put_u16le(out, bits);
  out += "data";
  detail::put_u32le(out, data_size);
  for (double s : interleaved) {
    if (encoding == WavEncoding::Pcm16) {
      const double scaled = std::round(std::clamp(s, -1.0, 1.0) * 32767.0);
      detail::put_u16le(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
    } else {
      detail::put_u32le(out, std::bit_cast<std::uint32_t>(static_cast<float>(s)));
    }
  }
  return out;
}

inline void write_wav(const AudioClip& clip, const std::filesystem::path& path,
                      WavEncoding encoding = WavEncoding::Float32) {
  const std::string bytes = encode_wav(clip.samples, 1, clip.sample_rate, encoding);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

namespace detail {

/// Zeroth-order modified Bessel function of the first kind (power series).
inline double bessel_i0(double x) {
  double sum = 1.0;
  double term = 1.0;
  const double q = x * x / 4.0;
  for (int k = 1; k < 64; ++k) {
    term *= q / (static_cast<double>(k) * static_cast<double>(k));
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum;
}

/// Kaiser-windowed sinc tabulated over [0, zero_crossings] with `resolution`
/// points per zero crossing, evaluated with linear interpolation.
class SincTable {
 public:
  static constexpr int kZeroCrossings = 32;  // 64 taps at the lower rate
  static constexpr int kResolution = 512;
  static constexpr double kBeta = 8.6;

  SincTable() : table_(kZeroCrossings * kResolution + 2) {
    const double norm = bessel_i0(kBeta);
    for (std::size_t i = 0; i < table_.size(); ++i) {
      const double u = static_cast<double>(i) / kResolution;
      if (u >= kZeroCrossings) {
        table_[i] = 0.0;
        continue;
      }
      const double r = u / kZeroCrossings;
      const double window = bessel_i0(kBeta * std::sqrt(1.0 - r * r)) / norm;
      const double sinc = u == 0.0 ? 1.0 : std::sin(std::numbers::pi * u) / (std::numbers::pi * u);
      table_[i] = sinc * window;
    }
  }

  /// Kernel value at |u| zero crossings from the center.
  double operator()(double u) const {
    u = std::abs(u);
    if (u >= kZeroCrossings) return 0.0;
    const double x = u * kResolution;
    const auto i = static_cast<std::size_t>(x);
    const double frac = x - static_cast<double>(i);
    return table_[i] + frac * (table_[i + 1] - table_[i]);
  }

 private:
  std::vector<double> table_;
};

inline const SincTable& sinc_table() {
  static const SincTable table;
  return table;
}

}  // namespace detail

/// Band-limited resampling by an arbitrary ratio (output rate / input rate).
/// Output sample n sits at input position n / ratio; out-of-range input is zero.
inline std::vector<double> resample_ratio(std::span<const double> in, double ratio,
                                          std::size_t out_len) {
  constexpr double kRolloff = 0.945;
  const auto& kernel = detail::sinc_table();
  const double scale = std::min(1.0, ratio) * kRolloff;
  const double support = detail::SincTable::kZeroCrossings / scale;
  const auto n_in = static_cast<std::ptrdiff_t>(in.size());

  std::vector<double> out(out_len);
  for (std::size_t n = 0; n < out_len; ++n) {
    const double center = static_cast<double>(n) / ratio;
    const auto lo = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::ceil(center - support)));
    const auto hi =
        std::min<std::ptrdiff_t>(n_in - 1, static_cast<std::ptrdiff_t>(std::floor(center + support)));
    double acc = 0.0;
    for (std::ptrdiff_t k = lo; k <= hi; ++k) {
      acc += in[static_cast<std::size_t>(k)] * kernel((static_cast<double>(k) - center) * scale);
    }
    out[n] = acc * scale;
  }
  return out;
}

/// Resamples to `target_rate` with a 64-tap Kaiser-windowed sinc.
/// Output length is round(len * target / source).
inline AudioClip resample(const AudioClip& clip, int target_rate) {
  if (clip.samples.empty()) throw std::invalid_argument("resample: empty clip");
  if (target_rate <= 0 || clip.sample_rate <= 0) {
    throw std::invalid_argument("resample: rates must be positive");
  }
  if (target_rate == clip.sample_rate) return clip;
  const auto len = static_cast<std::uint64_t>(clip.samples.size());
  const auto src = static_cast<std::uint64_t>(clip.sample_rate);
  const auto dst = static_cast<std::uint64_t>(target_rate);
  const std::size_t out_len = std::max<std::uint64_t>(1, (len * dst + src / 2) / src);
  AudioClip out;
  out.sample_rate = target_rate;
  out.source_path = clip.source_path;
  out.samples = resample_ratio(clip.samples, static_cast<double>(dst) / static_cast<double>(src),
                               out_len);
  return out;
}

}  // namespace gamseg
