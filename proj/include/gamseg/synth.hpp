#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gamseg/annotations.hpp"
#include "gamseg/audio_io.hpp"
#include "gamseg/error.hpp"
#include "gamseg/manifest.hpp"
#include "gamseg/rng.hpp"

namespace gamseg {

enum class Waveform { Sine, Square, Saw };

inline std::string_view waveform_name(Waveform w) {
  switch (w) {
    case Waveform::Sine: return "sine";
    case Waveform::Square: return "square";
    case Waveform::Saw: return "saw";
  }
  return "?";
}

struct Timbre {
  Waveform waveform = Waveform::Sine;
  double base_freq = 220.0;
  int harmonics = 1;
  bool operator==(const Timbre&) const = default;
};

struct SynthSection {
  double duration = 10.0;  // s
  Timbre timbre;
  double tempo = 0.0;  // clicks per minute, 0 = no clicks
  double amplitude = 0.5;
};

struct SynthSpec {
  std::vector<SynthSection> sections;
  std::uint64_t seed = 0;
};

inline constexpr double kCrossfadeSeconds = 0.05;
inline constexpr double kNoiseFloor = 0.002;

/// Category codes for the change between two adjacent sections.
inline CategorySet section_change(const SynthSection& a, const SynthSection& b) {
  CategorySet c;
  if (a.timbre.waveform != b.timbre.waveform || a.timbre.harmonics != b.timbre.harmonics) {
    c.insert(Category::Timbre);
  }
  if (a.timbre.base_freq != b.timbre.base_freq) c.insert(Category::Pitch);
  if (a.tempo != b.tempo) c.insert(Category::Rhythm);
  if (a.amplitude != b.amplitude) c.insert(Category::Dynamic);
  return c;
}

inline void validate_spec(const SynthSpec& spec, int sample_rate = kCanonicalRate) {
  if (spec.sections.size() < 2) throw SpecInvalid("need at least 2 sections");
  for (std::size_t i = 0; i < spec.sections.size(); ++i) {
    const auto& s = spec.sections[i];
    const std::string where = "section " + std::to_string(i) + ": ";
    if (!(s.duration >= 2.0) || !std::isfinite(s.duration)) throw SpecInvalid(where + "duration < 2 s");
    if (!(s.timbre.base_freq > 0.0) || s.timbre.base_freq >= sample_rate / 2.0) {
      throw SpecInvalid(where + "base_freq outside (0, Nyquist)");
    }
    if (s.timbre.harmonics < 1) throw SpecInvalid(where + "harmonics < 1");
    if (!(s.tempo >= 0.0) || !std::isfinite(s.tempo)) throw SpecInvalid(where + "negative tempo");
    if (!(s.amplitude > 0.0 && s.amplitude <= 1.0)) throw SpecInvalid(where + "amplitude outside (0, 1]");
    if (i > 0 && section_change(spec.sections[i - 1], s).empty()) {
      throw SpecInvalid(where + "identical to the previous section");
    }
  }
}

namespace detail {

/// Partial amplitudes: sine rolls off as 1/k², square keeps odd partials at
/// 1/k, saw keeps all partials at 1/k.
inline double partial_weight(Waveform w, int k) {
  switch (w) {
    case Waveform::Sine: return 1.0 / (static_cast<double>(k) * k);
    case Waveform::Square: return k % 2 == 1 ? 1.0 / k : 0.0;
    case Waveform::Saw: return 1.0 / k;
  }
  return 0.0;
}

}  // namespace detail

struct SynthTrack {
  AudioClip clip;
  AnnotationTrack annotation;
};

inline SynthTrack generate_synthetic_track(const SynthSpec& spec, int sample_rate = kCanonicalRate) {
  validate_spec(spec, sample_rate);
  const double sr = sample_rate;
  std::vector<double> starts{0.0};
  for (const auto& s : spec.sections) starts.push_back(starts.back() + s.duration);
  const double total = starts.back();
  const auto n_total = static_cast<std::size_t>(std::llround(total * sr));
  const auto half = static_cast<std::ptrdiff_t>(std::llround(kCrossfadeSeconds * sr / 2.0));

  Rng rng(spec.seed);
  std::vector<double> out(n_total, 0.0);
  for (std::size_t i = 0; i < spec.sections.size(); ++i) {
    const auto& s = spec.sections[i];
    const auto begin = static_cast<std::ptrdiff_t>(std::llround(starts[i] * sr));
    const auto end = static_cast<std::ptrdiff_t>(std::llround(starts[i + 1] * sr));
    const bool first = i == 0;
    const bool last = i + 1 == spec.sections.size();
    const std::ptrdiff_t lo = first ? 0 : begin - half;
    const std::ptrdiff_t hi = last ? static_cast<std::ptrdiff_t>(n_total) : end + half;

    std::vector<std::pair<double, double>> partials;  // (frequency, weight)
    std::vector<double> phases;
    double weight_sum = 0.0;
    for (int k = 1; k <= s.timbre.harmonics; ++k) {
      const double f = k * s.timbre.base_freq;
      const double w = detail::partial_weight(s.timbre.waveform, k);
      if (f >= 0.45 * sr || w == 0.0) continue;
      partials.emplace_back(f, w);
      phases.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
      weight_sum += w;
    }
    const double beat = s.tempo > 0.0 ? 60.0 / s.tempo : 0.0;
    const double click_len = 0.015;
    for (std::ptrdiff_t n = lo; n < hi; ++n) {
      const double t = static_cast<double>(n) / sr;
      double gain = 1.0;
      if (!first) gain = std::min(gain, (static_cast<double>(n - lo) + 0.5) / (2.0 * half));
      if (!last) gain = std::min(gain, (static_cast<double>(hi - n) - 0.5) / (2.0 * half));
      gain = std::clamp(gain, 0.0, 1.0);
      double tone = 0.0;
      for (std::size_t k = 0; k < partials.size(); ++k) {
        tone += partials[k].second *
                std::sin(2.0 * std::numbers::pi * partials[k].first * t + phases[k]);
      }
      if (weight_sum > 0.0) tone /= weight_sum;
      double click = 0.0;
      if (beat > 0.0) {
        const double local = t - starts[i];
        if (local >= 0.0) {
          const double since = std::fmod(local, beat);
          if (since < click_len) click = 0.5 * std::exp(-since / 0.003) * rng.uniform(-1.0, 1.0);
        }
      }
      out[static_cast<std::size_t>(n)] += gain * s.amplitude * (0.8 * tone + click);
    }
  }
  for (auto& v : out) v = std::clamp(v + kNoiseFloor * rng.uniform(-1.0, 1.0), -1.0, 1.0);

  SynthTrack track;
  track.clip.samples = std::move(out);
  track.clip.sample_rate = sample_rate;
  for (std::size_t i = 0; i < spec.sections.size(); ++i) {
    BoundaryEvent ev;
    ev.time = starts[i];
    ev.categories = i == 0 ? CategorySet{Category::Begin}
                           : section_change(spec.sections[i - 1], spec.sections[i]);
    const char letter = static_cast<char>('a' + i % 26);
    ev.fine_label = std::string(1, letter);
    ev.coarse_label = std::string(1, static_cast<char>(letter - 'a' + 'A'));
    track.annotation.events.push_back(std::move(ev));
  }
  BoundaryEvent end;
  end.time = total;
  end.categories = CategorySet{Category::End};
  track.annotation.events.push_back(std::move(end));
  return track;
}

struct CorpusOptions {
  std::size_t tracks = 20;
  std::uint64_t seed = 0;
  std::size_t min_sections = 2;
  std::size_t max_sections = 4;
  double min_duration = 6.0;
  double max_duration = 12.0;
  double val_fraction = 0.15;
  double test_fraction = 0.15;
};

/// Random spec in which every join changes timbre or pitch, optionally with
/// tempo and dynamics changes on top. Durations are multiples of 10 ms.
inline SynthSpec random_spec(Rng& rng, const CorpusOptions& opt = {}) {
  SynthSpec spec;
  spec.seed = rng.next_u64();
  const std::size_t n = opt.min_sections + rng.below(opt.max_sections - opt.min_sections + 1);
  const double tempos[] = {0.0, 90.0, 120.0, 150.0};
  auto random_timbre = [&rng]() {
    Timbre t;
    t.waveform = static_cast<Waveform>(rng.below(3));
    t.harmonics = 1 + static_cast<int>(rng.below(8));
    t.base_freq = 110.0 * std::pow(2.0, static_cast<double>(rng.below(25)) / 12.0);
    return t;
  };
  for (std::size_t i = 0; i < n; ++i) {
    SynthSection s;
    s.duration = std::round(rng.uniform(opt.min_duration, opt.max_duration) * 100.0) / 100.0;
    if (i == 0) {
      s.timbre = random_timbre();
      s.tempo = tempos[rng.below(4)];
      s.amplitude = std::round(rng.uniform(0.3, 0.8) * 100.0) / 100.0;
    } else {
      const auto& prev = spec.sections.back();
      s.timbre = prev.timbre;
      s.tempo = prev.tempo;
      s.amplitude = prev.amplitude;
      if (rng.uniform() < 0.7) {
        while (s.timbre.waveform == prev.timbre.waveform && s.timbre.harmonics == prev.timbre.harmonics) {
          s.timbre.waveform = static_cast<Waveform>(rng.below(3));
          s.timbre.harmonics = 1 + static_cast<int>(rng.below(8));
        }
        if (rng.uniform() < 0.5) s.timbre.base_freq = random_timbre().base_freq;
      } else {
        // Pitch-only change of at least four semitones.
        const double step = static_cast<double>(4 + rng.below(5)) * (rng.below(2) ? 1.0 : -1.0);
        double f = prev.timbre.base_freq * std::pow(2.0, step / 12.0);
        if (f < 80.0 || f > 500.0) f = prev.timbre.base_freq * std::pow(2.0, -step / 12.0);
        s.timbre.base_freq = f;
      }
      if (rng.uniform() < 0.3) s.tempo = tempos[rng.below(4)];
      if (rng.uniform() < 0.3) s.amplitude = std::round(rng.uniform(0.3, 0.8) * 100.0) / 100.0;
    }
    spec.sections.push_back(s);
  }
  return spec;
}

/// Split assignment by position: the last test_fraction of tracks are test,
/// the val_fraction before them val, the rest train.
inline std::string corpus_split(std::size_t index, const CorpusOptions& opt) {
  const auto n = static_cast<double>(opt.tracks);
  const auto n_test = static_cast<std::size_t>(std::llround(n * opt.test_fraction));
  const auto n_val = static_cast<std::size_t>(std::llround(n * opt.val_fraction));
  const std::size_t n_train = opt.tracks - std::min(opt.tracks, n_test + n_val);
  if (index < n_train) return "train";
  if (index < n_train + n_val) return "val";
  return "test";
}

/// Writes track_NNN.wav (float32), track_NNN.txt (native annotation format) and
/// manifest.jsonl into `dir`. Returns the manifest with absolute paths.
inline DatasetManifest generate_corpus(const std::filesystem::path& dir, const CorpusOptions& opt) {
  if (opt.tracks == 0) throw SpecInvalid("corpus needs at least one track");
  if (opt.min_sections < 2 || opt.max_sections < opt.min_sections) {
    throw SpecInvalid("section count range must satisfy 2 <= min <= max");
  }
  if (opt.min_duration < 2.0 || opt.max_duration < opt.min_duration) {
    throw SpecInvalid("duration range must satisfy 2 <= min <= max");
  }
  std::filesystem::create_directories(dir);
  Rng rng(opt.seed);
  DatasetManifest manifest;
  for (std::size_t i = 0; i < opt.tracks; ++i) {
    const SynthSpec spec = random_spec(rng, opt);
    const SynthTrack track = generate_synthetic_track(spec);
    char stem[32];
    std::snprintf(stem, sizeof stem, "track_%03zu", i);
    ManifestEntry e;
    e.audio_path = dir / (std::string(stem) + ".wav");
    e.annotation_path = dir / (std::string(stem) + ".txt");
    e.split = corpus_split(i, opt);
    write_wav(track.clip, e.audio_path, WavEncoding::Float32);
    detail::write_text(e.annotation_path, serialize_annotation_file(track.annotation));
    manifest.entries.push_back(std::move(e));
  }
  write_manifest(manifest, dir / "manifest.jsonl");
  return manifest;
}

}  // namespace gamseg
