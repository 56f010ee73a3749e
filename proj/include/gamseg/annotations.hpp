#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "gamseg/error.hpp"

namespace gamseg {

/// Perceived boundary category codes, in canonical serialization order.
enum class Category : std::uint8_t {
  Rhythm,      // r
  Dynamic,     // d
  Timbre,      // t
  Pitch,       // p
  Harmony,     // h
  Regularity,  // rg
  Repetition,  // rp
  Begin,       // b
  End,         // e
};

inline constexpr std::array<std::string_view, 9> kCategoryCodes = {"r",  "d",  "t", "p", "h",
                                                                   "rg", "rp", "b", "e"};

inline std::string_view category_code(Category c) {
  return kCategoryCodes[static_cast<std::size_t>(c)];
}

inline std::optional<Category> parse_category(std::string_view code) {
  for (std::size_t i = 0; i < kCategoryCodes.size(); ++i) {
    if (kCategoryCodes[i] == code) return static_cast<Category>(i);
  }
  return std::nullopt;
}

/// Small set of categories stored as a bitmask.
class CategorySet {
 public:
  CategorySet() = default;
  CategorySet(std::initializer_list<Category> cats) {
    for (auto c : cats) insert(c);
  }

  void insert(Category c) { bits_ |= bit(c); }
  void erase(Category c) { bits_ &= static_cast<std::uint16_t>(~bit(c)); }
  bool contains(Category c) const { return (bits_ & bit(c)) != 0; }
  bool empty() const { return bits_ == 0; }
  std::size_t size() const { return static_cast<std::size_t>(std::popcount(bits_)); }

  std::vector<Category> items() const {
    std::vector<Category> out;
    for (std::size_t i = 0; i < kCategoryCodes.size(); ++i) {
      if (bits_ & (1U << i)) out.push_back(static_cast<Category>(i));
    }
    return out;
  }

  bool operator==(const CategorySet&) const = default;

 private:
  static std::uint16_t bit(Category c) {
    return static_cast<std::uint16_t>(1U << static_cast<unsigned>(c));
  }
  std::uint16_t bits_ = 0;
};

struct BoundaryEvent {
  double time = 0.0;
  CategorySet categories;
  std::optional<std::string> fine_label;
  std::optional<std::string> coarse_label;
  std::optional<std::string> function_label;

  bool is_marker() const {
    return categories.contains(Category::Begin) || categories.contains(Category::End);
  }
  bool operator==(const BoundaryEvent&) const = default;
};

struct AnnotationTrack {
  std::vector<BoundaryEvent> events;

  double duration() const { return events.empty() ? 0.0 : events.back().time; }

  /// Times of events that are neither Begin nor End.
  std::vector<double> interior_times() const {
    std::vector<double> out;
    for (const auto& ev : events) {
      if (!ev.is_marker()) out.push_back(ev.time);
    }
    return out;
  }

  bool operator==(const AnnotationTrack&) const = default;
};

/// Checks the track invariants: ≥ 2 events, strictly increasing times, b only
/// on a first event at t = 0, e only on the last event.
inline void validate_track(const AnnotationTrack& track) {
  const auto& ev = track.events;
  for (std::size_t i = 1; i < ev.size(); ++i) {
    if (!(ev[i].time > ev[i - 1].time)) {
      throw NonMonotonicTime("event " + std::to_string(i + 1) + " at " +
                             std::to_string(ev[i].time) + " s does not follow " +
                             std::to_string(ev[i - 1].time) + " s");
    }
  }
  if (ev.size() < 2) throw MissingBeginEnd("a track needs at least a begin and an end event");
  if (!ev.front().categories.contains(Category::Begin) || ev.front().time != 0.0) {
    throw MissingBeginEnd("first event must be [b] at time 0");
  }
  if (!ev.back().categories.contains(Category::End)) {
    throw MissingBeginEnd("last event must carry [e]");
  }
  for (std::size_t i = 0; i < ev.size(); ++i) {
    const bool b = ev[i].categories.contains(Category::Begin);
    const bool e = ev[i].categories.contains(Category::End);
    if ((b && i != 0) || (e && i + 1 != ev.size()) || (b && e)) {
      throw MissingBeginEnd("b/e markers only allowed on the first/last event");
    }
  }
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto first = s.find_first_not_of(ws);
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(ws);
  return s.substr(first, last - first + 1);
}

inline std::optional<double> parse_time(std::string_view s) {
  std::string text(s);
  char* end = nullptr;
  const double t = std::strtod(text.c_str(), &end);
  if (end == text.c_str() || *end != '\0' || !std::isfinite(t) || t < 0.0) return std::nullopt;
  return t;
}

inline BoundaryEvent parse_savgm_line(std::string_view line, std::size_t lineno) {
  const auto split = line.find_first_of(" \t");
  if (split == std::string_view::npos) throw MalformedLine(lineno, "expected time and fields");
  const auto time = parse_time(line.substr(0, split));
  if (!time) throw MalformedLine(lineno, "bad timestamp");
  const auto rest = trim(line.substr(split));
  if (rest.empty() || rest.front() != '[') throw MalformedLine(lineno, "expected [codes]");
  const auto close = rest.find(']');
  if (close == std::string_view::npos) throw MalformedLine(lineno, "unterminated [codes]");

  BoundaryEvent ev;
  ev.time = *time;
  std::string_view codes = rest.substr(1, close - 1);
  while (!trim(codes).empty()) {
    const auto comma = codes.find(',');
    const auto code = trim(codes.substr(0, comma));
    const auto cat = parse_category(code);
    if (!cat) throw MalformedLine(lineno, "unknown category code '" + std::string(code) + "'");
    ev.categories.insert(*cat);
    if (comma == std::string_view::npos) break;
    codes.remove_prefix(comma + 1);
  }

  auto tail = trim(rest.substr(close + 1));
  if (!tail.empty()) {
    if (tail.front() != ',') throw MalformedLine(lineno, "expected ',' after codes");
    tail.remove_prefix(1);
    std::array<std::optional<std::string>*, 3> slots = {&ev.fine_label, &ev.coarse_label,
                                                         &ev.function_label};
    for (std::size_t i = 0; i < slots.size(); ++i) {
      // The function label takes the remainder verbatim.
      const auto comma = i + 1 < slots.size() ? tail.find(',') : std::string_view::npos;
      const auto field = trim(tail.substr(0, comma));
      if (field.empty()) throw MalformedLine(lineno, "empty label field");
      *slots[i] = std::string(field);
      if (comma == std::string_view::npos) break;
      tail.remove_prefix(comma + 1);
    }
  }
  return ev;
}

}  // namespace detail

/// Parses the native text format: one event per line,
/// `time <ws> [codes], fine[, coarse[, function]]`.
inline AnnotationTrack parse_annotation_text(std::string_view text) {
  AnnotationTrack track;
  std::size_t lineno = 0;
  while (!text.empty()) {
    ++lineno;
    const auto nl = text.find('\n');
    const auto line = detail::trim(text.substr(0, nl));
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (line.empty() || line.front() == '#') continue;
    auto ev = detail::parse_savgm_line(line, lineno);
    if (!track.events.empty() && !(ev.time > track.events.back().time)) {
      throw NonMonotonicTime("line " + std::to_string(lineno));
    }
    track.events.push_back(std::move(ev));
  }
  validate_track(track);
  return track;
}

/// Parses a two-column `time <TAB> label` file. The label is kept as the
/// function label; b is attached to a t = 0 event (inserted if absent) and e
/// to the last event.
inline AnnotationTrack parse_two_column_text(std::string_view text) {
  AnnotationTrack track;
  std::size_t lineno = 0;
  while (!text.empty()) {
    ++lineno;
    const auto nl = text.find('\n');
    const auto line = detail::trim(text.substr(0, nl));
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (line.empty() || line.front() == '#') continue;
    const auto split = line.find_first_of(" \t");
    const auto time = detail::parse_time(line.substr(0, split));
    if (!time) throw MalformedLine(lineno, "bad timestamp");
    BoundaryEvent ev;
    ev.time = *time;
    if (split != std::string_view::npos) {
      const auto label = detail::trim(line.substr(split));
      if (!label.empty()) ev.function_label = std::string(label);
    }
    if (!track.events.empty() && !(ev.time > track.events.back().time)) {
      throw NonMonotonicTime("line " + std::to_string(lineno));
    }
    track.events.push_back(std::move(ev));
  }
  if (track.events.empty()) throw MissingBeginEnd("empty annotation");
  if (track.events.front().time != 0.0) track.events.insert(track.events.begin(), BoundaryEvent{});
  track.events.front().categories.insert(Category::Begin);
  if (track.events.size() < 2) throw MissingBeginEnd("a track needs at least two events");
  track.events.back().categories.insert(Category::End);
  validate_track(track);
  return track;
}

namespace detail {

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("short write to " + path.string());
}

inline std::string format_time(double t) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9f", t);
  return buf;
}

}  // namespace detail

inline AnnotationTrack parse_annotation_file(const std::filesystem::path& path) {
  return parse_annotation_text(detail::read_text(path));
}

inline AnnotationTrack parse_two_column_file(const std::filesystem::path& path) {
  return parse_two_column_text(detail::read_text(path));
}

/// Writes the native format. Times use 9 decimals; absent trailing labels
/// are omitted. A label can only be written when every earlier level is set.
inline std::string serialize_annotation_file(const AnnotationTrack& track) {
  std::string out;
  for (const auto& ev : track.events) {
    out += detail::format_time(ev.time);
    out += "\t[";
    bool first = true;
    for (auto c : ev.categories.items()) {
      if (!first) out += ", ";
      out += category_code(c);
      first = false;
    }
    out += ']';
    for (const auto* label : {&ev.fine_label, &ev.coarse_label, &ev.function_label}) {
      if (!label->has_value()) break;
      out += ", ";
      out += **label;
    }
    out += '\n';
  }
  return out;
}

/// Two-column export: the most specific label present, else the codes.
inline std::string serialize_two_column(const AnnotationTrack& track) {
  std::string out;
  for (const auto& ev : track.events) {
    std::string label;
    if (ev.function_label) {
      label = *ev.function_label;
    } else if (ev.coarse_label) {
      label = *ev.coarse_label;
    } else if (ev.fine_label) {
      label = *ev.fine_label;
    } else if (ev.categories.contains(Category::End)) {
      label = "end";
    } else {
      label = "-";
    }
    out += detail::format_time(ev.time) + "\t" + label + "\n";
  }
  return out;
}

/// Binary per-frame boundary targets.
struct FrameTargets {
  std::vector<float> values;
  double frame_rate = 0.0;
  std::size_t smear = 0;

  std::size_t size() const noexcept { return values.size(); }
};

/// Marks round(time · frame_rate) (clamped to [0, T−1]) ± smear for every
/// interior event. Begin/End markers never produce positives.
inline FrameTargets boundaries_to_frame_targets(const AnnotationTrack& track, double frame_rate,
                                                std::size_t frames, std::size_t smear = 0) {
  if (frames == 0) throw std::invalid_argument("frame count must be positive");
  if (!(frame_rate > 0.0)) throw std::invalid_argument("frame rate must be positive");
  FrameTargets targets{std::vector<float>(frames, 0.0F), frame_rate, smear};
  const auto last = static_cast<std::ptrdiff_t>(frames) - 1;
  for (double t : track.interior_times()) {
    const auto center = std::clamp<std::ptrdiff_t>(
        static_cast<std::ptrdiff_t>(std::llround(t * frame_rate)), 0, last);
    const auto s = static_cast<std::ptrdiff_t>(smear);
    for (auto i = std::max<std::ptrdiff_t>(0, center - s); i <= std::min(last, center + s); ++i) {
      targets.values[static_cast<std::size_t>(i)] = 1.0F;
    }
  }
  return targets;
}

/// Divides every event time by `rate` (rate > 1 means faster playback).
inline AnnotationTrack scale_annotation_times(const AnnotationTrack& track, double rate) {
  if (!(rate > 0.0)) throw std::invalid_argument("rate must be positive");
  AnnotationTrack out = track;
  if (rate == 1.0) return out;
  for (auto& ev : out.events) ev.time /= rate;
  return out;
}

struct CorpusStats {
  std::size_t tracks = 0;
  std::size_t interior_events = 0;
  std::map<std::string, std::size_t> counts;  // only codes that occur
  double mean_segment = 0.0;
  double median_segment = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json hist = nlohmann::json::object();
    std::size_t total = 0;
    for (const auto& [code, n] : counts) total += n;
    for (const auto& [code, n] : counts) {
      hist[code] = {{"count", n},
                    {"fraction", total == 0 ? 0.0 : static_cast<double>(n) / static_cast<double>(total)}};
    }
    return {{"tracks", tracks},
            {"interior_events", interior_events},
            {"categories", hist},
            {"segment_duration", {{"mean", mean_segment}, {"median", median_segment}}}};
  }
};

/// Category histogram over interior events (codes counted per occurrence) and
/// the mean/median gap between consecutive events.
inline CorpusStats corpus_stats(const std::vector<AnnotationTrack>& tracks) {
  if (tracks.empty()) throw std::invalid_argument("corpus_stats needs at least one track");
  CorpusStats stats;
  stats.tracks = tracks.size();
  std::vector<double> gaps;
  for (const auto& track : tracks) {
    for (std::size_t i = 0; i < track.events.size(); ++i) {
      const auto& ev = track.events[i];
      if (i > 0) gaps.push_back(ev.time - track.events[i - 1].time);
      if (ev.is_marker()) continue;
      ++stats.interior_events;
      for (auto c : ev.categories.items()) ++stats.counts[std::string(category_code(c))];
    }
  }
  if (!gaps.empty()) {
    double sum = 0.0;
    for (double g : gaps) sum += g;
    stats.mean_segment = sum / static_cast<double>(gaps.size());
    std::sort(gaps.begin(), gaps.end());
    const std::size_t mid = gaps.size() / 2;
    stats.median_segment = gaps.size() % 2 ? gaps[mid] : 0.5 * (gaps[mid - 1] + gaps[mid]);
  }
  return stats;
}

}  // namespace gamseg
