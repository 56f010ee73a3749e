#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "gamseg/annotations.hpp"
#include "gamseg/error.hpp"

namespace gamseg {

enum class AnnotationFormat { Savgm, TwoColumn };

inline std::string_view format_name(AnnotationFormat f) {
  return f == AnnotationFormat::Savgm ? "savgm" : "two_column";
}

inline AnnotationFormat parse_format(std::string_view name) {
  if (name == "savgm") return AnnotationFormat::Savgm;
  if (name == "two_column") return AnnotationFormat::TwoColumn;
  throw ConfigError("unknown annotation_format '" + std::string(name) + "'");
}

struct ManifestEntry {
  std::filesystem::path audio_path;
  std::filesystem::path annotation_path;
  AnnotationFormat annotation_format = AnnotationFormat::Savgm;
  std::string split = "train";

  std::string id() const { return audio_path.stem().string(); }
  bool operator==(const ManifestEntry&) const = default;
};

inline AnnotationTrack load_annotation(const ManifestEntry& e) {
  return e.annotation_format == AnnotationFormat::Savgm ? parse_annotation_file(e.annotation_path)
                                                        : parse_two_column_file(e.annotation_path);
}

/// JSON Lines manifest. Relative paths resolve against the manifest directory.
struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> split(std::string_view name) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries) {
      if (e.split == name) out.push_back(e);
    }
    return out;
  }
};

inline bool valid_split(std::string_view s) { return s == "train" || s == "val" || s == "test"; }

inline nlohmann::json manifest_line(const ManifestEntry& e) {
  return {{"audio_path", e.audio_path.generic_string()},
          {"annotation_path", e.annotation_path.generic_string()},
          {"annotation_format", format_name(e.annotation_format)},
          {"split", e.split}};
}

inline DatasetManifest parse_manifest_text(std::string_view text,
                                           const std::filesystem::path& base_dir,
                                           bool check_paths = true) {
  DatasetManifest m;
  std::size_t lineno = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++lineno;
    if (detail::trim(line).empty()) continue;
    ManifestEntry e;
    try {
      const auto j = nlohmann::json::parse(line);
      e.audio_path = j.at("audio_path").get<std::string>();
      e.annotation_path = j.at("annotation_path").get<std::string>();
      e.annotation_format = parse_format(j.value("annotation_format", std::string("savgm")));
      e.split = j.value("split", std::string("train"));
    } catch (const nlohmann::json::exception& ex) {
      throw MalformedLine(lineno, ex.what());
    }
    if (!valid_split(e.split)) throw MalformedLine(lineno, "unknown split '" + e.split + "'");
    if (e.audio_path.is_relative()) e.audio_path = base_dir / e.audio_path;
    if (e.annotation_path.is_relative()) e.annotation_path = base_dir / e.annotation_path;
    if (check_paths) {
      for (const auto& p : {e.audio_path, e.annotation_path}) {
        if (!std::filesystem::exists(p)) throw IoError("manifest line " + std::to_string(lineno) +
                                                       ": missing " + p.string());
      }
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  return parse_manifest_text(detail::read_text(path), path.parent_path());
}

/// Writes entries with paths relative to the manifest's directory.
inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  const auto base = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  std::string text;
  for (auto e : m.entries) {
    e.audio_path = std::filesystem::relative(e.audio_path, base);
    e.annotation_path = std::filesystem::relative(e.annotation_path, base);
    text += manifest_line(e).dump();
    text += '\n';
  }
  detail::write_text(path, text);
}

}  // namespace gamseg
