#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "gamseg/audio_io.hpp"
#include "gamseg/rng.hpp"

namespace gamseg::test {

inline AudioClip sine(double freq, double seconds, int rate = kCanonicalRate, double amp = 0.5) {
  AudioClip c;
  c.sample_rate = rate;
  c.samples.resize(static_cast<std::size_t>(std::llround(seconds * rate)));
  for (std::size_t n = 0; n < c.samples.size(); ++n) {
    c.samples[n] = amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(n) / rate);
  }
  return c;
}

inline AudioClip noise(std::size_t n, std::uint64_t seed, double amp = 0.3) {
  AudioClip c;
  c.sample_rate = kCanonicalRate;
  Rng rng(seed);
  c.samples.resize(n);
  for (auto& s : c.samples) s = amp * rng.uniform(-1.0, 1.0);
  return c;
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("gamseg_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

struct CommandResult {
  int status = -1;
  std::string output;
};

/// Runs a shell command and captures stdout (stderr is merged when asked).
inline CommandResult run_command(const std::string& cmd, bool merge_stderr = false) {
  CommandResult r;
  const std::string full = merge_stderr ? cmd + " 2>&1" : cmd + " 2>/dev/null";
  FILE* pipe = popen(full.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.status = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

}  // namespace gamseg::test
