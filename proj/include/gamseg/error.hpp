#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gamseg {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define GAMSEG_DEFINE_ERROR(Name)              \
  class Name : public Error {                  \
   public:                                     \
    explicit Name(const std::string& what_arg) \
        : Error(#Name ": " + what_arg) {}      \
  }

// audio_io
GAMSEG_DEFINE_ERROR(UnreadableFile);
GAMSEG_DEFINE_ERROR(UnsupportedEncoding);

// features
GAMSEG_DEFINE_ERROR(ClipTooShort);
GAMSEG_DEFINE_ERROR(ColumnMismatch);
GAMSEG_DEFINE_ERROR(IoError);
GAMSEG_DEFINE_ERROR(BadMagic);
GAMSEG_DEFINE_ERROR(DimensionOverflow);

// annotations
GAMSEG_DEFINE_ERROR(NonMonotonicTime);
GAMSEG_DEFINE_ERROR(MissingBeginEnd);

// neuralnet
GAMSEG_DEFINE_ERROR(ShapeMismatch);
GAMSEG_DEFINE_ERROR(LengthMismatch);
GAMSEG_DEFINE_ERROR(GraphNotBuilt);
GAMSEG_DEFINE_ERROR(ArchitectureMismatch);

// training
GAMSEG_DEFINE_ERROR(RateOutOfRange);
GAMSEG_DEFINE_ERROR(EmptyManifest);
GAMSEG_DEFINE_ERROR(FeatureExtractionFailed);
GAMSEG_DEFINE_ERROR(ConfigError);

// postprocess_eval
GAMSEG_DEFINE_ERROR(UnsortedInput);

// baseline
GAMSEG_DEFINE_ERROR(KernelTooLarge);
GAMSEG_DEFINE_ERROR(SequenceTooLong);

// synth
GAMSEG_DEFINE_ERROR(SpecInvalid);

#undef GAMSEG_DEFINE_ERROR

/// Malformed annotation line; carries the 1-based line number.
class MalformedLine : public Error {
 public:
  MalformedLine(std::size_t line, const std::string& what_arg)
      : Error("MalformedLine: line " + std::to_string(line) + ": " + what_arg),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Grid search cartesian size outside [1, cap].
class GridTooLarge : public Error {
 public:
  GridTooLarge(std::size_t size, std::size_t cap)
      : Error("GridTooLarge(" + std::to_string(size) + "): allowed range is 1.." +
              std::to_string(cap)),
        size_(size) {}
  std::size_t size() const noexcept { return size_; }

 private:
  std::size_t size_;
};

}  // namespace gamseg
