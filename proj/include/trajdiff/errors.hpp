#pragma once

#include <stdexcept>
#include <string>

namespace trajdiff {

// Exit-code contract for the CLI: usage errors -> 1, data errors -> 2,
// numeric failures -> 3. Library code throws, the CLI maps.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

struct DegenerateRotation : DataError {
  DegenerateRotation() : DataError("degenerate 6D rotation token") {}
  explicit DegenerateRotation(const std::string& m) : DataError(m) {}
};

struct NonPositiveDepth : DataError {
  explicit NonPositiveDepth(double z)
      : DataError("pose depth below positive floor: z=" + std::to_string(z)) {}
};

struct SequenceTooShort : DataError {
  explicit SequenceTooShort(const std::string& m) : DataError(m) {}
};

struct ShapeMismatch : DataError {
  explicit ShapeMismatch(const std::string& m) : DataError(m) {}
};

struct AlreadyFrozen : DataError {
  AlreadyFrozen() : DataError("token statistics already frozen") {}
};

struct UnfrozenStats : DataError {
  UnfrozenStats() : DataError("token statistics must be frozen before use") {}
};

struct InvalidCounts : DataError {
  explicit InvalidCounts(const std::string& m) : DataError(m) {}
};

struct LengthMismatch : DataError {
  explicit LengthMismatch(const std::string& m) : DataError(m) {}
};

struct DimensionMismatch : DataError {
  explicit DimensionMismatch(const std::string& m) : DataError(m) {}
};

struct NoValidFrames : DataError {
  NoValidFrames() : DataError("no valid frames for scale estimation") {}
};

struct AlreadyLocked : DataError {
  AlreadyLocked() : DataError("scale estimate already locked") {}
};

struct InvalidSpec : DataError {
  explicit InvalidSpec(const std::string& m) : DataError(m) {}
};

struct BehindCamera : DataError {
  BehindCamera() : DataError("object corner behind camera during projection") {}
};

struct IoError : DataError {
  explicit IoError(const std::string& m) : DataError(m) {}
};

struct DataMismatch : DataError {
  explicit DataMismatch(const std::string& m) : DataError(m) {}
};

}  // namespace trajdiff
