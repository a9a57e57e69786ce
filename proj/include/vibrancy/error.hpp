#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace vibrancy {

enum class ErrorKind {
  // usage
  InvalidArgument,
  InvalidSpec,
  // data
  OutOfBounds,
  MalformedLine,
  MalformedHeader,
  UnknownDirection,
  DuplicateService,
  EmptyCategoryList,
  UnknownService,
  UnknownCategory,
  EmptyInput,
  TooFewLocations,
  TooFewRows,
  ShapeMismatch,
  LengthMismatch,
  DimensionMismatch,
  SingleCluster,
  SingleClass,
  KTooLarge,
  NotFitted,
  Io,
  // numeric
  NonFinite,
  NotConverged,
};

/// Exit-code category of an error: 1 usage, 2 data, 3 numeric.
enum class ErrorCategory { Usage = 1, Data = 2, Numeric = 3 };

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::OutOfBounds: return "OutOfBounds";
    case ErrorKind::MalformedLine: return "MalformedLine";
    case ErrorKind::MalformedHeader: return "MalformedHeader";
    case ErrorKind::UnknownDirection: return "UnknownDirection";
    case ErrorKind::DuplicateService: return "DuplicateService";
    case ErrorKind::EmptyCategoryList: return "EmptyCategoryList";
    case ErrorKind::UnknownService: return "UnknownService";
    case ErrorKind::UnknownCategory: return "UnknownCategory";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::TooFewLocations: return "TooFewLocations";
    case ErrorKind::TooFewRows: return "TooFewRows";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::SingleCluster: return "SingleCluster";
    case ErrorKind::SingleClass: return "SingleClass";
    case ErrorKind::KTooLarge: return "KTooLarge";
    case ErrorKind::NotFitted: return "NotFitted";
    case ErrorKind::Io: return "Io";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::NotConverged: return "NotConverged";
  }
  return "Unknown";
}

constexpr ErrorCategory category_of(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument:
    case ErrorKind::InvalidSpec:
      return ErrorCategory::Usage;
    case ErrorKind::NonFinite:
    case ErrorKind::NotConverged:
      return ErrorCategory::Numeric;
    default:
      return ErrorCategory::Data;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  ErrorCategory category() const noexcept { return category_of(kind_); }

 private:
  ErrorKind kind_;
};

}  // namespace vibrancy
