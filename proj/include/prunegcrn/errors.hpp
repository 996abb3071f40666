#pragma once

#include <stdexcept>
#include <string>

namespace prunegcrn {

/// Error classes. Each class maps to a distinct CLI exit code.
enum class ErrorKind {
  kDimension,
  kNumeric,
  kDomain,
  kConfig,
  kData,
  kParse,
  kTraining,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error(ErrorKind::kDimension, w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorKind::kNumeric, w) {}
};
struct DomainError : Error {
  explicit DomainError(const std::string& w) : Error(ErrorKind::kDomain, w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::kConfig, w) {}
};
struct DataError : Error {
  explicit DataError(const std::string& w) : Error(ErrorKind::kData, w) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& w) : Error(ErrorKind::kParse, w) {}
};
struct TrainingError : Error {
  explicit TrainingError(const std::string& w) : Error(ErrorKind::kTraining, w) {}
};

}  // namespace prunegcrn
