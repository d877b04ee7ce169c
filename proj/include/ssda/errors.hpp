#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssda {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input that violates an operation's preconditions (dimensions, ranges, labels).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

/// Numerical failure during optimization. Carries the offending layer and/or
/// iteration when known (-1 otherwise).
class TrainingFault : public Error {
 public:
  TrainingFault(const std::string& what, int layer = -1, std::int64_t iteration = -1)
      : Error(what), layer_(layer), iteration_(iteration) {}

  int layer() const noexcept { return layer_; }
  std::int64_t iteration() const noexcept { return iteration_; }

 private:
  int layer_;
  std::int64_t iteration_;
};

/// Configuration problems, all collected before reporting.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> problems)
      : Error(join(problems)), problems_(std::move(problems)) {}

  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& problems) {
    std::string out;
    for (const auto& p : problems) {
      if (!out.empty()) out += "; ";
      out += p;
    }
    return out;
  }

  std::vector<std::string> problems_;
};

/// Malformed delimited data. `line()` is 1-based, 0 when not line-specific.
class DataFormatError : public Error {
 public:
  DataFormatError(const std::string& what, std::size_t line)
      : Error(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Checkpoint or report file that is truncated, corrupted or of the wrong version.
class CorruptArtifact : public Error {
 public:
  using Error::Error;
};

}  // namespace ssda
