#pragma once

#include <stdexcept>
#include <string>

namespace xmsleep {

// Every error raised by the library carries a short machine-readable category
// ("dimension", "input", "state", "format", "evaluation") so the CLI can print
// `error: <category>: <detail>`.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& detail)
      : std::runtime_error(detail), category_(std::move(category)) {}

  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& detail) : Error("dimension", detail) {}
};

class InputError : public Error {
 public:
  explicit InputError(const std::string& detail) : Error("input", detail) {}
};

class StateError : public Error {
 public:
  explicit StateError(const std::string& detail) : Error("state", detail) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& detail) : Error("format", detail) {}
};

class EvaluationError : public Error {
 public:
  explicit EvaluationError(const std::string& detail) : Error("evaluation", detail) {}
};

}  // namespace xmsleep
