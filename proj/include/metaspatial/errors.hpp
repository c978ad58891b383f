#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace metaspatial {

// Malformed user input (task files, dumps, config). The CLI maps it to exit 2.
class InputError : public std::runtime_error {
 public:
  InputError(std::string path, const std::string& what)
      : std::runtime_error(path.empty() ? what : path + ": " + what),
        path_(std::move(path)),
        message_(what) {}

  const std::string& path() const noexcept { return path_; }
  // what() without the path prefix
  const std::string& message() const noexcept { return message_; }

 private:
  std::string path_;
  std::string message_;
};

// Failure inside the engine at run time (policy, judge transport, ...).
class EngineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace metaspatial
