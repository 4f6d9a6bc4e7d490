#pragma once

#include <stdexcept>
#include <string>

namespace segxray {

// Error categories map 1:1 onto the CLI's machine-parsable failure lines.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}
  const std::string& category() const { return category_; }

 private:
  std::string category_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape", what) {}
};

class UnboundInputError : public Error {
 public:
  explicit UnboundInputError(const std::string& what) : Error("unbound-input", what) {}
};

class GraphError : public Error {
 public:
  explicit GraphError(const std::string& what) : Error("graph", what) {}
};

class InvalidSpecError : public Error {
 public:
  explicit InvalidSpecError(const std::string& what) : Error("invalid-spec", what) {}
};

class CheckpointError : public Error {
 public:
  explicit CheckpointError(const std::string& what) : Error("bad-checkpoint", what) {}
};

class MissingFileError : public Error {
 public:
  explicit MissingFileError(const std::string& what) : Error("missing-file", what) {}
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what) : Error("divergence", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

}  // namespace segxray
