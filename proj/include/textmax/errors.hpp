#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace textmax {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible operand shapes. The message names both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf surfaced in checked mode. Carries the graph node that produced it.
class NumericError : public Error {
 public:
  NumericError(std::size_t node, const std::string& what)
      : Error(what), node_(node) {}
  std::size_t node() const noexcept { return node_; }

 private:
  std::size_t node_;
};

/// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Problems reading or validating a persisted artifact (weights, tables, records).
class FormatError : public Error {
 public:
  enum class Kind {
    kMalformed,
    kUnknownVersion,
    kMissingTensor,
    kShapeMismatch,
    kBadChecksum,
    kHashMismatch,
  };

  FormatError(Kind kind, std::string field, const std::string& what)
      : Error(what), kind_(kind), field_(std::move(field)) {}

  Kind kind() const noexcept { return kind_; }
  const std::string& field() const noexcept { return field_; }

 private:
  Kind kind_;
  std::string field_;
};

inline const char* to_string(FormatError::Kind kind) {
  switch (kind) {
    case FormatError::Kind::kMalformed: return "malformed";
    case FormatError::Kind::kUnknownVersion: return "unknown-version";
    case FormatError::Kind::kMissingTensor: return "missing-tensor";
    case FormatError::Kind::kShapeMismatch: return "shape-mismatch";
    case FormatError::Kind::kBadChecksum: return "bad-checksum";
    case FormatError::Kind::kHashMismatch: return "hash-mismatch";
  }
  return "unknown";
}

}  // namespace textmax
