#pragma once

#include <stdexcept>
#include <string>

namespace edgecl {

struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* kind() const noexcept { return "error"; }
};

// Shape or dimension disagreement between tensors/layers.
struct DimensionError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "dimension_error"; }
};

// Invalid configuration value (out-of-range alpha, zero budget, ...).
struct ConfigError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "config_error"; }
};

// API misuse, e.g. backward() without a cached forward pass.
struct ProtocolError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "protocol_error"; }
};

// Bad numeric input (NaN/Inf), empty datasets, label collisions.
struct DataError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "data_error"; }
};

// CSV / manifest parsing failures; message carries the line number.
struct ParseError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "parse_error"; }
};

struct IoError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "io_error"; }
};

// Bundle loading failures, each kind distinct.
struct VersionError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "version_error"; }
};
struct ChecksumError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "checksum_error"; }
};
struct ShapeError : Error {
  using Error::Error;
  const char* kind() const noexcept override { return "shape_error"; }
};

}  // namespace edgecl
