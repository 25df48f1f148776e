#pragma once

#include <stdexcept>
#include <string>

namespace siamtl {

// Invalid build-time configuration: layer dims, hyperparameters, config files.
struct config_error : std::runtime_error {
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// Vector/matrix dimension mismatch.
struct shape_error : std::runtime_error {
  explicit shape_error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed input file; message carries row/column context.
struct parse_error : std::runtime_error {
  explicit parse_error(const std::string& what) : std::runtime_error(what) {}
};

// Operation precondition violated by runtime data.
struct invalid_input_error : std::runtime_error {
  explicit invalid_input_error(const std::string& what) : std::runtime_error(what) {}
};

// Numeric breakdown: non-finite values, failed stability checks.
struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

// Filesystem failure on an output path.
struct io_error : std::runtime_error {
  explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace siamtl
