#pragma once

#include <stdexcept>
#include <string>

namespace palm {

// Shape/axis violations (conv channel mismatch, odd pooling dims, ...).
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad argument values (dropout rate >= 1, unknown block tag, ...).
class ParameterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Linear-algebra failures that survive the ridge rescue.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing files, malformed manifests, datasets without annotations.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace palm
