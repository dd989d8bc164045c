#pragma once

#include <stdexcept>
#include <string>

namespace cfan {

/// Malformed input file (bad token, truncated header, 0-based OBJ index, ...).
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Structurally invalid data (degenerate face, out-of-range index, isolated vertex).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not line up.
class ShapeMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// NaN or Inf appeared in a forward computation; the step must be abandoned.
class NonFiniteDetected : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Generic numeric failure that is not a shape problem (disconnected mesh,
/// empty chart, hierarchy too deep, topology mismatch, ...).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace cfan
