#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mdpet {

/// Bad arguments, unmet preconditions, malformed inputs. The CLI maps these
/// to exit code 2; every other std::exception maps to 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Tensor dimensions that do not fit an operation's contract.
class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

std::string format_shape(const std::vector<std::size_t>& shape);

/// Throws ShapeError "<what>: expected [..], got [..]" when the shapes differ.
void require_same_shape(const char* what, const std::vector<std::size_t>& expected,
                        const std::vector<std::size_t>& actual);

}  // namespace mdpet
