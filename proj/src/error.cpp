#include "mdpet/error.hpp"

#include <sstream>

namespace mdpet {

std::string format_shape(const std::vector<std::size_t>& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

void require_same_shape(const char* what, const std::vector<std::size_t>& expected,
                        const std::vector<std::size_t>& actual) {
  if (expected != actual) {
    throw ShapeError(std::string(what) + ": expected " + format_shape(expected) + ", got " +
                     format_shape(actual));
  }
}

}  // namespace mdpet
