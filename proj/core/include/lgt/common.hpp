#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lgt {

// Error taxonomy. Everything user-facing maps onto one of these; the CLI
// turns ConfigError into exit code 1 and anything else into 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvariantError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void check_config(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}
inline void check_shape(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}
inline void check_invariant(bool ok, const std::string& msg) {
  if (!ok) throw InvariantError(msg);
}

}  // namespace lgt
