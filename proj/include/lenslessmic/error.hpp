#pragma once

#include <stdexcept>
#include <string>

namespace lenslessmic {

enum class ErrorKind {
  invalid_argument,
  degenerate_key,
  singular_system,
  divergence,
  format,
  io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool cond, const std::string& what, ErrorKind kind = ErrorKind::invalid_argument) {
  if (!cond) throw Error(kind, what);
}

}  // namespace lenslessmic
