#pragma once

#include <stdexcept>
#include <string>

namespace mbf {

enum class Errc {
  invalid_argument,
  format,
  io,
  singularity,
  empty_surface,
  open_mesh,
  degenerate,
  numeric,
};

/// Single exception type for the library; `code()` classifies the failure so
/// front ends can map it to exit codes.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(Errc::invalid_argument, what);
}

}  // namespace mbf
