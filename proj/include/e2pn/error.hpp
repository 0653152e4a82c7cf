#pragma once

#include <stdexcept>
#include <string>

namespace e2pn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define E2PN_DEFINE_ERROR(Name)                                          \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
  }

// rotgroup
E2PN_DEFINE_ERROR(ClosureOverflow);
E2PN_DEFINE_ERROR(AmbiguousMatch);
// kernel
E2PN_DEFINE_ERROR(NotClosed);
// autograd / layers
E2PN_DEFINE_ERROR(ShapeMismatch);
E2PN_DEFINE_ERROR(IndexOutOfRange);
E2PN_DEFINE_ERROR(DomainError);
// train / cli
E2PN_DEFINE_ERROR(Diverged);
E2PN_DEFINE_ERROR(ConfigError);
E2PN_DEFINE_ERROR(CheckpointMissing);

#undef E2PN_DEFINE_ERROR

}  // namespace e2pn
