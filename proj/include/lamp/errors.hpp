// Copyright lamprune contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace lamp {

// Base class for all toolkit errors. name() is the stable identifier the
// CLI prints on stderr before exiting with a validation failure.
class Error : public std::runtime_error {
 public:
  Error(std::string name, const std::string& message)
      : std::runtime_error(name + ": " + message), name_(std::move(name)) {}

  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

#define LAMP_DEFINE_ERROR(TYPE)                                       \
  class TYPE : public Error {                                         \
   public:                                                            \
    explicit TYPE(const std::string& message) : Error(#TYPE, message) {} \
  }

// model-io
LAMP_DEFINE_ERROR(ParseError);
LAMP_DEFINE_ERROR(ShapeMismatch);
LAMP_DEFINE_ERROR(NonFiniteWeight);
LAMP_DEFINE_ERROR(OverlapError);
LAMP_DEFINE_ERROR(IoError);
LAMP_DEFINE_ERROR(MetadataMismatch);

// scoring
LAMP_DEFINE_ERROR(EmptyLayer);
LAMP_DEFINE_ERROR(AllZero);

// allocation
LAMP_DEFINE_ERROR(InfeasibleBudget);
LAMP_DEFINE_ERROR(DegenerateLayer);
LAMP_DEFINE_ERROR(NonPositiveFactor);
LAMP_DEFINE_ERROR(BadFraction);

// distortion lab
LAMP_DEFINE_ERROR(DimMismatch);
LAMP_DEFINE_ERROR(TooLarge);
LAMP_DEFINE_ERROR(NoConvergence);

#undef LAMP_DEFINE_ERROR

}  // namespace lamp
