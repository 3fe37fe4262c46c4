#pragma once

#include <stdexcept>
#include <string>

namespace hitrans {

// Base for every error the library raises. kind() is a stable machine-readable tag
// that the CLI echoes in its error JSON.
class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

private:
  std::string kind_;
};

#define HITRANS_ERROR_KIND(Name, tag)                                  \
  class Name : public Error {                                          \
  public:                                                              \
    explicit Name(const std::string& message) : Error(tag, message) {} \
  };

HITRANS_ERROR_KIND(DimensionError, "dimension")
HITRANS_ERROR_KIND(IndexError, "index")
HITRANS_ERROR_KIND(ConfigError, "config")
HITRANS_ERROR_KIND(ContractError, "contract")
HITRANS_ERROR_KIND(LengthError, "length")
HITRANS_ERROR_KIND(CapacityError, "capacity")
HITRANS_ERROR_KIND(ParseError, "parse")
HITRANS_ERROR_KIND(SchemaError, "schema")
HITRANS_ERROR_KIND(TrainingError, "training")
HITRANS_ERROR_KIND(CompatibilityError, "compatibility")
HITRANS_ERROR_KIND(IoError, "io")

#undef HITRANS_ERROR_KIND

}  // namespace hitrans
