#pragma once

#include <stdexcept>
#include <string>

namespace logmilp {

/// Root of the library's exception hierarchy.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ingest
class MalformedLine : public Error {
 public:
  using Error::Error;
};
class InvalidDimension : public Error {
 public:
  using Error::Error;
};

// bagging
class EmptyInput : public Error {
 public:
  using Error::Error;
};
class InvalidWindow : public Error {
 public:
  using Error::Error;
};
class TooFewBags : public Error {
 public:
  using Error::Error;
};

// model
class ShapeMismatch : public Error {
 public:
  using Error::Error;
};
class DegenerateVector : public Error {
 public:
  using Error::Error;
};
class InvalidIndex : public Error {
 public:
  using Error::Error;
};

// training / eval
class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};
class SingleClass : public Error {
 public:
  using Error::Error;
};
class NoPositiveBags : public Error {
 public:
  using Error::Error;
};
class InvalidSpec : public Error {
 public:
  using Error::Error;
};

// file formats and configuration
class FormatError : public Error {
 public:
  using Error::Error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};
class MissingArtifact : public Error {
 public:
  using Error::Error;
};

}  // namespace logmilp
