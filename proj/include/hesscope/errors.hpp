#pragma once

#include <stdexcept>
#include <string>

namespace hesscope {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Problems with user-supplied configuration or specs; the CLI maps these to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class SpecError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class ClassCountMismatch : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class NonFiniteLoss : public Error {
 public:
  NonFiniteLoss(double value, const std::string& context)
      : Error("non-finite loss " + std::to_string(value) + (context.empty() ? "" : " (" + context + ")")),
        value_(value) {}
  double value() const { return value_; }

 private:
  double value_;
};

// File formats.
class BadMagic : public Error {
 public:
  using Error::Error;
};
class TruncatedFile : public Error {
 public:
  using Error::Error;
};
class CountMismatch : public Error {
 public:
  using Error::Error;
};
class VersionMismatch : public Error {
 public:
  using Error::Error;
};
class ManifestError : public Error {
 public:
  using Error::Error;
};

class EmptyDataset : public Error {
 public:
  using Error::Error;
};

class ColdOptimizer : public Error {
 public:
  using Error::Error;
};

class DegenerateCenter : public Error {
 public:
  using Error::Error;
};

class NoPositiveSpectrum : public Error {
 public:
  using Error::Error;
};

class OracleFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace hesscope
