#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace flatsurr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A forward pass produced inf/nan. `node()` names the first offending node.
class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& node, const std::string& what)
      : Error(what), node_(node) {}
  const std::string& node() const noexcept { return node_; }

 private:
  std::string node_;
};

class ZeroVectorError : public Error {
 public:
  using Error::Error;
};

class GradientVanished : public Error {
 public:
  using Error::Error;
};

class Diverged : public Error {
 public:
  Diverged(int epoch, const std::string& what) : Error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

class NotDescent : public Error {
 public:
  using Error::Error;
};

class SpecError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class BadMagic : public FormatError {
 public:
  using FormatError::FormatError;
};

class Truncated : public FormatError {
 public:
  using FormatError::FormatError;
};

class FingerprintMismatch : public FormatError {
 public:
  using FormatError::FormatError;
};

class ConstructionWeak : public Error {
 public:
  ConstructionWeak(double kept_fraction, const std::string& what)
      : Error(what), kept_fraction_(kept_fraction) {}
  double kept_fraction() const noexcept { return kept_fraction_; }

 private:
  double kept_fraction_;
};

class InsufficientCorrect : public Error {
 public:
  InsufficientCorrect(std::size_t count, const std::string& what)
      : Error(what), count_(count) {}
  std::size_t count() const noexcept { return count_; }

 private:
  std::size_t count_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace flatsurr
