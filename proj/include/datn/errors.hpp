#pragma once

#include <stdexcept>
#include <string>

namespace datn {

/// Shapes that do not fit an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid configuration values or unknown names (variants, layer maps, metrics).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical failure: non-finite values, a vanishing normalizer, a diverged loss.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised by the approximate-attention normalizer guard. Carries the location.
class DenominatorError : public NumericalError {
 public:
  DenominatorError(const std::string& what, long layer, long head, long position)
      : NumericalError(what), layer_(layer), head_(head), position_(position) {}

  long layer() const noexcept { return layer_; }
  long head() const noexcept { return head_; }
  long position() const noexcept { return position_; }

 private:
  long layer_;
  long head_;
  long position_;
};

/// Checkpoint or record files that cannot be decoded.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace datn
