#pragma once

#include <stdexcept>
#include <string>

namespace udad {

/// Input rejected before any work was done (bad arguments, schema violation).
class validation_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Shapes of two operands disagree.
class shape_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class format_errc {
  magic_mismatch,
  truncated,
  size_mismatch,
  bad_header,
  io,
};

/// Failure while reading or writing one of the on-disk containers.
class format_error : public std::runtime_error {
 public:
  format_error(format_errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  format_errc code() const noexcept { return code_; }

 private:
  format_errc code_;
};

/// Tensor fit could not be performed for the given acquisition geometry.
class fit_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value became NaN or infinite inside the network or the optimizer.
class poison_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class divergence_error : public std::runtime_error {
 public:
  divergence_error(int epoch, int batch, const std::string& what)
      : std::runtime_error(what), epoch_(epoch), batch_(batch) {}
  int epoch() const noexcept { return epoch_; }
  int batch() const noexcept { return batch_; }

 private:
  int epoch_;
  int batch_;
};

}  // namespace udad
