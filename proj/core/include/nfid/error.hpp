#pragma once

#include <functional>
#include <stdexcept>
#include <string>

namespace nfid {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input data, bad configuration, or a violated precondition.
/// The CLI maps this to exit code 2.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A computation that diverged, went non-finite, or failed to converge.
/// The CLI maps this to exit code 1.
class NumericalError : public Error {
 public:
  using Error::Error;
};

using WarningHandler = std::function<void(const std::string&)>;

// Non-fatal diagnostics (unbalanced abc input, short dwell times, ...).
// The default handler writes to stderr. Thread-safe.
void warn(const std::string& message);
WarningHandler set_warning_handler(WarningHandler handler);

}  // namespace nfid
