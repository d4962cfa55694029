#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedsim {

/// Violated precondition on a public operation (dimension mismatch, bad label, ...).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid or unknown configuration entry.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A local solve produced a non-finite iterate. Carries the round and device
/// so a simulation failure can be located.
class DivergenceError : public std::runtime_error {
 public:
  static constexpr std::size_t kUnknown = static_cast<std::size_t>(-1);

  DivergenceError(const std::string& what, std::size_t round = kUnknown,
                  std::size_t device = kUnknown)
      : std::runtime_error(what), round_(round), device_(device) {}

  std::size_t round() const noexcept { return round_; }
  std::size_t device() const noexcept { return device_; }

 private:
  std::size_t round_;
  std::size_t device_;
};

}  // namespace fedsim
