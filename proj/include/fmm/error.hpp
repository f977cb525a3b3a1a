#pragma once

#include <stdexcept>
#include <string>

namespace fmm {

/// Base class for every error raised by the library. `kind()` is a short
/// machine-readable tag used in CLI error records.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error("contract", what) {}
};

class NumericError : public Error {
 public:
  NumericError(const std::string& what, int layer = -1)
      : Error("numeric", what), layer_(layer) {}
  /// Layer index where the non-finite value appeared, -1 if not layer-specific.
  int layer() const noexcept { return layer_; }

 private:
  int layer_;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch, long step)
      : Error("training", what), epoch_(epoch), step_(step) {}
  int epoch() const noexcept { return epoch_; }
  long step() const noexcept { return step_; }

 private:
  int epoch_;
  long step_;
};

class CalibrationError : public Error {
 public:
  explicit CalibrationError(const std::string& what) : Error("calibration", what) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error("format", what) {}
};

/// A pipeline artifact is missing; `producer()` names the command that makes it.
class DependencyError : public Error {
 public:
  DependencyError(const std::string& what, std::string producer)
      : Error("dependency", what), producer_(std::move(producer)) {}
  const std::string& producer() const noexcept { return producer_; }

 private:
  std::string producer_;
};

}  // namespace fmm
