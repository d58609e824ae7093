#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mash {

// Base for every error raised by the library. The CLI maps any of these to a
// nonzero exit code.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (dimension mismatch, missing field).
struct ContractViolation : Error {
  using Error::Error;
};

// Invalid morphology, randomization table or run configuration.
struct ConfigError : Error {
  using Error::Error;
};

// The physics state became non-finite.
struct SimulationBlowUp : Error {
  SimulationBlowUp(const std::string& what, std::int64_t step)
      : Error(what + " (step " + std::to_string(step) + ")"), step_index(step) {}
  std::int64_t step_index;
};

// Non-finite gradient or loss during optimization.
struct TrainingDivergence : Error {
  using Error::Error;
};

// Metric inputs too short to evaluate.
struct InsufficientData : Error {
  using Error::Error;
};

// Phase extraction found no dominant periodic component.
struct AperiodicGait : Error {
  using Error::Error;
};

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ContractViolation(what);
}

}  // namespace mash
