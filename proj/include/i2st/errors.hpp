#pragma once

#include <stdexcept>
#include <string>

namespace i2st {

// Shape disagreement between tensors, or against an op's shape contract.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid user-facing configuration: config files, CLI arguments, episode
// shapes that the dataset cannot host.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violated API precondition (non-scalar loss, label out of range, ...).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unrecognized or incompatible on-disk format revision.
struct VersionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace i2st
