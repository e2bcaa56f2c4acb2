#pragma once

#include <cstdint>
#include <string>

namespace symcad {

inline constexpr const char* kToolVersion = "0.1.0";

/// Stamped into every artifact so a stage can refuse inputs produced
/// under a different configuration.
struct Provenance {
  uint64_t config_hash = 0;
  uint64_t seed = 0;
  std::string tool_version = kToolVersion;
};

}  // namespace symcad
