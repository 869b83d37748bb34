#pragma once

#include <stdexcept>
#include <string>

namespace avsdf {

// Contract violations (bad shapes, bad parameters, malformed content) map to
// process exit code 2; filesystem-level failures map to exit code 3.
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractError(msg);
}

}  // namespace avsdf
