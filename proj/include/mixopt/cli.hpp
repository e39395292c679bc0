#pragma once

#include <string>
#include <vector>

namespace mixopt {

inline constexpr const char* kToolVersion = "0.1.0";

/// Exit codes: 0 success, 2 validation error, 3 infeasibility,
/// 4 non-convergence with a result still written.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitInfeasible = 3;
inline constexpr int kExitNonConverged = 4;

int run_cli(const std::vector<std::string>& args);

}  // namespace mixopt
