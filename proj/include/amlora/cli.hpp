#pragma once

#include <ostream>

namespace amlora::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitFailure = 2;

/// Parses argv and runs one verb: run, verify-ortho, grad-check, inspect-gates
/// or report. Returns 0 on success, 1 on invalid input (bad flags, unknown or
/// malformed config keys, missing files) and 2 when a run fails.
int parse_and_dispatch(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

} // namespace amlora::cli
