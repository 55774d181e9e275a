#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace covshift::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kConfigError = 1;
inline constexpr int kDataError = 2;
inline constexpr int kNumericalError = 3;

// Runs one subcommand. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace covshift::cli
