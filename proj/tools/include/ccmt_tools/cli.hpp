#ifndef CCMT_TOOLS_CLI_HPP_
#define CCMT_TOOLS_CLI_HPP_

#include <ostream>
#include <string>
#include <vector>

namespace ccmt::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;

/// Runs the `ccmt` command line. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ccmt::cli

#endif  // CCMT_TOOLS_CLI_HPP_
