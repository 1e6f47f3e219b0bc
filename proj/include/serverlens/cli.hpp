#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace serverlens {

// Exit codes: 0 success, 1 user or configuration error, 2 internal error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUser = 1;
inline constexpr int kExitInternal = 2;

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// SERVERLENS_PORT (when set and non-empty) wins over the flag value.
int resolve_port(int flag_port, const char* env_value);

}  // namespace serverlens
