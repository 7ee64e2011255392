#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fpb::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kError = 1;
inline constexpr int kUsage = 2;
inline constexpr int kNonFinite = 3;

// Environment variable consulted when no data root is configured.
inline constexpr const char* kDataRootEnv = "FPB_DATA_ROOT";

// Runs one command: train, evaluate, extract, param-count or toy-gen.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace fpb::cli
