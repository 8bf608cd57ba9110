#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace polpre {

// Exit codes of the command-line driver.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

// Runs one pipeline stage. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(std::string_view bytes);

// "<output>.manifest.json" for a stage's primary output.
std::filesystem::path manifest_path(const std::filesystem::path& output);

}  // namespace polpre
