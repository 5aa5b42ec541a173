#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace icps {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

/// Environment variable consulted when --data is not given.
inline constexpr const char* kDataRootEnv = "ICPS_DATA_ROOT";

/// Entry point for the `icps` executable. Never throws.
int cli_main(int argc, const char* const* argv);
int cli_main(const std::vector<std::string>& args);

/// 16-bit code for a probability such that decoding (code / 65535, as float)
/// lands on the same side of `threshold` as `p`.
std::uint16_t encode_probability(float p, double threshold);

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// Hashes every regular file under `dir` except manifest.json, keyed by relative path.
nlohmann::json hash_artifacts(const std::filesystem::path& dir);

}  // namespace icps
