#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ninv/config.hpp"
#include "ninv/data.hpp"

namespace ninv {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDivergence = 3;

// Each command writes config.resolved, its artifacts and manifest.json
// into out_dir (created if missing). Progress lines go to log.
void cmd_train_classifier(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log);
void cmd_invert(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log);
void cmd_reconstruct(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log);
void cmd_ood(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log);
void cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log);

const std::vector<std::string>& command_names();

/// Loads the config, applies the seed override and runs the command.
/// Returns the process exit code; errors are reported on err.
int run_command(const std::string& command, const std::filesystem::path& config_path,
                const std::filesystem::path& out_dir, std::optional<std::uint64_t> seed, std::ostream& log,
                std::ostream& err);

/// Train and test splits selected by the data.* keys.
std::pair<Dataset, Dataset> load_configured_data(const RunConfig& cfg);

/// A named evaluation set: a synthetic family name (test split drawn with
/// the data.* shape and noise), "noise", "data" (the configured test
/// split) or "idx:<images>:<labels>".
Dataset resolve_dataset(const std::string& token, const RunConfig& cfg, std::size_t size);

}  // namespace ninv
