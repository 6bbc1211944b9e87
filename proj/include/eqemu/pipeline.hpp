#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "eqemu/models.hpp"

// Command layer behind the eqemu binary: run-config resolution, run
// manifests, and one function per subcommand.
namespace eqemu {

inline constexpr const char* kToolVersion = "0.1.0";

using KeyValue = std::pair<std::string, std::string>;

/// `key = value` lines; `#` starts a comment, blank lines are skipped.
std::vector<KeyValue> parse_config_text(std::string_view text);

/// Defaults for every key a run config may set.
nlohmann::json default_run_config(Architecture arch, ScalePreset preset, std::uint64_t seed, const std::string& out);

/// Sets a dotted key. Values that parse as JSON are stored as such, anything
/// else as a string. Keys outside the default layout are rejected, except
/// under `ranges.` which takes `family.parameter = low,high`.
void set_config_value(nlohmann::json& config, std::string_view key, std::string_view value);

struct RunRequest {
    std::string command;
    std::optional<std::filesystem::path> config_file;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> preset;
    std::optional<std::string> arch;
    std::optional<std::string> out;
    std::vector<KeyValue> flags;      // from dedicated flags, applied after the file
    std::vector<KeyValue> overrides;  // --set key=value, applied last
};

/// Defaults, then the config file, then flags, then overrides.
nlohmann::json resolve_run_config(const RunRequest& request);

/// Git blob hash: SHA-1 of "blob <size>\0" followed by the bytes.
std::string git_blob_sha1(std::string_view bytes);
std::string file_sha1(const std::filesystem::path& path);

/// run_manifest.json in `out_dir`: tool version, command, resolved config and
/// content hashes of the inputs and of every file the run left in `out_dir`.
void write_run_manifest(const std::filesystem::path& out_dir, const nlohmann::json& config,
                        const std::vector<std::filesystem::path>& inputs);

void cmd_generate(const nlohmann::json& config, std::ostream& log);
void cmd_train(const nlohmann::json& config, std::ostream& log);
void cmd_eval(const nlohmann::json& config, std::ostream& log);
void cmd_sweep(const nlohmann::json& config, std::ostream& log);

struct SuiteResult {
    std::string name;
    bool passed = true;
    double seconds = 0.0;
    std::vector<std::string> failures;
};

struct SolverCheck {
    double advection_linf = 0.0;      // pure advection, 10 reference steps vs the shifted IC
    double diffusion_max_error = 0.0; // one mode per check vs exp(-nu k^2 t)
};
SolverCheck solver_analytic_check();

SuiteResult run_solver_suite();
SuiteResult run_gradient_suite(std::size_t seeds = 3);
SuiteResult run_metric_suite();

/// All three suites; with `fault_op` set, that op's backward is corrupted
/// while the gradient suite runs.
std::vector<SuiteResult> cmd_selfcheck(const std::optional<std::string>& fault_op, std::ostream& log);

}  // namespace eqemu
