#pragma once

// Run plumbing shared by the command-line tool and its tests: run configs,
// output-root resolution and metric exports.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "spaars/curriculum.hpp"

namespace spaars::run {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kOutputRootEnv = "SPAARS_OUTPUT_ROOT";

enum ExitCode : int {
    kExitOk = 0,
    kExitOther = 1,
    kExitUsage = 2,
    kExitConfig = 3,
    kExitNumeric = 4,
    kExitVerification = 5,
};

struct RunConfig {
    std::string dataset;     ///< offline dataset path (absolute after resolution)
    std::string output_dir;  ///< run directory (absolute after resolution)
    std::string cvae_model;  ///< optional pretrained CVAE; empty trains one
    std::int64_t checkpoint_every = 0;  ///< env steps between checkpoint_<step>.bin files; 0 writes only the final checkpoint.bin
    curriculum::TrainConfig train;
};

/// Parses and validates a run config. Relative dataset / model paths resolve against
/// `base_dir`; a relative output_dir resolves against `output_root` (or the working directory).
/// Throws ConfigError for unknown keys, bad values or missing files.
RunConfig parse_run_config(const std::string& text, const std::string& base_dir, const std::string& output_root);
RunConfig load_run_config(const std::string& path);
std::string to_json(const RunConfig& config);

/// $SPAARS_OUTPUT_ROOT or empty.
std::string output_root_from_env();
/// `dir` if absolute, else joined onto `root` (or the working directory when root is empty).
std::string resolve_output_dir(const std::string& dir, const std::string& root);

/// Metric record keys in stream order.
const std::vector<std::string>& metrics_columns();

/// JSONL metrics -> CSV with exactly metrics_columns(); nulls become empty cells and
/// state vectors join with ';'.
void export_csv(std::istream& metrics, std::ostream& out);

struct Series {
    std::uint64_t seed = 0;
    std::vector<std::pair<std::int64_t, double>> points;  ///< (step, eval_return), ascending step
};

/// Eval records grouped by seed.
std::vector<Series> eval_series(std::istream& metrics);
/// One polyline per series, eval_return against step.
void export_svg_lines(const std::vector<Series>& series, std::ostream& out);

/// heatmap_<step>.csv files in a run directory, ascending step.
std::vector<std::string> heatmap_files(const std::string& run_dir);
std::string heatmap_filename(std::int64_t step);

}  // namespace spaars::run
