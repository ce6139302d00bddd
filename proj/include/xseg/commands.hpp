#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "xseg/pipeline.hpp"

namespace xseg::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericalError = 3 };

/// Writes points JSON simulated from a ground-truth mask.
int simulate_points(const std::filesystem::path& gt_path, const std::filesystem::path& out_json, double jitter_mm,
                    std::uint64_t seed, std::ostream& err);

struct SegmentArgs {
  std::filesystem::path volume;
  std::filesystem::path points;
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> ground_truth;
  std::filesystem::path out_dir;
  std::optional<std::uint64_t> seed;
};

/// One-case pipeline run. Writes mask, probability, rounds.jsonl, and the
/// trained model (when any round trained) into `out_dir`.
int segment(const SegmentArgs& args, std::ostream& log, std::ostream& err);

/// Writes `phantom_NNN` images and `phantom_NNN_gt` masks.
int phantom(const std::filesystem::path& out_dir, int n_cases, std::uint64_t seed, std::ostream& err);

int resample(const std::filesystem::path& in, const std::filesystem::path& out, double target_mm, std::ostream& err);

/// Blocks serving the annotation API until the process is stopped.
int serve(const std::filesystem::path& data_dir, const std::string& host, int port,
          const std::optional<std::filesystem::path>& config, std::ostream& log, std::ostream& err);

/// Loads a config file (if given) over the defaults.
PipelineConfig load_config(const std::optional<std::filesystem::path>& path);

/// Parses argv and dispatches to a subcommand.
int run(int argc, char** argv);

}  // namespace xseg::cli
