#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "volnet/data_io.hpp"
#include "volnet/network.hpp"
#include "volnet/training.hpp"

namespace volnet::cli {

enum ExitCode : int { kOk = 0, kValidation = 2, kIo = 3, kNumeric = 4 };

/// Invalid configuration document; the message carries "file:line:".
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  NetConfig net;
  std::uint64_t init_seed = 7;
  TrainConfig train;
  std::vector<std::string> train_paths;
  std::vector<std::string> validation_paths;
  std::optional<PreprocessSpec> preprocess;
  std::string output_dir;
};

/// Parses and validates a YAML run configuration. Unknown keys, bad values
/// and missing files are rejected with the offending line. Relative paths
/// resolve against the config file's directory.
RunConfig load_run_config(const std::string& path);

/// Builds the train and validation pairs: read, optionally preprocess,
/// degrade by tricubic 1/scale.
std::pair<std::vector<VolumePair>, std::vector<VolumePair>> load_datasets(const RunConfig& cfg);

/// Full command-line entry point. Never throws; returns an ExitCode.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace volnet::cli
