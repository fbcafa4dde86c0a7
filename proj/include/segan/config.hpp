#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "segan/dataset.hpp"
#include "segan/training.hpp"

namespace segan {

/// Everything a run needs, read from a flat `key = value` file. Lines starting
/// with '#' and blank lines are ignored; unknown keys are rejected.
struct RunConfig {
  TrainConfig train;
  SynthSpec synth;
};

struct ConfigKey {
  std::string key;
  std::string full_scale;  // full-scale value, or "-" where there is none
  std::string doc;
};

/// Every accepted key, in file order.
const std::vector<ConfigKey>& config_keys();

/// Sets one key; throws ConfigError for unknown keys or bad values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

/// Current value of every key, formatted so that applying it back is exact.
std::map<std::string, std::string> to_settings(const RunConfig& cfg);

RunConfig parse_config(std::istream& in, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);
void write_config(std::ostream& out, const RunConfig& cfg);

/// Documented key listing with desk defaults and full-scale values.
void print_defaults(std::ostream& out);

}  // namespace segan
