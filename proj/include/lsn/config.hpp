#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lsn/data.hpp"
#include "lsn/optics.hpp"
#include "lsn/train.hpp"

namespace lsn {

struct SweepSettings {
  std::vector<Regime> regimes = all_regimes();
  std::size_t n_seeds = 5;
  std::uint64_t base_seed = 0;
  std::size_t workers = 1;
};

struct PathSettings {
  std::filesystem::path dataset = "out/dataset";
  std::filesystem::path output = "out/sweep";
};

// Everything an experiment needs.  Sections in the TOML file:
// [microscope] (+ [[microscope.led_rings]]), [data], [train], [sweep], [paths].
struct RunConfig {
  MicroscopeConfig microscope;
  SyntheticSpec data;  // data.grid_n mirrors microscope.grid_n
  SplitRatios splits;
  std::uint64_t split_seed = 0;
  Hyperparams hyper;
  SweepSettings sweep;
  PathSettings paths;

  // Canonical form of every field that affects results (paths and worker
  // count excluded).  Keys are sorted, so the dump is stable.
  nlohmann::json canonical() const;
  // crc32 of the canonical dump plus the tool version, as 8 hex digits.
  std::string hash() const;
  // Hash of the settings baked into a generated dataset (grid and shape
  // generation; splits are assigned at load time and excluded).
  std::string data_hash() const;

  // Throws ConfigError on inconsistent settings.
  void validate() const;
};

// Unknown keys, wrong types and invalid values raise ConfigError naming the key.
RunConfig parse_config(const std::string& toml_text, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

std::string to_string(CaptureMode mode);
CaptureMode parse_capture_mode(const std::string& name);

}  // namespace lsn
