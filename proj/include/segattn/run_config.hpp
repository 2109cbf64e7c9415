#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "segattn/network.hpp"
#include "segattn/train.hpp"

namespace segattn {

// Everything a training run needs: model shape, optimizer, loop settings
// and augmentation. Stored as `key = value` lines with `#` comments.
struct RunConfig {
  ModelConfig model;
  AdamOptions adam;
  std::size_t epochs = 40;
  std::size_t batch = 8;
  std::uint64_t seed = 0;
  double split_ratio = 0.85;
  bool augment = false;
  AugmentOptions augmentation;

  // Throws ConfigError on the first offending key.
  void validate() const;
};

RunConfig parse_run_config_text(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
// Canonical form: every key in fixed order, reals in shortest round-trip form.
std::string run_config_text(const RunConfig& cfg);

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace segattn
