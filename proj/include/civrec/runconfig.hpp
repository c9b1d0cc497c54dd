#pragma once

#include <string>

#include "civrec/data.hpp"
#include "civrec/trainer.hpp"

namespace civrec::runconfig {

// Everything a run can configure, with the published defaults baked in.
struct RunConfig {
  trainer::TrainConfig train;
  data::SyntheticSpec synthetic;
  int binarize_threshold = 5;
  int kcore = 10;
};

// Applies one dotted `key=value` assignment. Unknown keys and malformed
// values are hard errors.
void apply_kv(RunConfig& config, const std::string& key, const std::string& value);

// Line-oriented key=value file; '#' starts a comment. Later lines override
// earlier ones, and command-line flags are applied on top by the CLI.
RunConfig parse_config_file(const std::string& path, RunConfig base = {});

}  // namespace civrec::runconfig
