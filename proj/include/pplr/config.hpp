#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pplr/ingest.hpp"
#include "pplr/pipeline.hpp"

namespace pplr {

struct PathsConfig {
  std::string bank_in;
  std::string bank_out;
  std::string report_out;
  std::string model_in;
  std::string model_out;
  std::string query;
  std::string gallery;
};

/// Everything a CLI run needs. `seed` drives both the generator and the trainer.
struct RunConfig {
  std::uint64_t seed = 0;
  SynthConfig synth;
  PipelineConfig pipeline;
  PathsConfig paths;
};

using Override = std::pair<std::string, std::string>;

/// Fully populated default document.
nlohmann::json default_config_json();

/// Applies `document` then `overrides` (later wins) on top of the defaults and
/// validates. Override keys are dotted paths or unambiguous leaf names; values
/// are parsed as JSON and fall back to plain strings. Errors are ConfigError
/// carrying the offending key path.
RunConfig parse_config(std::string_view document, const std::vector<Override>& overrides = {});

nlohmann::json to_json(const RunConfig& cfg);

}  // namespace pplr
