#pragma once

#include <map>
#include <string>
#include <vector>

#include "ssml/harness.hpp"

namespace ssml {

// "section.key" -> value, from a key = value file with [section] headers and
// '#' comments.
using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config_file(const std::string& path);
ConfigMap parse_config_text(const std::string& text);

// Applies recognized keys onto the experiment configuration; unknown keys
// throw so typos surface instead of silently using defaults.
void apply_config(ExperimentConfig& cfg, const ConfigMap& map);

std::vector<std::string> split_list(const std::string& s, char delim = ',');

}  // namespace ssml
