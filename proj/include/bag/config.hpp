#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "bag/dialogue.hpp"

namespace bag {

/// Flat key -> value map. Keys under a [section] header are prefixed
/// "section.".
using ConfigMap = std::map<std::string, std::string>;

/// Parses `key = value` lines with '#' comments, [section] headers and
/// optionally quoted string values. Throws ConfigError naming the line.
ConfigMap parse_config(std::string_view text);
ConfigMap load_config(const std::filesystem::path& path);

/// Applies every key to `base`. Unknown keys and secrets throw ConfigError.
/// Does not validate the result.
RunConfig apply_config(const ConfigMap& values, RunConfig base = {});

/// Recognized keys, for help output and tests.
const std::vector<std::string>& config_keys();

}  // namespace bag
