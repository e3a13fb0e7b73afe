// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <kestrel/core_types.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace kestrel
{

/// Parses the TOML subset used by run configurations into JSON.
///
/// Supported: comments, bare and quoted keys, dotted keys, [table] and [a.b] headers, basic and
/// literal strings (single line), integers with underscores, floats, booleans and single-line
/// arrays of those. Throws ConfigError naming the line for anything else.
json parse_toml(std::string_view text);

/// Reads an environment variable; nullopt when unset or empty.
using EnvLookup = std::function<std::optional<std::string>(std::string const&)>;

EnvLookup process_env();

/// Applies KESTREL_CHAT_URL, KESTREL_CHAT_MODEL, KESTREL_EMBED_URL, KESTREL_EMBED_MODEL,
/// KESTREL_SEARCH_URL and KESTREL_READER_URL to the endpoint settings.
void apply_env_overrides(RunConfig& config, EnvLookup const& env);

/// Overlays the TOML document at `path` onto `base`. Unknown keys and secret-looking keys
/// ("api_key", "token", ...) raise ConfigError; secrets belong in the environment.
RunConfig load_config(std::filesystem::path const& path, RunConfig base = {});

/// Same as load_config for in-memory text.
RunConfig config_from_toml(std::string_view text, RunConfig base = {});

} // namespace kestrel
