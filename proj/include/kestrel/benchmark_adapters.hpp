// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <kestrel/core_types.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

/// Readers for public benchmark task files. Parsing only; running them needs live endpoints.
namespace kestrel::adapters
{

/// GAIA validation `metadata.jsonl`. Tasks with an attached file are skipped; `level` keeps one level.
std::vector<Task> read_gaia(std::filesystem::path const& path, std::optional<int> level = std::nullopt);

/// WebWalkerQA export: a JSON array or JSON lines with question, answer, root_url and info.
std::vector<Task> read_webwalkerqa(std::filesystem::path const& path);

/// BrowseComp after decryption: CSV with a header containing problem and answer columns.
std::vector<Task> read_browsecomp(std::filesystem::path const& path);

/// RFC 4180 CSV: quoted fields may hold commas, doubled quotes and newlines.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

/// Dispatches on "gaia", "webwalkerqa" or "browsecomp". Throws ConfigError for other names.
std::vector<Task> read_tasks(std::string_view format, std::filesystem::path const& path);

} // namespace kestrel::adapters
