// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <kestrel/core_types.hpp>
#include <kestrel/errors.hpp>
#include <kestrel/tool_backends.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace kestrel
{

/// Parameters cannot produce a world (too many chains for the page or key budget).
class GenerationError: public ConfigError
{
  public:
    using ConfigError::ConfigError;
};

struct WorldParams
{
    std::uint64_t seed = 7;
    int n_tasks = 20;
    int depth_min = 2;
    int depth_max = 4;
    int n_pages = 100;
};

/// Chained-lookup benchmark world.
///
/// Each task starts at a registry key and follows `depth` successor links. Every key has one page
/// stating its verified successor and, earlier on the page, a rumored successor that leads nowhere.
/// The remaining pages are filler, some longer than one knowledge-base chunk.
struct SyntheticWorld
{
    WorldParams params;
    std::vector<FixturePage> pages;
    std::vector<Task> tasks;
    /// key -> verified successor (keys and terminal answers).
    std::map<std::string, std::string> successor;
    /// key -> rumored successor.
    std::map<std::string, std::string> rumor;
};

/// Deterministic for a given seed on every platform. Throws PreconditionError for n_tasks < 1,
/// n_pages < 1 or a depth range outside [1, 6], and GenerationError when the parameters are infeasible.
SyntheticWorld generate_world(WorldParams const& params);

/// Follows `depth` links of the fact graph from `start`; nullopt when the chain breaks.
std::optional<std::string> resolve_chain(std::map<std::string, std::string> const& successor, std::string const& start, int depth);

/// Writes `corpus.json` and `tasks.json` into `directory`.
void write_world(SyntheticWorld const& world, std::filesystem::path const& directory);

std::vector<Task> load_tasks(std::filesystem::path const& path);
void save_tasks(std::vector<Task> const& tasks, std::filesystem::path const& path);

} // namespace kestrel
