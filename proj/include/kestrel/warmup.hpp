// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <kestrel/core_types.hpp>

#include <memory>
#include <set>
#include <string>
#include <vector>

namespace kestrel
{

class Orchestrator;
class ToolRouter;
class KnowledgeBase;

struct WarmupSummary
{
    int passes = 0;
    /// Record ids fetched by each pass, across all tasks.
    std::vector<std::set<std::string>> pass_fetch_sets;
    std::size_t store_size_before = 0;
    std::size_t store_size_after = 0;
    int simulations = 0;
    int failed_simulations = 0;
    bool kb_retrieve_registered = false;
};

void to_json(json& j, WarmupSummary const& v);

/// Registers the in-house retrieval tool. This is the stage barrier between gathering and use.
/// Throws ConfigError when it is already registered.
void register_kb_retrieve(ToolRouter& router, std::shared_ptr<KnowledgeBase const> kb, int top_k);

/// Simulates every task `passes` times (answers and reflections discarded, raw records ingested),
/// then registers kb_retrieve when the in-house tool is enabled.
/// Throws PreconditionError when passes < 1 or kb_retrieve is already registered, and ConfigError
/// when the orchestrator has no knowledge base.
WarmupSummary warm_up(std::vector<Task> const& tasks, int passes, Orchestrator& orchestrator);

} // namespace kestrel
