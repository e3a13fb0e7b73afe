// SPDX-License-Identifier: Apache-2.0
#include <kestrel/errors.hpp>
#include <kestrel/knowledge_base.hpp>
#include <kestrel/orchestrator.hpp>
#include <kestrel/warmup.hpp>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace kestrel
{

void to_json(json& j, WarmupSummary const& v)
{
    json sets = json::array();
    for (auto const& s: v.pass_fetch_sets)
        sets.push_back(s);
    j = json { { "passes", v.passes },
               { "pass_fetch_sets", std::move(sets) },
               { "store_size_before", v.store_size_before },
               { "store_size_after", v.store_size_after },
               { "simulations", v.simulations },
               { "failed_simulations", v.failed_simulations },
               { "kb_retrieve_registered", v.kb_retrieve_registered } };
}

void register_kb_retrieve(ToolRouter& router, std::shared_ptr<KnowledgeBase const> kb, int top_k)
{
    if (router.registry().contains(kb_retrieve_tool_name))
        throw ConfigError("kb_retrieve is already registered");
    router.registry().add(kb_retrieve_description(), std::make_shared<KbRetrieveTool>(std::move(kb), top_k));
}

WarmupSummary warm_up(std::vector<Task> const& tasks, int passes, Orchestrator& orchestrator)
{
    if (passes < 1)
        throw PreconditionError("warm-up needs at least one pass");
    auto const& services = orchestrator.services();
    if (!services.kb)
        throw ConfigError("warm-up needs a knowledge base");
    if (services.router->registry().contains(kb_retrieve_tool_name))
        throw PreconditionError("kb_retrieve must not be registered before warm-up");
    validate_batch(tasks);

    WarmupSummary summary;
    summary.passes = passes;
    summary.store_size_before = services.kb->size();
    for (int pass = 1; pass <= passes; ++pass)
    {
        std::set<std::string> fetched;
        for (auto const& task: tasks)
        {
            ++summary.simulations;
            try
            {
                auto report = orchestrator.simulate(task);
                fetched.insert(report.fetched_record_ids.begin(), report.fetched_record_ids.end());
            }
            catch (Error const& e)
            {
                ++summary.failed_simulations;
                spdlog::warn("warm-up pass {} task {} failed: {}", pass, task.id, e.what());
            }
        }
        summary.pass_fetch_sets.push_back(std::move(fetched));
    }
    summary.store_size_after = services.kb->size();

    if (orchestrator.config().effective().ablation.in_house_tool)
    {
        register_kb_retrieve(*services.router, services.kb, orchestrator.config().retrieval_top_k);
        summary.kb_retrieve_registered = true;
    }
    return summary;
}

} // namespace kestrel
