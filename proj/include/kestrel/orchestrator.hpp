// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <kestrel/context.hpp>
#include <kestrel/core_types.hpp>
#include <kestrel/knowledge_base.hpp>
#include <kestrel/provider.hpp>
#include <kestrel/reflection.hpp>
#include <kestrel/tool_router.hpp>
#include <kestrel/trace.hpp>
#include <kestrel/warmup.hpp>

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace kestrel
{

enum class SolveStatus
{
    answered,
    budget_exhausted,
    provider_error,
};

std::string_view to_string(SolveStatus status);

struct SolveReport
{
    std::string task_id;
    std::optional<std::string> final_answer;
    int attempts = 0;
    std::vector<Trajectory> trajectories;
    /// Help requests of the final attempt (the budget applies per attempt).
    int help_requests_used = 0;
    int total_help_requests = 0;
    SolveStatus status = SolveStatus::budget_exhausted;
    /// Why the run stopped when not answered.
    std::string reason;
    std::vector<SelfReflection> self_reflections;
    /// Every record id fetched while solving, in first-seen order.
    std::vector<std::string> fetched_record_ids;
    /// Calls dispatched per tool name.
    std::map<std::string, int> tool_calls;
    int direct_tool_calls = 0;
};

void to_json(json& j, SolveReport const& v);

/// Collaborators of the central agent.
struct AgentServices
{
    std::shared_ptr<ChatProvider> agent;
    /// Required when self or verified reflection is enabled.
    std::shared_ptr<Reflector> reflector;
    std::shared_ptr<ToolRouter> router;
    /// Receives every raw record; may be null.
    std::shared_ptr<KnowledgeBase> kb;
    GradeMethod grade_method = GradeMethod::exact_match;
    /// Needed for llm_equivalence grading.
    std::shared_ptr<ChatProvider> judge;
    Clock clock = system_clock();
};

struct TaskOutcome
{
    SolveReport report;
    std::optional<Verdict> verdict;
    /// Experience version the task was solved with.
    int experience_version = 0;
};

struct BatchResult
{
    std::vector<TaskOutcome> outcomes;
    /// One snapshot per experience version, starting with the initial state.
    std::vector<ExperienceState> experience_history;
    std::optional<WarmupSummary> warmup;
    ExperienceState final_experience;
};

/// The central agent loop: reason, ask for help, absorb knowledge, answer, reflect, retry.
class Orchestrator
{
  public:
    /// Throws ConfigError for invalid configuration or missing collaborators.
    Orchestrator(RunConfig config, AgentServices services);

    /// Solves one task with experience E_{t-1}. Attempts stop at a CONFIDENT self-reflection,
    /// when retries run out, or when an attempt ends without an answer.
    SolveReport solve_task(Task const& task, ExperienceState const& experience, TraceLog* trace = nullptr);

    /// Warm-up simulation: one attempt with empty experience (unless configured otherwise), no
    /// reflection, records ingested.
    SolveReport simulate(Task const& task, TraceLog* trace = nullptr);

    /// Warm-up (when configured), then tasks in order with unilateral experience updates.
    BatchResult run_batch(std::vector<Task> const& tasks, ExperienceState initial = {}, TraceFactory* traces = nullptr);

    [[nodiscard]] RunConfig const& config() const { return _config; }
    [[nodiscard]] AgentServices const& services() const { return _services; }

  private:
    struct AttemptOptions
    {
        int max_help = 0;
        bool reflect = false;
        bool use_experience = true;
        int max_attempts = 1;
    };

    SolveReport run(Task const& task, ExperienceState const& experience, AttemptOptions const& options, TraceLog* trace);
    [[nodiscard]] ContextOptions context_options(bool use_experience) const;

    RunConfig _config;
    AgentServices _services;
};

} // namespace kestrel
