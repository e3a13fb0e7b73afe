// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <kestrel/core_types.hpp>
#include <kestrel/provider.hpp>

#include <optional>
#include <string>
#include <vector>

namespace kestrel
{

/// The agent input X_t, split into its rendered blocks.
struct PromptContext
{
    std::string system_instruction;
    std::string experience_block;
    std::optional<std::string> self_reflection_block;
    std::string query_block;
    std::string history_block;
    /// Lessons rendered into experience_block, for trace audits.
    std::vector<Lesson> rendered_lessons;
    int experience_version = 0;
};

struct ContextOptions
{
    /// false renders no experience (minimal workflow).
    bool include_experience = true;
    /// Non-empty switches the agent to direct tool calls with these descriptions in context.
    std::vector<ToolDescription> direct_tools;
};

/// Builds the agent context for `history.attempt`.
///
/// Lessons render in state order as "title: body"; earlier critiques render oldest first and must be
/// present exactly when attempt > 1. Throws InvariantError when any lesson was derived from
/// `task.id` and PreconditionError when the critiques do not match the attempt number.
PromptContext build_context(Task const& task,
                            ExperienceState const& experience,
                            std::vector<std::string> const& self_reflections,
                            Trajectory const& history,
                            ContextOptions const& options = {});

inline std::vector<std::string> const agent_stop_markers { "</help>", "</answer>", "</tool>" };

ChatRequest to_request(PromptContext const& context);

/// Tag-protocol rendering of events: <think>, <help>, <tool>, <knowledge>, <answer>.
std::string render_events(std::vector<TrajectoryEvent> const& events);

enum class ActionKind
{
    none,
    help,
    answer,
    tool_call,
};

struct Segment
{
    std::string reasoning;
    ActionKind kind = ActionKind::none;
    std::string payload;
    /// Set for tool_call.
    std::string tool_name;
};

/// Splits one model output at its first complete <help>, <answer> or <tool name="..."> block.
/// Text before the block (with <think> tags removed) is the reasoning. Unterminated or empty
/// blocks yield kind none with the whole text kept as reasoning. Total: never throws.
Segment parse_segment(std::string_view output);

} // namespace kestrel
