// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string_view>

/// System prompts for every model role. The first line of each prompt is a fixed header that
/// identifies the role; deterministic providers and replay predicates key off it.
namespace kestrel::prompts
{

inline constexpr std::string_view agent_header = "You are a research agent that solves knowledge-discovery tasks.";
inline constexpr std::string_view router_header = "You are a tool router.";
inline constexpr std::string_view distiller_header = "You condense raw tool output into task-relevant notes.";
inline constexpr std::string_view self_reflection_header =
    "You review a finished attempt at a task and judge whether its answer can be trusted.";
inline constexpr std::string_view verified_reflection_header =
    "You compare a finished attempt with the reference answer and distill reusable lessons.";
inline constexpr std::string_view judge_header = "You decide whether two answers to a question are equivalent.";

inline constexpr std::string_view agent_protocol = R"(Think step by step inside <think>...</think>.
When you reach the limit of what you know, write a natural-language help request inside <help>...</help> describing exactly what information you need, then stop. The result will come back inside <knowledge>...</knowledge>.
When you are confident, give the final answer inside <answer>...</answer>.)";

inline constexpr std::string_view agent_tool_protocol = R"(Think step by step inside <think>...</think>.
You can call the tools listed below directly with <tool name="TOOL_NAME">argument</tool>, then stop. The tool output will come back inside <knowledge>...</knowledge>.
When you are confident, give the final answer inside <answer>...</answer>.)";

inline constexpr std::string_view experience_heading = "Previous Task Experience:";
inline constexpr std::string_view self_reflection_heading = "Reflection on Earlier Attempts:";
inline constexpr std::string_view task_heading = "Task:";

inline constexpr std::string_view router_instructions = R"(Map the help request to one or more calls of the tools below. Reply with one line per call in the form
CALL <tool name>: <argument>
Use at most the allowed number of calls. If no tool can serve the request, reply with a single line
DECLINE: <reason>)";

inline constexpr std::string_view distiller_instructions = R"(Summarise only the facts that answer the help request. After each fact cite its sources with their labels, e.g. [R1] or [R1][R3]. Do not cite labels that are not listed.)";

inline constexpr std::string_view self_reflection_instructions = R"(Check every reasoning step and every stated constraint of the task against the evidence in the trajectory. Summarise any uncertainty or flaw. Finish with exactly one line:
VERDICT: CONFIDENT
or
VERDICT: UNCERTAIN)";

inline constexpr std::string_view verified_reflection_instructions = R"(Analyse why the attempt succeeded or failed. Distill general, transferable lessons about planning, tool use and information integration; never restate task-specific facts. Reply with one line per lesson:
LESSON: <short title> :: <lesson body>)";

inline constexpr std::string_view judge_instructions = R"(Reply with a single word: yes if the predicted answer is equivalent to the gold answer, otherwise no.)";

/// Maps a replay role key ("agent", "router", "distiller", "self_reflection",
/// "verified_reflection", "judge") to its header.
std::optional<std::string_view> header_for_role(std::string_view role);

} // namespace kestrel::prompts
