// SPDX-License-Identifier: Apache-2.0
#include <kestrel/context.hpp>
#include <kestrel/errors.hpp>
#include <kestrel/prompts.hpp>
#include <kestrel/text.hpp>

#include <fmt/format.h>

#include <algorithm>

namespace kestrel
{

PromptContext build_context(Task const& task,
                            ExperienceState const& experience,
                            std::vector<std::string> const& self_reflections,
                            Trajectory const& history,
                            ContextOptions const& options)
{
    if (experience.version < 0)
        throw PreconditionError("experience version must be >= 0");
    if (history.attempt < 1)
        throw PreconditionError("attempt must be >= 1");
    if ((history.attempt > 1) != !self_reflections.empty())
        throw PreconditionError(fmt::format("attempt {} cannot carry {} earlier critiques", history.attempt, self_reflections.size()));

    for (auto const& lesson: experience.lessons)
        if (std::find(lesson.derived_from.begin(), lesson.derived_from.end(), task.id) != lesson.derived_from.end())
            throw InvariantError(fmt::format("leakage guard: lesson '{}' was derived from task '{}'", lesson.title, task.id));

    PromptContext context;
    context.experience_version = experience.version;

    std::string system = fmt::format("{}\n", prompts::agent_header);
    if (options.direct_tools.empty())
        system += prompts::agent_protocol;
    else
    {
        system += prompts::agent_tool_protocol;
        system += "\n\nTools:";
        for (auto const& tool: options.direct_tools)
            system += fmt::format("\n- {} (input: {}): {}", tool.name, to_string(tool.input_kind), tool.description);
    }
    if (!text::trim(task.instruction).empty())
        system += fmt::format("\n\n{}", text::trim(task.instruction));
    context.system_instruction = std::move(system);

    if (options.include_experience && !experience.lessons.empty())
    {
        context.experience_block = std::string(prompts::experience_heading);
        for (auto const& lesson: experience.lessons)
            context.experience_block += fmt::format("\n{}: {}", lesson.title, lesson.body);
        context.rendered_lessons = experience.lessons;
    }

    if (!self_reflections.empty())
    {
        std::string block(prompts::self_reflection_heading);
        for (std::size_t i = 0; i < self_reflections.size(); ++i)
            block += fmt::format("\nAttempt {}: {}", i + 1, text::trim(self_reflections[i]));
        context.self_reflection_block = std::move(block);
    }

    context.query_block = fmt::format("{}\n{}", prompts::task_heading, task.query);
    context.history_block = render_events(history.events);
    return context;
}

ChatRequest to_request(PromptContext const& context)
{
    std::vector<std::string> blocks;
    if (!context.experience_block.empty())
        blocks.push_back(context.experience_block);
    if (context.self_reflection_block)
        blocks.push_back(*context.self_reflection_block);
    blocks.push_back(context.query_block);
    if (!context.history_block.empty())
        blocks.push_back(fmt::format("Progress so far:\n{}", context.history_block));

    ChatRequest request;
    request.messages.push_back({ Role::system, context.system_instruction });
    request.messages.push_back({ Role::user, text::join(blocks, "\n\n") });
    request.stop_markers = agent_stop_markers;
    return request;
}

std::string render_events(std::vector<TrajectoryEvent> const& events)
{
    std::vector<std::string> parts;
    for (auto const& event: events)
    {
        std::visit(
            [&](auto const& e) {
                using T = std::decay_t<decltype(e)>;
                if constexpr (std::is_same_v<T, Reasoning>)
                    parts.push_back(fmt::format("<think>{}</think>", e.text));
                else if constexpr (std::is_same_v<T, HelpRequest>)
                {
                    if (e.direct_tool)
                        parts.push_back(fmt::format("<tool name=\"{}\">{}</tool>", *e.direct_tool, e.text));
                    else
                        parts.push_back(fmt::format("<help>{}</help>", e.text));
                }
                else if constexpr (std::is_same_v<T, Knowledge>)
                {
                    auto body = e.distilled_text;
                    if (!e.note.empty())
                        body += fmt::format("{}(note: {})", body.empty() ? "" : "\n", e.note);
                    parts.push_back(fmt::format("<knowledge>{}</knowledge>", body));
                }
                else
                    parts.push_back(fmt::format("<answer>{}</answer>", e.text));
            },
            event);
    }
    return text::join(parts, "\n");
}

namespace
{
    std::string strip_think(std::string_view input)
    {
        std::string out(input);
        for (std::string_view tag: { "<think>", "</think>" })
            for (auto pos = out.find(tag); pos != std::string::npos; pos = out.find(tag, pos))
                out.erase(pos, tag.size());
        return text::trim(out);
    }

    struct Block
    {
        std::size_t begin = std::string_view::npos;
        std::size_t end = 0;
        ActionKind kind = ActionKind::none;
        std::string payload;
        std::string tool_name;
    };

    /// Earliest complete `<open>...</close>` block starting at or after `from`.
    Block find_simple(std::string_view s, std::string_view open, std::string_view close, ActionKind kind)
    {
        for (auto pos = s.find(open); pos != std::string_view::npos; pos = s.find(open, pos + 1))
        {
            auto const body = pos + open.size();
            auto const closing = s.find(close, body);
            if (closing == std::string_view::npos)
                break;
            return Block { pos, closing + close.size(), kind, std::string(s.substr(body, closing - body)), {} };
        }
        return {};
    }

    Block find_tool(std::string_view s)
    {
        constexpr std::string_view open = "<tool";
        constexpr std::string_view close = "</tool>";
        for (auto pos = s.find(open); pos != std::string_view::npos; pos = s.find(open, pos + 1))
        {
            auto i = pos + open.size();
            auto skip_space = [&] {
                while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\n'))
                    ++i;
            };
            auto expect = [&](std::string_view literal) {
                if (s.substr(i, literal.size()) != literal)
                    return false;
                i += literal.size();
                return true;
            };
            skip_space();
            if (!expect("name"))
                continue;
            skip_space();
            if (!expect("="))
                continue;
            skip_space();
            if (!expect("\""))
                continue;
            auto const name_end = s.find('"', i);
            if (name_end == std::string_view::npos)
                break;
            auto name = std::string(s.substr(i, name_end - i));
            i = name_end + 1;
            skip_space();
            if (!expect(">"))
                continue;
            auto const closing = s.find(close, i);
            if (closing == std::string_view::npos)
                break;
            return Block { pos, closing + close.size(), ActionKind::tool_call, std::string(s.substr(i, closing - i)), std::move(name) };
        }
        return {};
    }
} // namespace

Segment parse_segment(std::string_view output)
{
    Block best;
    for (auto candidate: { find_simple(output, "<help>", "</help>", ActionKind::help),
                           find_simple(output, "<answer>", "</answer>", ActionKind::answer),
                           find_tool(output) })
        if (candidate.begin < best.begin)
            best = std::move(candidate);

    Segment segment;
    auto payload = text::trim(best.payload);
    auto tool_name = text::trim(best.tool_name);
    bool const usable = best.kind != ActionKind::none && !payload.empty()
                        && (best.kind != ActionKind::tool_call || !tool_name.empty());
    if (!usable)
    {
        segment.reasoning = strip_think(output);
        return segment;
    }
    segment.reasoning = strip_think(output.substr(0, best.begin));
    segment.kind = best.kind;
    segment.payload = std::move(payload);
    segment.tool_name = std::move(tool_name);
    return segment;
}

} // namespace kestrel
