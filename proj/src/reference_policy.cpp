// SPDX-License-Identifier: Apache-2.0
#include <kestrel/errors.hpp>
#include <kestrel/prompts.hpp>
#include <kestrel/reference_policy.hpp>
#include <kestrel/text.hpp>

#include <fmt/format.h>

#include <optional>
#include <regex>
#include <vector>

namespace kestrel
{

namespace
{
    struct Event
    {
        enum class Kind
        {
            think,
            help,
            tool,
            knowledge,
        } kind;
        std::string text;
        std::string tool;
    };

    /// Reads back the tag rendering of the current attempt.
    std::vector<Event> parse_history(std::string_view history)
    {
        std::vector<Event> events;
        std::size_t pos = 0;
        while (pos < history.size())
        {
            auto const open = history.find('<', pos);
            if (open == std::string_view::npos)
                break;
            auto const rest = history.substr(open);
            Event event { Event::Kind::think, {}, {} };
            std::string_view close;
            std::size_t body = 0;
            if (rest.starts_with("<think>"))
                event.kind = Event::Kind::think, close = "</think>", body = open + 7;
            else if (rest.starts_with("<help>"))
                event.kind = Event::Kind::help, close = "</help>", body = open + 6;
            else if (rest.starts_with("<knowledge>"))
                event.kind = Event::Kind::knowledge, close = "</knowledge>", body = open + 11;
            else if (rest.starts_with("<tool name=\""))
            {
                auto const name_begin = open + 12;
                auto const name_end = history.find("\">", name_begin);
                if (name_end == std::string_view::npos)
                    break;
                event.kind = Event::Kind::tool;
                event.tool = std::string(history.substr(name_begin, name_end - name_begin));
                close = "</tool>";
                body = name_end + 2;
            }
            else
            {
                pos = open + 1;
                continue;
            }
            auto const end = history.find(close, body);
            if (end == std::string_view::npos)
                break;
            event.text = std::string(history.substr(body, end - body));
            events.push_back(std::move(event));
            pos = end + close.size();
        }
        return events;
    }

    std::string after(std::string const& haystack, std::string_view marker)
    {
        auto const pos = haystack.find(marker);
        return pos == std::string::npos ? std::string() : haystack.substr(pos + marker.size());
    }

    std::string before(std::string const& haystack, std::string_view marker)
    {
        auto const pos = haystack.find(marker);
        return pos == std::string::npos ? haystack : haystack.substr(0, pos);
    }

    /// Verified successor of `key`, read only from quoted source pages ("--- <source> ---" blocks).
    std::optional<std::string> verified_successor(std::string const& knowledge, std::string const& key)
    {
        static std::regex const verified(R"(The verified successor of this entry is ([a-z0-9]+)\.)");
        auto const entry = fmt::format("Registry entry {}.", key);
        std::size_t pos = 0;
        while ((pos = knowledge.find("--- ", pos)) != std::string::npos)
        {
            auto const next = knowledge.find("\n--- ", pos + 4);
            auto const block = knowledge.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
            if (auto const at = block.find(entry); at != std::string::npos)
            {
                std::smatch m;
                auto const tail = block.substr(at);
                if (std::regex_search(tail, m, verified))
                    return m[1].str();
            }
            if (next == std::string::npos)
                break;
            pos = next + 1;
        }
        return std::nullopt;
    }

    std::optional<std::string> claimed_successor(std::string const& knowledge, std::string const& key)
    {
        std::regex const claim(fmt::format(R"(\b{} points to ([a-z0-9]+))", key));
        std::smatch m;
        if (std::regex_search(knowledge, m, claim))
            return m[1].str();
        return std::nullopt;
    }

    bool is_memory_lookup(Event const& event)
    {
        if (event.kind == Event::Kind::tool)
            return event.tool == "kb_retrieve";
        return text::contains_icase(event.text, "previously retrieved");
    }
} // namespace

std::string ReferencePolicy::complete(ChatRequest const& request)
{
    request.validate();
    ++_calls;
    auto const& system = request.system_prompt();
    std::string reply;
    if (system.starts_with(prompts::agent_header))
        reply = agent_turn(request);
    else if (system.starts_with(prompts::self_reflection_header))
        reply = self_reflection(request);
    else if (system.starts_with(prompts::verified_reflection_header))
        reply = verified_reflection(request);
    else
        throw ProviderError("reference policy only serves the agent and reflection roles", false);
    return apply_stop_markers(std::move(reply), request.stop_markers);
}

std::string ReferencePolicy::agent_turn(ChatRequest const& request) const
{
    auto const& system = request.system_prompt();
    std::string user;
    for (auto const& m: request.messages)
        if (m.role == Role::user)
            user += m.content;

    static std::regex const task_pattern(R"(registry entry '([a-z0-9]+)', follow the successor links for (\d+) hops)");
    std::smatch m;
    if (!std::regex_search(user, m, task_pattern))
        return "<think>This task does not describe a registry chain.</think><answer>unknown</answer>";
    auto const start = m[1].str();
    auto const depth = std::stoi(m[2].str());

    bool const tool_mode = system.find("<tool name=") != std::string::npos;
    bool const memory_available = !tool_mode || system.find("- kb_retrieve (") != std::string::npos;
    bool const careful = text::contains_icase(before(user, std::string(prompts::task_heading) + "\n"), "verified");

    auto const events = parse_history(after(user, "Progress so far:\n"));

    static std::regex const hop_pattern(R"(Hop (\d+): ([a-z0-9]+) -> ([a-z0-9]+))");
    auto current = start;
    int hops = 0;
    std::size_t since = 0;
    for (std::size_t i = 0; i < events.size(); ++i)
    {
        if (events[i].kind != Event::Kind::think)
            continue;
        for (auto it = std::sregex_iterator(events[i].text.begin(), events[i].text.end(), hop_pattern); it != std::sregex_iterator(); ++it)
        {
            current = (*it)[3].str();
            ++hops;
            since = i + 1;
        }
    }

    auto ask_web = [&](std::string const& key) {
        return tool_mode ? fmt::format("<tool name=\"web_search\">{}</tool>", key)
                         : fmt::format("<help>I need to find what registry entry '{}' points to.</help>", key);
    };
    auto ask_memory = [&](std::string const& key) {
        return tool_mode ? fmt::format("<tool name=\"kb_retrieve\">{}</tool>", key)
                         : fmt::format("<help>I need the full original text of previously retrieved sources about '{}'.</help>", key);
    };

    if (events.empty())
        return fmt::format("<think>Start at '{}' and resolve {} successor links one at a time.</think>{}", start, depth, ask_web(start));
    if (hops >= depth)
        return fmt::format("<answer>{}</answer>", current);

    int web_lookups = 0;
    int memory_lookups = 0;
    std::string knowledge;
    for (std::size_t i = since; i < events.size(); ++i)
    {
        auto const& e = events[i];
        if (e.kind == Event::Kind::knowledge)
            knowledge += e.text + "\n";
        else if (e.kind == Event::Kind::help || e.kind == Event::Kind::tool)
            ++(is_memory_lookup(e) ? memory_lookups : web_lookups);
    }

    auto const verified = verified_successor(knowledge, current);
    auto const claimed = claimed_successor(knowledge, current);

    std::optional<std::string> link;
    bool link_verified = false;
    if (careful)
    {
        if (verified)
            link = verified, link_verified = true;
        else if (web_lookups == 0)
            return ask_web(current);
        else if (memory_lookups == 0 && memory_available)
            return fmt::format("<think>The summary about '{}' has no verified statement; checking the stored sources.</think>{}",
                               current,
                               ask_memory(current));
        else if (claimed)
            link = claimed;
    }
    else
    {
        if (claimed)
            link = claimed;
        else if (verified)
            link = verified, link_verified = true;
        else if (web_lookups + memory_lookups == 0)
            return ask_web(current);
    }

    if (!link)
        return fmt::format("<think>No statement about '{}' was found; answering with the last value reached.</think><answer>{}</answer>",
                           current,
                           current);

    auto const hop = hops + 1;
    auto reply = fmt::format("<think>Hop {}: {} -> {} ({}).</think>", hop, current, *link, link_verified ? "verified" : "unverified claim");
    if (hop == depth)
        return reply + fmt::format("<answer>{}</answer>", *link);
    return reply + ask_web(*link);
}

std::string ReferencePolicy::self_reflection(ChatRequest const& request)
{
    auto const attempt = request.flattened();
    if (attempt.find("(unverified") != std::string::npos)
        return "The answer rests on at least one unverified claim. Each successor link should be confirmed against the "
               "verified statement on the entry's own page before it is used.\nVERDICT: UNCERTAIN";
    if (attempt.find("No statement about") != std::string::npos)
        return "The chain was abandoned before every hop was resolved, so the answer is only the last value reached.\n"
               "VERDICT: UNCERTAIN";
    return "Every link was confirmed by a verified statement and the hop count matches the task.\nVERDICT: CONFIDENT";
}

std::string ReferencePolicy::verified_reflection(ChatRequest const& request)
{
    auto const content = request.flattened();
    static std::regex const answers(R"(Final answer: (.*)\nReference answer: (.*))");
    std::smatch m;
    bool correct = false;
    if (std::regex_search(content, m, answers))
        correct = text::to_lower(text::trim(m[1].str())) == text::to_lower(text::trim(m[2].str()));

    std::string lessons =
        "LESSON: Source Verification :: Treat secondhand statements as leads, not evidence; confirm each link of a "
        "lookup chain against the verified statement in its original source before relying on it.";
    if (!correct)
        lessons += "\nLESSON: Revisit Raw Sources :: When a summary omits the deciding sentence, retrieve the full stored "
                   "page instead of settling for the summary.";
    return lessons;
}

} // namespace kestrel
