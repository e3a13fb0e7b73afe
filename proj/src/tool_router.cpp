// SPDX-License-Identifier: Apache-2.0
#include <kestrel/errors.hpp>
#include <kestrel/knowledge_base.hpp>
#include <kestrel/prompts.hpp>
#include <kestrel/text.hpp>
#include <kestrel/tool_router.hpp>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <future>
#include <mutex>
#include <regex>
#include <sstream>
#include <set>

namespace kestrel
{

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

void ToolRegistry::add(ToolDescription description, std::shared_ptr<ToolBackend> backend)
{
    if (description.name.empty())
        throw ConfigError("tool name must not be empty");
    if (text::trim(description.description).empty())
        throw ConfigError(fmt::format("tool '{}' needs a description", description.name));
    if (!backend)
        throw ConfigError(fmt::format("tool '{}' has no backend", description.name));
    std::unique_lock lock(_mutex);
    if (_bindings.contains(description.name))
        throw ConfigError(fmt::format("tool '{}' is already registered", description.name));
    _bindings.emplace(description.name, std::move(backend));
    _descriptions.push_back(std::move(description));
}

bool ToolRegistry::contains(std::string const& name) const
{
    std::shared_lock lock(_mutex);
    return _bindings.contains(name);
}

std::vector<ToolDescription> ToolRegistry::descriptions() const
{
    std::shared_lock lock(_mutex);
    return _descriptions;
}

std::shared_ptr<ToolBackend> ToolRegistry::backend(std::string const& name) const
{
    std::shared_lock lock(_mutex);
    auto it = _bindings.find(name);
    if (it == _bindings.end())
        throw RoutingError(fmt::format("tool '{}' is not registered", name));
    return it->second;
}

std::size_t ToolRegistry::size() const
{
    std::shared_lock lock(_mutex);
    return _descriptions.size();
}

namespace
{
    void check_route_inputs(std::string const& help_request, ToolRegistry const& registry)
    {
        if (registry.empty())
            throw ConfigError("tool registry is empty");
        if (text::trim(help_request).empty())
            throw PreconditionError("help request must not be empty");
    }

    std::string render_registry(ToolRegistry const& registry)
    {
        std::string out;
        for (auto const& d: registry.descriptions())
            out += fmt::format("- {} (input: {}): {}\n", d.name, to_string(d.input_kind), d.description);
        return out;
    }

    void append_note(std::string& note, std::string const& addition)
    {
        if (addition.empty())
            return;
        if (!note.empty())
            note += "; ";
        note += addition;
    }
} // namespace

// ---------------------------------------------------------------------------
// Routers
// ---------------------------------------------------------------------------

ModelRouter::ModelRouter(std::shared_ptr<ChatProvider> provider, int max_calls):
    _provider(std::move(provider)), _max_calls(max_calls)
{
    if (!_provider)
        throw PreconditionError("model router needs a chat provider");
    if (max_calls < 1)
        throw PreconditionError("max calls per help request must be >= 1");
}

std::vector<ToolCall> ModelRouter::route(std::string const& help_request, ToolRegistry const& registry, int help_index)
{
    check_route_inputs(help_request, registry);

    ChatRequest request;
    request.messages.push_back({ Role::system,
                                 fmt::format("{}\n{}\n\nAvailable tools:\n{}\nAt most {} calls.",
                                             prompts::router_header,
                                             prompts::router_instructions,
                                             render_registry(registry),
                                             _max_calls) });
    request.messages.push_back({ Role::user, help_request });
    request.max_output = 512;

    auto const reply = _provider->complete(request);

    static std::regex const call_line(R"(^\s*CALL\s+([A-Za-z0-9_\-]+)\s*:\s*(.+?)\s*$)");
    static std::regex const decline_line(R"(^\s*DECLINE\s*:\s*(.*?)\s*$)");
    std::vector<ToolCall> calls;
    std::istringstream lines(reply);
    std::string line;
    std::smatch m;
    while (std::getline(lines, line))
    {
        if (std::regex_match(line, m, decline_line))
            throw RoutingError(fmt::format("router declined the request: {}", m[1].str()));
        if (!std::regex_match(line, m, call_line))
            continue;
        auto tool = m[1].str();
        if (!registry.contains(tool))
            throw RoutingError(fmt::format("router selected unregistered tool '{}'", tool));
        if (static_cast<int>(calls.size()) == _max_calls)
        {
            spdlog::warn("router proposed more than {} calls; extra calls dropped", _max_calls);
            break;
        }
        calls.push_back(ToolCall { std::move(tool), m[2].str(), help_index });
    }
    if (calls.empty())
        throw RoutingError("router produced no tool calls");
    return calls;
}

KeywordRouter::KeywordRouter(int max_calls): _max_calls(max_calls)
{
    if (max_calls < 1)
        throw PreconditionError("max calls per help request must be >= 1");
}

namespace
{
    std::vector<std::string> quoted_phrases(std::string const& input)
    {
        static std::regex const quoted(R"re('([^'\n]+)'|"([^"\n]+)")re");
        std::vector<std::string> out;
        for (auto it = std::sregex_iterator(input.begin(), input.end(), quoted); it != std::sregex_iterator(); ++it)
        {
            auto phrase = text::trim((*it)[1].matched ? (*it)[1].str() : (*it)[2].str());
            if (!phrase.empty() && std::find(out.begin(), out.end(), phrase) == out.end())
                out.push_back(std::move(phrase));
        }
        return out;
    }

    bool mentions_any(std::string const& haystack, std::initializer_list<std::string_view> needles)
    {
        return std::any_of(needles.begin(), needles.end(), [&](auto n) { return text::contains_icase(haystack, n); });
    }
} // namespace

std::string arithmetic_snippet(std::string const& help_request)
{
    static std::regex const number(R"(-?\d{1,3}(?:,\d{3})+(?:\.\d+)?|-?\d+(?:\.\d+)?)");
    std::vector<std::string> operands;
    for (auto it = std::sregex_iterator(help_request.begin(), help_request.end(), number); it != std::sregex_iterator(); ++it)
    {
        auto value = it->str();
        value.erase(std::remove(value.begin(), value.end(), ','), value.end());
        operands.push_back(std::move(value));
    }
    if (operands.empty())
        return {};
    return fmt::format("print({})", text::join(operands, " * "));
}

std::vector<ToolCall> KeywordRouter::route(std::string const& help_request, ToolRegistry const& registry, int help_index)
{
    check_route_inputs(help_request, registry);
    auto const phrases = quoted_phrases(help_request);

    auto build = [&](std::string const& tool, std::vector<std::string> const& arguments) {
        if (!registry.contains(tool))
            throw RoutingError(fmt::format("no registered tool can serve this request (needs '{}')", tool));
        std::vector<ToolCall> calls;
        for (auto const& argument: arguments)
        {
            if (static_cast<int>(calls.size()) == _max_calls)
                break;
            calls.push_back(ToolCall { tool, argument, help_index });
        }
        return calls;
    };

    if (mentions_any(help_request, { "previously retrieved", "full original", "stored", "knowledge base" })
        && registry.contains(kb_retrieve_tool_name))
        return build(kb_retrieve_tool_name, { phrases.empty() ? help_request : text::join(phrases, " ") });

    if (mentions_any(help_request, { "calculate", "convert", "compute" }))
    {
        auto snippet = arithmetic_snippet(help_request);
        if (!snippet.empty())
            return build("code_exec", { std::move(snippet) });
    }

    return build("web_search", phrases.empty() ? std::vector<std::string> { help_request } : phrases);
}

// ---------------------------------------------------------------------------
// Distillers
// ---------------------------------------------------------------------------

namespace
{
    std::set<std::string> const& stopwords()
    {
        static std::set<std::string> const words { "a",     "an",   "and",  "are",  "as",   "at",    "be",   "by",
                                                   "for",   "from", "how",  "i",    "in",   "is",    "it",   "need",
                                                   "of",    "on",   "or",   "that", "the",  "this",  "to",   "was",
                                                   "what",  "when", "where", "which", "who", "with", "find", "about" };
        return words;
    }

    std::set<std::string> content_terms(std::vector<ToolCall> const& calls)
    {
        std::set<std::string> out;
        for (auto const& call: calls)
            for (auto& term: text::terms(call.argument))
                if (!stopwords().contains(term))
                    out.insert(std::move(term));
        return out;
    }

    std::string label(std::size_t index) { return fmt::format("[R{}]", index + 1); }

    struct CitedLine
    {
        std::string body;
        std::string label;
    };

    /// Keeps whole cited lines while they fit in `budget` tokens. A first line that does not fit is
    /// shortened so that its label survives.
    std::string fit_lines(std::vector<CitedLine> const& lines, int budget)
    {
        std::string out;
        std::size_t used = 0;
        auto const limit = static_cast<std::size_t>(budget);
        for (auto const& line: lines)
        {
            auto const full = fmt::format("{} {}", line.body, line.label);
            auto const cost = text::count_tokens(full);
            if (used + cost > limit)
            {
                if (used == 0)
                {
                    auto const body = text::truncate_tokens(line.body, limit - 1);
                    out = body.empty() ? line.label : fmt::format("{} {}", body, line.label);
                }
                break;
            }
            if (!out.empty())
                out.push_back('\n');
            out += full;
            used += cost;
        }
        return out;
    }

    std::vector<std::string> cited_ids(std::string const& text, std::vector<RawKnowledgeRecord> const& records)
    {
        std::vector<std::string> ids;
        for (std::size_t i = 0; i < records.size(); ++i)
            if (text.find(label(i)) != std::string::npos
                && std::find(ids.begin(), ids.end(), records[i].record_id) == ids.end())
                ids.push_back(records[i].record_id);
        return ids;
    }
} // namespace

Knowledge ExtractiveDistiller::distill(std::string const&,
                                       std::vector<ToolCall> const& calls,
                                       std::vector<RawKnowledgeRecord> const& records,
                                       int token_budget)
{
    if (token_budget < 1)
        throw PreconditionError("distillation token budget must be >= 1");
    auto const wanted = content_terms(calls);

    std::vector<CitedLine> lines;
    std::set<std::string> seen;
    for (std::size_t i = 0; i < records.size(); ++i)
    {
        auto const& record = records[i];
        if (record.source.kind == SourceKind::code_execution)
        {
            lines.push_back({ text::trim(record.content), label(i) });
            continue;
        }
        for (auto const& sentence: text::sentences(record.content))
        {
            auto const terms = text::terms(sentence);
            bool const relevant = std::any_of(terms.begin(), terms.end(), [&](auto const& t) { return wanted.contains(t); });
            if (relevant && seen.insert(sentence).second)
                lines.push_back({ sentence, label(i) });
        }
    }

    Knowledge knowledge;
    knowledge.distilled_text = fit_lines(lines, token_budget);
    knowledge.provenance = cited_ids(knowledge.distilled_text, records);
    if (knowledge.distilled_text.empty())
        knowledge.note = records.empty() ? "no results" : "no relevant content in the fetched sources";
    return knowledge;
}

ModelDistiller::ModelDistiller(std::shared_ptr<ChatProvider> provider): _provider(std::move(provider))
{
    if (!_provider)
        throw PreconditionError("model distiller needs a chat provider");
}

Knowledge ModelDistiller::distill(std::string const& help_request,
                                  std::vector<ToolCall> const& calls,
                                  std::vector<RawKnowledgeRecord> const& records,
                                  int token_budget)
{
    if (token_budget < 1)
        throw PreconditionError("distillation token budget must be >= 1");
    if (records.empty())
        return Knowledge { "", {}, "no results" };

    std::string sources;
    for (std::size_t i = 0; i < records.size(); ++i)
        sources += fmt::format("{} {}\n{}\n\n", label(i), records[i].source.locator, records[i].content);
    std::vector<std::string> queries;
    for (auto const& call: calls)
        queries.push_back(fmt::format("{}: {}", call.tool, call.argument));

    ChatRequest request;
    request.messages.push_back({ Role::system, fmt::format("{}\n{}", prompts::distiller_header, prompts::distiller_instructions) });
    request.messages.push_back({ Role::user,
                                 fmt::format("Help request: {}\nTool calls:\n{}\n\nSources:\n{}",
                                             help_request,
                                             text::join(queries, "\n"),
                                             sources) });
    request.max_output = token_budget;

    auto summary = text::trim(_provider->complete(request));
    // Strip labels that were never offered.
    static std::regex const any_label(R"(\[R(\d+)\])");
    std::string cleaned;
    std::size_t last = 0;
    for (auto it = std::sregex_iterator(summary.begin(), summary.end(), any_label); it != std::sregex_iterator(); ++it)
    {
        auto const n = std::stoul((*it)[1].str());
        cleaned.append(summary, last, static_cast<std::size_t>(it->position()) - last);
        if (n >= 1 && n <= records.size())
            cleaned += it->str();
        last = static_cast<std::size_t>(it->position() + it->length());
    }
    cleaned.append(summary, last);

    Knowledge knowledge;
    knowledge.distilled_text = text::truncate_tokens(cleaned, static_cast<std::size_t>(token_budget));
    knowledge.provenance = cited_ids(knowledge.distilled_text, records);
    if (knowledge.provenance.empty() && !knowledge.distilled_text.empty())
        for (auto const& r: records)
            knowledge.provenance.push_back(r.record_id);
    return knowledge;
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

namespace
{
    struct CallResult
    {
        BackendResult result;
        std::string error;
    };

    std::vector<CallResult> dispatch(std::vector<ToolCall> const& calls, ToolRegistry const& registry, CallContext const& context)
    {
        std::vector<std::shared_ptr<ToolBackend>> backends;
        for (auto const& call: calls)
            backends.push_back(registry.backend(call.tool));

        auto run = [&](std::size_t i) {
            CallResult out;
            try
            {
                out.result = backends[i]->invoke(calls[i].argument, context);
            }
            catch (Error const& e)
            {
                out.error = fmt::format("{}(\"{}\") failed: {}", calls[i].tool, calls[i].argument, e.what());
            }
            return out;
        };

        std::vector<CallResult> results(calls.size());
        if (calls.size() == 1)
        {
            results[0] = run(0);
            return results;
        }
        std::vector<std::future<CallResult>> pending;
        for (std::size_t i = 0; i < calls.size(); ++i)
            pending.push_back(std::async(std::launch::async, run, i));
        for (std::size_t i = 0; i < calls.size(); ++i)
            results[i] = pending[i].get();
        return results;
    }

    void add_unique(std::vector<RawKnowledgeRecord>& into, std::set<std::string>& ids, RawKnowledgeRecord const& record)
    {
        if (ids.insert(record.record_id).second)
            into.push_back(record);
    }
} // namespace

RoutingOutcome execute(std::vector<ToolCall> const& calls,
                       ToolRegistry const& registry,
                       Distiller& distiller,
                       std::string const& help_request,
                       int token_budget,
                       CallContext const& context)
{
    if (calls.empty())
        throw PreconditionError("execute needs at least one tool call");

    RoutingOutcome outcome;
    outcome.calls = calls;
    auto results = dispatch(calls, registry, context);

    std::set<std::string> raw_ids;
    std::set<std::string> distill_ids;
    std::vector<RawKnowledgeRecord> to_distill;
    for (auto& r: results)
    {
        if (!r.error.empty())
        {
            ++outcome.failed_calls;
            append_note(outcome.note, r.error);
            continue;
        }
        append_note(outcome.note, r.result.note);
        for (auto const& record: r.result.records)
            add_unique(outcome.raw, raw_ids, record);
        if (r.result.verbatim)
        {
            if (!r.result.verbatim->empty())
            {
                Knowledge verbatim;
                verbatim.distilled_text = text::trim(*r.result.verbatim);
                for (auto const& record: r.result.records)
                    verbatim.provenance.push_back(record.record_id);
                outcome.distilled.push_back(std::move(verbatim));
            }
            continue;
        }
        for (auto const& record: r.result.records)
            add_unique(to_distill, distill_ids, record);
    }

    if (!to_distill.empty())
    {
        auto knowledge = distiller.distill(help_request, calls, to_distill, token_budget);
        append_note(outcome.note, knowledge.note);
        if (!knowledge.distilled_text.empty())
        {
            knowledge.note.clear();
            outcome.distilled.push_back(std::move(knowledge));
        }
    }
    if (outcome.failed_calls == static_cast<int>(calls.size()))
        append_note(outcome.note, "all tool calls failed");
    return outcome;
}

ToolRouter::ToolRouter(std::shared_ptr<ToolRegistry> registry,
                       std::shared_ptr<Router> router,
                       std::shared_ptr<Distiller> distiller,
                       int token_budget):
    _registry(std::move(registry)), _router(std::move(router)), _distiller(std::move(distiller)), _token_budget(token_budget)
{
    if (!_registry || !_router || !_distiller)
        throw PreconditionError("tool router needs a registry, a router and a distiller");
    if (token_budget < 1)
        throw PreconditionError("distillation token budget must be >= 1");
}

RoutingOutcome ToolRouter::handle(std::string const& help_request, CallContext const& context)
{
    if (_registry->empty())
        throw ConfigError("tool registry is empty");
    std::vector<ToolCall> calls;
    try
    {
        calls = _router->route(help_request, *_registry, context.help_index);
    }
    catch (RoutingError const& e)
    {
        RoutingOutcome declined;
        declined.note = e.what();
        return declined;
    }
    catch (ProviderError const& e)
    {
        RoutingOutcome failed;
        failed.note = fmt::format("router unavailable: {}", e.what());
        return failed;
    }
    try
    {
        return execute(calls, *_registry, *_distiller, help_request, _token_budget, context);
    }
    catch (ProviderError const& e)
    {
        RoutingOutcome failed;
        failed.calls = std::move(calls);
        failed.note = fmt::format("distillation failed: {}", e.what());
        return failed;
    }
}

RoutingOutcome ToolRouter::direct(ToolCall const& call, CallContext const& context)
{
    RoutingOutcome outcome;
    outcome.calls = { call };
    std::shared_ptr<ToolBackend> backend;
    try
    {
        backend = _registry->backend(call.tool);
    }
    catch (RoutingError const& e)
    {
        outcome.note = e.what();
        outcome.failed_calls = 1;
        return outcome;
    }

    BackendResult result;
    try
    {
        result = backend->invoke(call.argument, context);
    }
    catch (Error const& e)
    {
        outcome.note = fmt::format("{}(\"{}\") failed: {}", call.tool, call.argument, e.what());
        outcome.failed_calls = 1;
        return outcome;
    }

    outcome.note = result.note;
    std::set<std::string> ids;
    for (auto const& record: result.records)
        add_unique(outcome.raw, ids, record);

    std::string body;
    if (result.verbatim)
        body = *result.verbatim;
    else
        for (auto const& record: outcome.raw)
            body += fmt::format("--- {} ---\n{}\n", record.source.locator, record.content);
    body = text::trim(body);
    if (!body.empty())
    {
        Knowledge knowledge;
        knowledge.distilled_text = text::truncate_tokens(body, static_cast<std::size_t>(_token_budget));
        for (auto const& record: outcome.raw)
            knowledge.provenance.push_back(record.record_id);
        outcome.distilled.push_back(std::move(knowledge));
    }
    return outcome;
}

} // namespace kestrel
