// SPDX-License-Identifier: Apache-2.0
#include <kestrel/errors.hpp>
#include <kestrel/prompts.hpp>
#include <kestrel/provider.hpp>
#include <kestrel/text.hpp>

#include <fmt/format.h>

#include <cmath>

namespace kestrel
{

std::optional<std::string_view> prompts::header_for_role(std::string_view role)
{
    if (role == "agent")
        return agent_header;
    if (role == "router")
        return router_header;
    if (role == "distiller")
        return distiller_header;
    if (role == "self_reflection")
        return self_reflection_header;
    if (role == "verified_reflection")
        return verified_reflection_header;
    if (role == "judge")
        return judge_header;
    return std::nullopt;
}

std::string_view to_string(Role role)
{
    switch (role)
    {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

void ChatRequest::validate() const
{
    if (messages.empty())
        throw PreconditionError("chat request has no messages");
    if (messages.front().role != Role::system)
        throw PreconditionError("chat request must start with a system message");
}

std::string const& ChatRequest::system_prompt() const
{
    validate();
    return messages.front().content;
}

std::string ChatRequest::flattened() const
{
    std::string out;
    for (auto const& message: messages)
    {
        out += message.content;
        out += '\n';
    }
    return out;
}

std::string apply_stop_markers(std::string text, std::vector<std::string> const& stop_markers)
{
    auto earliest = std::string::npos;
    std::size_t marker_length = 0;
    for (auto const& marker: stop_markers)
    {
        if (marker.empty())
            continue;
        auto const pos = text.find(marker);
        if (pos != std::string::npos && (earliest == std::string::npos || pos < earliest))
        {
            earliest = pos;
            marker_length = marker.size();
        }
    }
    if (earliest != std::string::npos)
        text.resize(earliest + marker_length);
    return text;
}

double cosine(EmbeddingVector const& a, EmbeddingVector const& b)
{
    if (a.values.size() != b.values.size())
        throw PreconditionError("cosine of vectors with different dimensions");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.values.size(); ++i)
    {
        dot += double(a.values[i]) * b.values[i];
        na += double(a.values[i]) * a.values[i];
        nb += double(b.values[i]) * b.values[i];
    }
    if (na == 0 || nb == 0)
        return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::uint64_t fnv1a64(std::string_view data)
{
    std::uint64_t hash = 14695981039346656037ull;
    for (unsigned char c: data)
    {
        hash ^= c;
        hash *= 1099511628211ull;
    }
    return hash;
}

HashedTermEmbedder::HashedTermEmbedder(int dim): _dim(dim)
{
    if (dim <= 0)
        throw PreconditionError("embedding dimension must be positive");
}

std::string HashedTermEmbedder::name() const
{
    return fmt::format("hashed-tf-fnv1a-{}", _dim);
}

EmbeddingVector HashedTermEmbedder::embed_one(std::string_view input) const
{
    EmbeddingVector v;
    v.values.assign(static_cast<std::size_t>(_dim), 0.0f);
    for (auto const& term: text::terms(input))
        v.values[fnv1a64(term) % static_cast<std::uint64_t>(_dim)] += 1.0f;
    double norm = 0;
    for (float x: v.values)
        norm += double(x) * x;
    if (norm > 0)
    {
        auto const inv = static_cast<float>(1.0 / std::sqrt(norm));
        for (float& x: v.values)
            x *= inv;
    }
    return v;
}

std::vector<EmbeddingVector> HashedTermEmbedder::embed(std::vector<std::string> const& texts)
{
    if (texts.empty())
        throw PreconditionError("embed requires at least one text");
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (auto const& t: texts)
    {
        if (t.empty())
            throw PreconditionError("embed input texts must be non-empty");
        out.push_back(embed_one(t));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scripted replay
// ---------------------------------------------------------------------------

RequestPredicate expect_contains(std::vector<std::string> needles)
{
    return [needles = std::move(needles)](ChatRequest const& request) -> std::optional<std::string> {
        auto const all = request.flattened();
        for (auto const& needle: needles)
            if (all.find(needle) == std::string::npos)
                return fmt::format("request does not contain \"{}\"", needle);
        return std::nullopt;
    };
}

RequestPredicate expect_role(std::string header, std::vector<std::string> needles)
{
    auto contains = expect_contains(std::move(needles));
    return [header = std::move(header), contains](ChatRequest const& request) -> std::optional<std::string> {
        auto const& system = request.system_prompt();
        if (system.rfind(header, 0) != 0)
        {
            auto const first_line = system.substr(0, system.find('\n'));
            return fmt::format("expected role header \"{}\", got \"{}\"", header, first_line);
        }
        return contains(request);
    };
}

RequestPredicate accept_any()
{
    return [](ChatRequest const&) -> std::optional<std::string> { return std::nullopt; };
}

ScriptedProvider::ScriptedProvider(std::vector<ScriptEntry> script): _script(std::move(script))
{
    if (_script.empty())
        throw PreconditionError("scripted provider needs a non-empty script");
}

std::string ScriptedProvider::complete(ChatRequest const& request)
{
    request.validate();
    std::lock_guard lock(_mutex);
    if (_cursor >= _script.size())
        throw ReplayError(fmt::format("replay underrun: script has {} entries", _script.size()));
    auto const index = _cursor++;
    auto const& entry = _script[index];
    if (entry.expect)
    {
        if (auto mismatch = entry.expect(request))
        {
            auto message = fmt::format("replay divergence at entry {}: {}", index, *mismatch);
            _divergences.push_back(message);
            throw ReplayError(message);
        }
    }
    return apply_stop_markers(entry.response, request.stop_markers);
}

std::size_t ScriptedProvider::consumed() const
{
    std::lock_guard lock(_mutex);
    return _cursor;
}

std::size_t ScriptedProvider::remaining() const
{
    std::lock_guard lock(_mutex);
    return _script.size() - _cursor;
}

std::vector<std::string> ScriptedProvider::divergences() const
{
    std::lock_guard lock(_mutex);
    return _divergences;
}

std::vector<ScriptEntry> load_script(json const& entries)
{
    if (!entries.is_array())
        throw LoadError("replay script must be a JSON array");
    std::vector<ScriptEntry> script;
    for (std::size_t i = 0; i < entries.size(); ++i)
    {
        auto const& e = entries[i];
        if (!e.contains("response"))
            throw LoadError(fmt::format("replay script entry {} has no response", i));
        auto needles = e.value("contains", std::vector<std::string> {});
        ScriptEntry entry;
        entry.response = e.at("response").get<std::string>();
        if (e.contains("role"))
        {
            auto const role = e.at("role").get<std::string>();
            auto header = prompts::header_for_role(role);
            if (!header)
                throw LoadError(fmt::format("replay script entry {} has unknown role '{}'", i, role));
            entry.expect = expect_role(std::string(*header), std::move(needles));
        }
        else
            entry.expect = expect_contains(std::move(needles));
        script.push_back(std::move(entry));
    }
    return script;
}

} // namespace kestrel
