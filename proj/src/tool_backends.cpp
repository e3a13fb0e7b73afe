// SPDX-License-Identifier: Apache-2.0
#include <kestrel/errors.hpp>
#include <kestrel/http_provider.hpp>
#include <kestrel/text.hpp>
#include <kestrel/tool_backends.hpp>

#include <fmt/format.h>
#include <httplib.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace kestrel
{

void to_json(json& j, FixturePage const& v)
{
    j = json { { "id", v.id }, { "url", v.url }, { "text", v.text } };
}

void from_json(json const& j, FixturePage& v)
{
    v.id = j.at("id").get<std::string>();
    v.url = j.at("url").get<std::string>();
    v.text = j.at("text").get<std::string>();
}

namespace
{
    std::size_t line_of(std::string const& content, std::size_t byte)
    {
        byte = std::min(byte, content.size());
        return 1 + static_cast<std::size_t>(std::count(content.begin(), content.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
    }

    /// Byte offsets of the objects that are direct children of the top-level array.
    std::vector<std::size_t> top_level_object_offsets(std::string const& content)
    {
        std::vector<std::size_t> offsets;
        int depth = 0;
        bool in_string = false;
        for (std::size_t i = 0; i < content.size(); ++i)
        {
            char const c = content[i];
            if (in_string)
            {
                if (c == '\\')
                    ++i;
                else if (c == '"')
                    in_string = false;
                continue;
            }
            if (c == '"')
                in_string = true;
            else if (c == '[' || c == '{')
            {
                if (depth == 1)
                    offsets.push_back(i);
                ++depth;
            }
            else if (c == ']' || c == '}')
                --depth;
        }
        return offsets;
    }
} // namespace

FixtureCorpus::FixtureCorpus(std::vector<FixturePage> pages): _pages(std::move(pages))
{
    std::set<std::string> seen;
    for (auto const& page: _pages)
        if (!seen.insert(page.id).second)
            throw LoadError(fmt::format("duplicate page id '{}' in fixture corpus", page.id));

    _page_terms.reserve(_pages.size());
    for (auto const& page: _pages)
    {
        auto t = text::terms(page.text);
        std::sort(t.begin(), t.end());
        t.erase(std::unique(t.begin(), t.end()), t.end());
        _page_terms.push_back(std::move(t));
    }
}

FixtureCorpus FixtureCorpus::from_pages(std::vector<FixturePage> pages)
{
    return FixtureCorpus(std::move(pages));
}

FixtureCorpus FixtureCorpus::load(std::filesystem::path const& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw LoadError(fmt::format("cannot open fixture corpus '{}'", path.string()));
    std::stringstream buffer;
    buffer << in.rdbuf();
    auto const content = buffer.str();
    if (text::trim(content).empty())
        throw LoadError(fmt::format("fixture corpus '{}' is empty", path.string()));

    json parsed;
    try
    {
        parsed = json::parse(content);
    }
    catch (json::parse_error const& e)
    {
        throw LoadError(fmt::format("{}:{}: malformed fixture corpus: {}", path.string(), line_of(content, e.byte), e.what()));
    }
    if (!parsed.is_array())
        throw LoadError(fmt::format("{}:1: fixture corpus must be a JSON array of pages", path.string()));
    if (parsed.empty())
        throw LoadError(fmt::format("fixture corpus '{}' contains no pages", path.string()));

    auto const offsets = top_level_object_offsets(content);
    std::vector<FixturePage> pages;
    pages.reserve(parsed.size());
    std::set<std::string> seen;
    for (std::size_t i = 0; i < parsed.size(); ++i)
    {
        auto const line = i < offsets.size() ? line_of(content, offsets[i]) : 0;
        auto const& item = parsed[i];
        if (!item.is_object() || !item.contains("id") || !item.contains("url") || !item.contains("text")
            || !item["id"].is_string() || !item["url"].is_string() || !item["text"].is_string())
            throw LoadError(fmt::format("{}:{}: page {} needs string fields id, url and text", path.string(), line, i));
        auto page = item.get<FixturePage>();
        if (!seen.insert(page.id).second)
            throw LoadError(fmt::format("{}:{}: duplicate page id '{}'", path.string(), line, page.id));
        pages.push_back(std::move(page));
    }
    return FixtureCorpus(std::move(pages));
}

std::vector<std::pair<std::size_t, int>> FixtureCorpus::rank(std::string const& query) const
{
    auto q = text::terms(query);
    std::sort(q.begin(), q.end());
    q.erase(std::unique(q.begin(), q.end()), q.end());

    std::vector<std::pair<std::size_t, int>> scored;
    for (std::size_t i = 0; i < _pages.size(); ++i)
    {
        auto const& page_terms = _page_terms[i];
        int score = 0;
        for (auto const& term: q)
            if (std::binary_search(page_terms.begin(), page_terms.end(), term))
                ++score;
        if (score > 0)
            scored.emplace_back(i, score);
    }
    std::sort(scored.begin(), scored.end(), [this](auto const& a, auto const& b) {
        if (a.second != b.second)
            return a.second > b.second;
        return _pages[a.first].id < _pages[b.first].id;
    });
    return scored;
}

std::vector<FetchedHit> FixtureCorpus::web_search(std::string const& query, int top_n, CallContext const& context)
{
    if (text::trim(query).empty())
        throw PreconditionError("web_search query must not be empty");
    if (top_n < 1)
        throw PreconditionError("web_search top_n must be >= 1");

    auto const ranked = rank(query);
    std::vector<FetchedHit> out;
    for (std::size_t i = 0; i < ranked.size() && out.size() < static_cast<std::size_t>(top_n); ++i)
    {
        auto const& page = _pages[ranked[i].first];
        FetchedHit fetched;
        fetched.hit.url = page.url;
        fetched.hit.title = page.id;
        fetched.hit.snippet = page.text.substr(0, 160);
        fetched.hit.rank = static_cast<int>(out.size()) + 1;
        fetched.record = make_record(
            { SourceKind::url, page.url }, page.text, context.task_id, context.help_index, context.clock());
        out.push_back(std::move(fetched));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Live search
// ---------------------------------------------------------------------------

LiveSearchEngine::LiveSearchEngine(
    std::string search_url, std::string api_key, std::string engine_id, std::string reader_url, std::string reader_key):
    _search_url(std::move(search_url)),
    _api_key(std::move(api_key)),
    _engine_id(std::move(engine_id)),
    _reader_url(std::move(reader_url)),
    _reader_key(std::move(reader_key))
{
    Endpoint::parse(_search_url);
    Endpoint::parse(_reader_url);
}

std::string html_to_text(std::string_view html)
{
    std::string out;
    out.reserve(html.size());
    std::size_t i = 0;
    auto skip_block = [&](std::string_view close) {
        auto const lower = text::to_lower(html.substr(i));
        auto const end = lower.find(close);
        i = end == std::string::npos ? html.size() : i + end + close.size();
    };
    while (i < html.size())
    {
        if (html[i] == '<')
        {
            auto const head = text::to_lower(html.substr(i, 8));
            if (head.rfind("<script", 0) == 0)
            {
                skip_block("</script>");
                continue;
            }
            if (head.rfind("<style", 0) == 0)
            {
                skip_block("</style>");
                continue;
            }
            auto const close = html.find('>', i);
            i = close == std::string_view::npos ? html.size() : close + 1;
            out.push_back(' ');
            continue;
        }
        out.push_back(html[i++]);
    }
    return text::join(text::whitespace_tokens(out), " ");
}

std::vector<FetchedHit> LiveSearchEngine::web_search(std::string const& query, int top_n, CallContext const& context)
{
    if (text::trim(query).empty())
        throw PreconditionError("web_search query must not be empty");
    if (top_n < 1)
        throw PreconditionError("web_search top_n must be >= 1");

    auto const search = Endpoint::parse(_search_url);
    httplib::Client client(search.scheme_host_port);
    client.set_connection_timeout(10);
    client.set_read_timeout(30);
    httplib::Params params { { "key", _api_key }, { "cx", _engine_id }, { "q", query }, { "num", std::to_string(std::min(top_n, 10)) } };
    auto response = client.Get(search.path, params, httplib::Headers {});
    if (!response)
        throw BackendError(fmt::format("search transport failure: {}", httplib::to_string(response.error())));
    if (response->status != 200)
        throw BackendError(fmt::format("search API returned HTTP {}", response->status));

    auto const body = json::parse(response->body, nullptr, false);
    if (body.is_discarded())
        throw BackendError("search API returned malformed JSON");

    std::vector<FetchedHit> out;
    if (!body.contains("items"))
        return out;

    auto const reader = Endpoint::parse(_reader_url);
    httplib::Client reader_client(reader.scheme_host_port);
    reader_client.set_connection_timeout(10);
    reader_client.set_read_timeout(60);
    httplib::Headers reader_headers { { "Accept", "text/plain" } };
    if (!_reader_key.empty())
        reader_headers.emplace("Authorization", "Bearer " + _reader_key);

    for (auto const& item: body["items"])
    {
        if (out.size() >= static_cast<std::size_t>(top_n))
            break;
        FetchedHit fetched;
        fetched.hit.url = item.value("link", std::string {});
        fetched.hit.title = item.value("title", std::string {});
        fetched.hit.snippet = item.value("snippet", std::string {});
        fetched.hit.rank = static_cast<int>(out.size()) + 1;
        if (fetched.hit.url.empty())
            continue;

        std::string page_text;
        auto page = reader_client.Get(reader.path + fetched.hit.url, reader_headers);
        if (page && page->status == 200 && !page->body.empty())
            page_text = page->body.find("<html") != std::string::npos ? html_to_text(page->body) : page->body;
        if (page_text.empty())
        {
            fetched.snippet_only = true;
            page_text = fetched.hit.title + "\n" + fetched.hit.snippet;
        }
        fetched.record = make_record(
            { SourceKind::url, fetched.hit.url }, std::move(page_text), context.task_id, context.help_index, context.clock());
        out.push_back(std::move(fetched));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Registry bindings
// ---------------------------------------------------------------------------

WebSearchTool::WebSearchTool(std::shared_ptr<SearchEngine> engine, int top_n): _engine(std::move(engine)), _top_n(top_n)
{
    if (!_engine)
        throw PreconditionError("web search tool needs a search engine");
}

BackendResult WebSearchTool::invoke(std::string const& argument, CallContext const& context)
{
    BackendResult result;
    std::vector<std::string> flagged;
    for (auto& fetched: _engine->web_search(argument, _top_n, context))
    {
        if (fetched.snippet_only)
            flagged.push_back(fetched.hit.url);
        result.records.push_back(std::move(fetched.record));
    }
    if (result.records.empty())
        result.note = fmt::format("no results for \"{}\"", argument);
    else if (!flagged.empty())
        result.note = fmt::format("snippet only (page fetch failed): {}", text::join(flagged, ", "));
    return result;
}

CodeExecTool::CodeExecTool(SandboxLimits limits): _limits(limits) {}

BackendResult CodeExecTool::invoke(std::string const& argument, CallContext const& context)
{
    std::lock_guard lock(_mutex);
    auto const exec = code_exec(argument, _limits);

    BackendResult result;
    std::string content;
    switch (exec.exit_status)
    {
        case ExitStatus::ok:
            content = text::trim(exec.stdout_text);
            if (content.empty())
                content = "(no output)";
            break;
        case ExitStatus::error:
            content = text::trim(exec.stdout_text + "\n" + exec.stderr_text);
            result.note = "code execution failed";
            break;
        case ExitStatus::timeout:
            content = fmt::format("execution timed out after {} ms", _limits.wall_time.count());
            result.note = "code execution timed out";
            break;
    }
    result.records.push_back(make_record(
        { SourceKind::code_execution, argument }, std::move(content), context.task_id, context.help_index, context.clock()));
    return result;
}

ToolDescription web_search_description()
{
    return { "web_search",
             "Searches the web for a short keyword query, reads the top pages and returns their content.",
             ToolInputKind::free_text_query };
}

ToolDescription code_exec_description()
{
    return { "code_exec",
             "Runs a self-contained Python snippet without network access and returns what it prints. "
             "Use it for calculations and conversions.",
             ToolInputKind::code_snippet };
}

} // namespace kestrel
