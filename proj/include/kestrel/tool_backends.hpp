// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <kestrel/core_types.hpp>

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace kestrel
{

/// Who is calling a tool, for record attribution.
struct CallContext
{
    std::string task_id;
    int help_index = 0;
    Clock clock = system_clock();
};

struct BackendResult
{
    std::vector<RawKnowledgeRecord> records;
    /// Degradation note (partial fetch failure, non-zero exit, empty result).
    std::string note;
    /// Text handed to the agent as-is instead of being distilled (in-house retrieval only).
    std::optional<std::string> verbatim;
};

/// A concrete tool bound to a registry name.
class ToolBackend
{
  public:
    virtual ~ToolBackend() = default;

    /// Throws BackendError when the backend cannot run at all.
    virtual BackendResult invoke(std::string const& argument, CallContext const& context) = 0;
};

// ---------------------------------------------------------------------------
// Web search
// ---------------------------------------------------------------------------

struct SearchHit
{
    std::string url;
    std::string title;
    std::string snippet;
    int rank = 1;
};

struct FetchedHit
{
    SearchHit hit;
    RawKnowledgeRecord record;
    /// Page could not be read; the record carries the snippet only.
    bool snippet_only = false;
};

class SearchEngine
{
  public:
    virtual ~SearchEngine() = default;

    /// Throws PreconditionError for an empty query or top_n < 1. Zero hits is an empty list.
    virtual std::vector<FetchedHit> web_search(std::string const& query, int top_n, CallContext const& context) = 0;
};

struct FixturePage
{
    std::string id;
    std::string url;
    std::string text;
};

void to_json(json& j, FixturePage const& v);
void from_json(json const& j, FixturePage& v);

/// Offline web world: pages ranked by lowercase term overlap, ties broken by page id.
class FixtureCorpus final: public SearchEngine
{
  public:
    /// Throws LoadError for empty files, malformed JSON (naming the line) and duplicate ids.
    static FixtureCorpus load(std::filesystem::path const& path);
    /// Throws LoadError for duplicate ids.
    static FixtureCorpus from_pages(std::vector<FixturePage> pages);

    std::vector<FetchedHit> web_search(std::string const& query, int top_n, CallContext const& context) override;

    /// Pages with a non-zero overlap score, best first, as (page index, score).
    [[nodiscard]] std::vector<std::pair<std::size_t, int>> rank(std::string const& query) const;

    [[nodiscard]] std::vector<FixturePage> const& pages() const { return _pages; }
    [[nodiscard]] std::size_t size() const { return _pages.size(); }

  private:
    explicit FixtureCorpus(std::vector<FixturePage> pages);

    std::vector<FixturePage> _pages;
    std::vector<std::vector<std::string>> _page_terms; // sorted, unique
};

/// Search-API + page-reader backend: GET search with key/cx/q, then GET reader_url + page url.
class LiveSearchEngine final: public SearchEngine
{
  public:
    LiveSearchEngine(std::string search_url, std::string api_key, std::string engine_id, std::string reader_url, std::string reader_key);

    std::vector<FetchedHit> web_search(std::string const& query, int top_n, CallContext const& context) override;

  private:
    std::string _search_url;
    std::string _api_key;
    std::string _engine_id;
    std::string _reader_url;
    std::string _reader_key;
};

/// Strips tags, scripts and styles; collapses whitespace.
std::string html_to_text(std::string_view html);

// ---------------------------------------------------------------------------
// Code execution
// ---------------------------------------------------------------------------

enum class ExitStatus
{
    ok,
    error,
    timeout,
};

std::string_view to_string(ExitStatus status);

struct ExecResult
{
    std::string stdout_text;
    std::string stderr_text;
    ExitStatus exit_status = ExitStatus::ok;
    std::chrono::milliseconds wall_time { 0 };
};

/// Runs a Python snippet in a child process: no network (namespace isolation when the kernel
/// allows it, socket APIs disabled in the interpreter regardless), CPU/memory rlimits, wall-time
/// kill and captured output truncated to `limits.output_bytes`.
/// Throws PreconditionError for an empty snippet and BackendError when no interpreter is available.
ExecResult code_exec(std::string_view snippet, SandboxLimits const& limits);

// ---------------------------------------------------------------------------
// Registry bindings
// ---------------------------------------------------------------------------

class WebSearchTool final: public ToolBackend
{
  public:
    WebSearchTool(std::shared_ptr<SearchEngine> engine, int top_n);
    BackendResult invoke(std::string const& argument, CallContext const& context) override;

  private:
    std::shared_ptr<SearchEngine> _engine;
    int _top_n;
};

/// Executions are serialized per instance.
class CodeExecTool final: public ToolBackend
{
  public:
    explicit CodeExecTool(SandboxLimits limits);
    BackendResult invoke(std::string const& argument, CallContext const& context) override;

  private:
    SandboxLimits _limits;
    std::mutex _mutex;
};

ToolDescription web_search_description();
ToolDescription code_exec_description();

} // namespace kestrel
