// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <kestrel/context.hpp>
#include <kestrel/core_types.hpp>
#include <kestrel/errors.hpp>
#include <kestrel/knowledge_base.hpp>
#include <kestrel/orchestrator.hpp>
#include <kestrel/provider.hpp>
#include <kestrel/reflection.hpp>
#include <kestrel/tool_backends.hpp>
#include <kestrel/tool_router.hpp>

#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace kestrel::testing
{

/// Scratch directory removed on destruction.
class TempDir
{
  public:
    TempDir()
    {
        static std::atomic<int> counter { 0 };
        std::random_device rd;
        _path = std::filesystem::temp_directory_path() / ("kestrel-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(_path);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(_path, ec);
    }
    TempDir(TempDir const&) = delete;
    TempDir& operator=(TempDir const&) = delete;

    [[nodiscard]] std::filesystem::path const& path() const { return _path; }
    [[nodiscard]] std::filesystem::path operator/(std::string const& name) const { return _path / name; }

  private:
    std::filesystem::path _path;
};

/// Small seeded generator for property tests.
class Gen
{
  public:
    explicit Gen(std::uint64_t seed): _rng(seed) {}

    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(_rng); }
    bool coin(double p = 0.5) { return std::bernoulli_distribution(p)(_rng); }

    std::string word(int min_len = 1, int max_len = 8)
    {
        static constexpr std::string_view letters = "abcdefghijklmnopqrstuvwxyz";
        std::string out;
        auto const n = integer(min_len, max_len);
        for (int i = 0; i < n; ++i)
            out.push_back(letters[static_cast<std::size_t>(integer(0, 25))]);
        return out;
    }

    std::string sentence(int min_words = 1, int max_words = 12)
    {
        std::string out;
        auto const n = integer(min_words, max_words);
        for (int i = 0; i < n; ++i)
            out += (i ? " " : "") + word();
        return out;
    }

    /// Arbitrary bytes from `alphabet`, including markup characters and multi-byte UTF-8.
    std::string text(int max_len, std::string_view alphabet)
    {
        std::string out;
        auto const n = integer(0, max_len);
        for (int i = 0; i < n; ++i)
            out.push_back(alphabet[static_cast<std::size_t>(integer(0, static_cast<int>(alphabet.size()) - 1))]);
        return out;
    }

    template <typename T>
    T const& pick(std::vector<T> const& items)
    {
        return items[static_cast<std::size_t>(integer(0, static_cast<int>(items.size()) - 1))];
    }

    std::mt19937_64& engine() { return _rng; }

  private:
    std::mt19937_64 _rng;
};

/// Chat provider driven by a function of the request.
class FunctionProvider final: public ChatProvider
{
  public:
    explicit FunctionProvider(std::function<std::string(ChatRequest const&)> fn): _fn(std::move(fn)) {}

    std::string complete(ChatRequest const& request) override
    {
        request.validate();
        ++calls;
        requests.push_back(request);
        return apply_stop_markers(_fn(request), request.stop_markers);
    }

    std::atomic<int> calls { 0 };
    std::vector<ChatRequest> requests;

  private:
    std::function<std::string(ChatRequest const&)> _fn;
};

/// Tool backend returning fixed records and counting invocations.
class StubBackend final: public ToolBackend
{
  public:
    explicit StubBackend(std::function<BackendResult(std::string const&, CallContext const&)> fn): _fn(std::move(fn)) {}

    BackendResult invoke(std::string const& argument, CallContext const& context) override
    {
        ++calls;
        return _fn(argument, context);
    }

    std::atomic<int> calls { 0 };

  private:
    std::function<BackendResult(std::string const&, CallContext const&)> _fn;
};

inline RawKnowledgeRecord url_record(std::string const& url, std::string const& content, std::string const& task = "t", int help = 1)
{
    return make_record({ SourceKind::url, url }, content, task, help, 0);
}

inline FixtureCorpus small_corpus()
{
    return FixtureCorpus::from_pages({
        { "p1", "https://fixture.example/copper", "The facade is clad in copper. Copper weathers to green." },
        { "p2", "https://fixture.example/bridge", "The bridge is 15 metres wide and 1.5 km long." },
        { "p3", "https://fixture.example/schedule", "The conference schedule lists keynote sessions." },
    });
}

inline Task make_task(std::string id, std::string query, std::optional<std::string> gold = std::nullopt)
{
    Task task;
    task.id = std::move(id);
    task.query = std::move(query);
    task.instruction = "Reply with the answer only.";
    task.gold_answer = std::move(gold);
    return task;
}

/// Orchestrator collaborators over a fixture corpus, with `model` behind every role.
inline AgentServices services_for(std::shared_ptr<ChatProvider> model,
                                  std::shared_ptr<SearchEngine> search,
                                  RunConfig const& config,
                                  std::shared_ptr<KnowledgeBase> kb = nullptr)
{
    auto registry = std::make_shared<ToolRegistry>();
    registry->add(web_search_description(), std::make_shared<WebSearchTool>(search, config.search_top_n));
    registry->add(code_exec_description(), std::make_shared<CodeExecTool>(config.sandbox));
    AgentServices services;
    services.agent = model;
    services.router = std::make_shared<ToolRouter>(registry,
                                                   std::make_shared<KeywordRouter>(config.max_calls_per_help),
                                                   std::make_shared<ExtractiveDistiller>(),
                                                   config.distill_token_budget);
    services.reflector = std::make_shared<Reflector>(model,
                                                     static_cast<std::size_t>(config.experience_lesson_cap),
                                                     static_cast<std::size_t>(config.lesson_body_cap));
    services.kb = kb ? kb : std::make_shared<KnowledgeBase>(std::make_shared<HashedTermEmbedder>());
    services.clock = fixed_clock(1'700'000'000'000);
    return services;
}

inline bool system_starts_with(ChatRequest const& request, std::string_view header)
{
    return request.system_prompt().starts_with(header);
}

} // namespace kestrel::testing
