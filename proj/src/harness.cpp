// SPDX-License-Identifier: Apache-2.0
#include <kestrel/errors.hpp>
#include <kestrel/harness.hpp>
#include <kestrel/http_provider.hpp>
#include <kestrel/knowledge_base.hpp>
#include <kestrel/reference_policy.hpp>
#include <kestrel/tool_router.hpp>
#include <kestrel/warmup.hpp>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <fstream>
#include <set>

#ifndef KESTREL_DATA_DIR
#define KESTREL_DATA_DIR "data"
#endif

namespace kestrel
{

std::filesystem::path default_data_dir()
{
    if (char const* dir = std::getenv("KESTREL_DATA_DIR"); dir != nullptr && *dir != '\0')
        return dir;
    return KESTREL_DATA_DIR;
}

Benchmark synthetic_benchmark(WorldParams const& params)
{
    auto world = generate_world(params);
    Benchmark benchmark;
    benchmark.name = "synthetic";
    benchmark.tasks = std::move(world.tasks);
    benchmark.search = std::make_shared<FixtureCorpus>(FixtureCorpus::from_pages(std::move(world.pages)));
    benchmark.make_model = [] { return std::make_shared<ReferencePolicy>(); };
    return benchmark;
}

Benchmark replay_benchmark(std::filesystem::path const& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError(fmt::format("replay fixture '{}' not found", path.string()));
    json fixture;
    try
    {
        fixture = json::parse(in);
    }
    catch (json::exception const& e)
    {
        throw LoadError(fmt::format("malformed replay fixture '{}': {}", path.string(), e.what()));
    }

    Benchmark benchmark;
    benchmark.name = fixture.value("name", std::string("replay"));
    benchmark.tasks = { fixture.at("task").get<Task>() };
    benchmark.initial_experience = fixture.value("experience", ExperienceState {});
    benchmark.search = std::make_shared<FixtureCorpus>(FixtureCorpus::from_pages(fixture.at("corpus").get<std::vector<FixturePage>>()));
    auto script = fixture.at("script");
    load_script(script); // fail fast on malformed scripts
    benchmark.make_model = [script] { return std::make_shared<ScriptedProvider>(load_script(script)); };
    benchmark.router = RouterKind::model;
    benchmark.distiller = DistillerKind::extractive;
    benchmark.adjust_config = [](RunConfig& config) {
        // The script covers exactly one solve; warm-up simulations would consume it.
        config.warmup_passes = 0;
    };
    return benchmark;
}

Benchmark fixture_benchmark(std::string name, std::filesystem::path const& tasks, std::filesystem::path const& corpus)
{
    if (tasks.empty())
        throw ConfigError("fixture benchmark needs a tasks file");
    if (corpus.empty())
        throw ConfigError("fixture mode requires a corpus path");
    if (!std::filesystem::exists(corpus))
        throw ConfigError(fmt::format("corpus file '{}' does not exist", corpus.string()));
    if (!std::filesystem::exists(tasks))
        throw ConfigError(fmt::format("tasks file '{}' does not exist", tasks.string()));
    Benchmark benchmark;
    benchmark.name = std::move(name);
    benchmark.tasks = load_tasks(tasks);
    benchmark.search = std::make_shared<FixtureCorpus>(FixtureCorpus::load(corpus));
    benchmark.make_model = [] { return std::make_shared<ReferencePolicy>(); };
    return benchmark;
}

namespace
{
    std::string require_env(char const* name)
    {
        char const* value = std::getenv(name);
        if (value == nullptr || *value == '\0')
            throw ConfigError(fmt::format("live mode needs the environment variable {}", name));
        return value;
    }

    std::string optional_env(char const* name)
    {
        char const* value = std::getenv(name);
        return value == nullptr ? std::string() : std::string(value);
    }
} // namespace

Benchmark live_benchmark(std::string name,
                         std::vector<Task> tasks,
                         ProviderEndpoints const& endpoints,
                         std::optional<std::filesystem::path> const& corpus,
                         GradeMethod grade_method)
{
    auto chat_url = endpoints.chat_url.empty() ? require_env("KESTREL_CHAT_URL") : endpoints.chat_url;
    auto chat_model = endpoints.chat_model.empty() ? require_env("KESTREL_CHAT_MODEL") : endpoints.chat_model;
    auto chat_key = require_env("KESTREL_CHAT_API_KEY");
    auto embed_url = endpoints.embed_url.empty() ? optional_env("KESTREL_EMBED_URL") : endpoints.embed_url;
    auto embed_model = endpoints.embed_model.empty() ? optional_env("KESTREL_EMBED_MODEL") : endpoints.embed_model;

    Benchmark benchmark;
    benchmark.name = std::move(name);
    benchmark.tasks = std::move(tasks);
    benchmark.live = true;
    benchmark.router = RouterKind::model;
    benchmark.distiller = DistillerKind::model;
    benchmark.grade_method = grade_method;

    if (corpus)
        benchmark.search = std::make_shared<FixtureCorpus>(FixtureCorpus::load(*corpus));
    else
        benchmark.search = std::make_shared<LiveSearchEngine>(endpoints.search_url,
                                                              require_env("KESTREL_SEARCH_API_KEY"),
                                                              require_env("KESTREL_SEARCH_ENGINE_ID"),
                                                              endpoints.reader_url,
                                                              optional_env("KESTREL_READER_API_KEY"));

    auto const temperature = endpoints.temperature;
    benchmark.make_model = [=] { return std::make_shared<HttpChatProvider>(chat_url, chat_model, chat_key, temperature); };
    benchmark.make_judge = [=] { return std::make_shared<HttpChatProvider>(chat_url, chat_model, chat_key, 0.0); };
    if (!embed_url.empty())
    {
        if (embed_model.empty())
            throw ConfigError("live mode needs the environment variable KESTREL_EMBED_MODEL");
        auto embed_key = optional_env("KESTREL_EMBED_API_KEY");
        if (embed_key.empty())
            embed_key = chat_key;
        auto const dim = endpoints.embed_dim;
        benchmark.make_embedder = [=] { return std::make_shared<HttpEmbeddingProvider>(embed_url, embed_model, embed_key, dim); };
    }
    return benchmark;
}

Benchmark builtin_benchmark(std::string const& name, std::filesystem::path const& data_dir, WorldParams const& world)
{
    if (name == "synthetic")
        return synthetic_benchmark(world);
    if (name == "case-replay")
        return replay_benchmark(data_dir / "case_replay.json");
    throw ConfigError(fmt::format("unknown benchmark '{}' (built-in: synthetic, case-replay)", name));
}

void to_json(json& j, RunSummary const& v)
{
    json per_task = json::array();
    for (auto const& outcome: v.batch.outcomes)
    {
        auto const& r = outcome.report;
        per_task.push_back({ { "task_id", r.task_id },
                             { "status", to_string(r.status) },
                             { "final_answer", r.final_answer ? json(*r.final_answer) : json(nullptr) },
                             { "correct", outcome.verdict ? json(outcome.verdict->correct) : json(nullptr) },
                             { "attempts", r.attempts },
                             { "help_requests", r.total_help_requests },
                             { "experience_version", outcome.experience_version },
                             { "tool_calls", r.tool_calls },
                             { "reason", r.reason } });
    }
    json timeline = json::array();
    for (auto const& snapshot: v.batch.experience_history)
    {
        std::vector<std::string> titles;
        for (auto const& lesson: snapshot.lessons)
            titles.push_back(lesson.title);
        timeline.push_back({ { "version", snapshot.version }, { "lessons", titles } });
    }
    j = json { { "benchmark", v.benchmark },
               { "variant", v.variant },
               { "flags",
                 { { "self_reflection", v.flags.self_reflection },
                   { "verified_reflection", v.flags.verified_reflection },
                   { "in_house_tool", v.flags.in_house_tool },
                   { "router", v.flags.router },
                   { "minimal_only", v.flags.minimal_only } } },
               { "tasks", v.tasks },
               { "answered", v.answered },
               { "graded", v.graded },
               { "correct", v.correct },
               { "accuracy", v.accuracy() },
               { "help_requests", v.help_requests },
               { "attempts", v.attempts },
               { "kb_retrieve_calls", v.kb_retrieve_calls },
               { "direct_tool_calls", v.direct_tool_calls },
               { "provider_errors", v.provider_errors },
               { "coverage_violations", v.coverage_violations },
               { "knowledge_base", { { "records", v.kb.records }, { "chunks", v.kb.chunks }, { "by_source", v.kb.by_source } } },
               { "experience_timeline", std::move(timeline) },
               { "warmup", v.batch.warmup ? json(*v.batch.warmup) : json(nullptr) },
               { "per_task", std::move(per_task) } };
}

namespace
{
    struct Assembly
    {
        RunConfig config;
        AgentServices services;
        std::shared_ptr<KnowledgeBase> kb;
    };

    Assembly assemble(Benchmark const& benchmark, RunConfig config, RunOptions const& options)
    {
        if (benchmark.tasks.empty())
            throw ConfigError(fmt::format("benchmark '{}' has no tasks", benchmark.name));
        if (!benchmark.search || !benchmark.make_model)
            throw ConfigError(fmt::format("benchmark '{}' is incomplete", benchmark.name));
        if (benchmark.adjust_config)
            benchmark.adjust_config(config);
        config.validate();

        auto model = benchmark.make_model();
        std::shared_ptr<EmbeddingProvider> embedder = benchmark.make_embedder ? benchmark.make_embedder()
                                                                              : std::make_shared<HashedTermEmbedder>();
        ChunkingParams const chunking { static_cast<std::size_t>(config.chunk_size), static_cast<std::size_t>(config.chunk_overlap) };
        std::shared_ptr<KnowledgeBase> kb = options.kb_dir ? std::shared_ptr<KnowledgeBase>(KnowledgeBase::open(*options.kb_dir, embedder, chunking))
                                                           : std::make_shared<KnowledgeBase>(embedder, chunking);
        kb->set_parallel_scoring(options.parallel_scoring);

        auto registry = std::make_shared<ToolRegistry>();
        registry->add(web_search_description(), std::make_shared<WebSearchTool>(benchmark.search, config.search_top_n));
        registry->add(code_exec_description(), std::make_shared<CodeExecTool>(config.sandbox));

        std::shared_ptr<Router> router;
        if (benchmark.router == RouterKind::model)
            router = std::make_shared<ModelRouter>(model, config.max_calls_per_help);
        else
            router = std::make_shared<KeywordRouter>(config.max_calls_per_help);
        std::shared_ptr<Distiller> distiller;
        if (benchmark.distiller == DistillerKind::model)
            distiller = std::make_shared<ModelDistiller>(model);
        else
            distiller = std::make_shared<ExtractiveDistiller>();

        Assembly assembly;
        assembly.services.agent = model;
        assembly.services.router = std::make_shared<ToolRouter>(registry, router, distiller, config.distill_token_budget);
        assembly.services.reflector = std::make_shared<Reflector>(model,
                                                                  static_cast<std::size_t>(config.experience_lesson_cap),
                                                                  static_cast<std::size_t>(config.lesson_body_cap));
        assembly.services.kb = kb;
        assembly.services.grade_method = benchmark.grade_method;
        assembly.services.judge = benchmark.make_judge ? benchmark.make_judge() : nullptr;
        assembly.services.clock = options.clock;
        assembly.kb = std::move(kb);
        assembly.config = std::move(config);
        return assembly;
    }
} // namespace

WarmupRun run_warmup(Benchmark const& benchmark, RunConfig config, RunOptions const& options)
{
    auto assembly = assemble(benchmark, std::move(config), options);
    Orchestrator orchestrator(assembly.config, assembly.services);
    WarmupRun run;
    run.summary = warm_up(benchmark.tasks, assembly.config.warmup_passes, orchestrator);
    if (options.kb_dir)
        assembly.kb->compact();
    run.kb = assembly.kb->stats();
    return run;
}

RunSummary run_benchmark(Benchmark const& benchmark, RunConfig config, RunOptions const& options, std::string variant)
{
    auto assembly = assemble(benchmark, std::move(config), options);
    auto const& kb = assembly.kb;
    auto const effective = assembly.config.effective();

    Orchestrator orchestrator(assembly.config, assembly.services);
    RunSummary summary;
    summary.benchmark = benchmark.name;
    summary.variant = std::move(variant);
    summary.flags = effective.ablation;
    summary.batch = orchestrator.run_batch(benchmark.tasks, benchmark.initial_experience, options.traces);
    if (options.kb_dir)
        kb->compact();
    if (options.experience_out)
        save_experience_history(*options.experience_out, summary.batch.experience_history);

    auto const stored = kb->record_ids();
    summary.tasks = static_cast<int>(benchmark.tasks.size());
    for (auto const& outcome: summary.batch.outcomes)
    {
        auto const& report = outcome.report;
        summary.answered += report.status == SolveStatus::answered ? 1 : 0;
        summary.provider_errors += report.status == SolveStatus::provider_error ? 1 : 0;
        summary.help_requests += report.total_help_requests;
        summary.attempts += report.attempts;
        summary.direct_tool_calls += report.direct_tool_calls;
        if (auto it = report.tool_calls.find(kb_retrieve_tool_name); it != report.tool_calls.end())
            summary.kb_retrieve_calls += it->second;
        if (outcome.verdict)
        {
            ++summary.graded;
            summary.correct += outcome.verdict->correct ? 1 : 0;
        }
        for (auto const& trajectory: report.trajectories)
            for (auto const& event: trajectory.events)
                if (auto const* k = std::get_if<Knowledge>(&event))
                    for (auto const& id: k->provenance)
                        summary.coverage_violations += stored.contains(id) ? 0 : 1;
    }
    summary.kb = kb->stats();
    return summary;
}

std::vector<Variant> ablation_variants()
{
    AblationFlags const full;
    std::vector<Variant> variants { { "full", full } };
    auto without = [&](std::string name, auto&& change) {
        auto flags = full;
        change(flags);
        variants.push_back({ std::move(name), flags });
    };
    without("w/o self reflection", [](AblationFlags& f) { f.self_reflection = false; });
    without("w/o verified reflection", [](AblationFlags& f) { f.verified_reflection = false; });
    without("w/o in-house tool", [](AblationFlags& f) { f.in_house_tool = false; });
    without("minimal workflow", [](AblationFlags& f) { f.minimal_only = true; });
    without("w/ tool description", [](AblationFlags& f) { f.router = false; });
    return variants;
}

std::vector<RunSummary> run_ablation(Benchmark const& benchmark, RunConfig const& base, RunOptions const& options)
{
    std::vector<RunSummary> runs;
    for (auto const& variant: ablation_variants())
    {
        auto config = base;
        config.ablation = variant.flags;
        auto variant_options = options;
        if (options.kb_dir)
        {
            std::string slug;
            for (char c: variant.name)
                slug.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
            variant_options.kb_dir = *options.kb_dir / slug;
        }
        spdlog::info("ablation variant: {}", variant.name);
        runs.push_back(run_benchmark(benchmark, config, variant_options, variant.name));
    }
    return runs;
}

std::string render_table(std::vector<RunSummary> const& runs)
{
    std::string out = fmt::format("{:<26} {:>6} {:>9} {:>5} {:>8} {:>12} {:>11}\n",
                                  "variant",
                                  "router",
                                  "accuracy",
                                  "help",
                                  "attempts",
                                  "kb_retrieve",
                                  "tool_calls");
    for (auto const& run: runs)
        out += fmt::format("{:<26} {:>6} {:>5}/{:<3} {:>5} {:>8} {:>12} {:>11}\n",
                           run.variant,
                           run.flags.router ? "on" : "off",
                           run.correct,
                           run.graded,
                           run.help_requests,
                           run.attempts,
                           run.kb_retrieve_calls,
                           run.direct_tool_calls);
    return out;
}

} // namespace kestrel
