// SPDX-License-Identifier: Apache-2.0
#include <kestrel/benchmark_adapters.hpp>
#include <kestrel/cli.hpp>
#include <kestrel/config.hpp>
#include <kestrel/errors.hpp>
#include <kestrel/harness.hpp>
#include <kestrel/http_provider.hpp>
#include <kestrel/trace.hpp>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <ostream>

namespace kestrel
{

namespace
{
    struct RunFlags
    {
        std::string config_path;
        std::string benchmark = "synthetic";
        std::string tasks;
        std::string task_format = "json";
        std::string corpus;
        bool live = false;
        std::string grade_method = "exact_match";
        std::string kb_dir;
        std::string out = "kestrel-out";
        bool serial_scoring = false;
        WorldParams world;

        // Overrides of RunConfig fields; applied only when given on the command line.
        RunConfig overrides;
        bool no_self_reflection = false;
        bool no_verified_reflection = false;
        bool no_in_house_tool = false;
        bool no_router = false;
        bool minimal_only = false;
        std::int64_t sandbox_timeout_ms = 0;
        std::vector<CLI::Option*> config_options;
    };

    void add_world_options(CLI::App* app, WorldParams& world)
    {
        app->add_option("--seed", world.seed, "Synthetic world seed")->capture_default_str();
        app->add_option("--n-tasks", world.n_tasks, "Synthetic task count")->capture_default_str();
        app->add_option("--depth-min", world.depth_min, "Shortest lookup chain")->capture_default_str();
        app->add_option("--depth-max", world.depth_max, "Longest lookup chain")->capture_default_str();
        app->add_option("--n-pages", world.n_pages, "Synthetic corpus size")->capture_default_str();
    }

    void add_run_options(CLI::App* app, RunFlags& f)
    {
        app->add_option("--config", f.config_path, "TOML run configuration");
        app->add_option("--benchmark", f.benchmark, "synthetic | case-replay | fixture | live")->capture_default_str();
        app->add_option("--tasks", f.tasks, "Tasks file (fixture and live modes)");
        app->add_option("--task-format", f.task_format, "json | gaia | webwalkerqa | browsecomp")->capture_default_str();
        app->add_option("--corpus", f.corpus, "Fixture corpus JSON");
        app->add_flag("--live", f.live, "Use real endpoints configured through the environment");
        app->add_option("--grade-method", f.grade_method, "exact_match | llm_equivalence")->capture_default_str();
        app->add_option("--kb-dir", f.kb_dir, "Persistent knowledge-base directory");
        app->add_option("--out", f.out, "Output directory")->capture_default_str();
        app->add_flag("--serial-scoring", f.serial_scoring, "Use the serial similarity kernel");
        add_world_options(app, f.world);

        auto& o = f.overrides;
        auto bind = [&](std::string const& name, auto& field, std::string const& help) {
            f.config_options.push_back(app->add_option(name, field, help));
        };
        bind("--max-help-requests", o.max_help_requests, "Help requests per attempt");
        bind("--max-retries", o.max_retries, "Retries after an UNCERTAIN self-reflection");
        bind("--max-no-action-rounds", o.max_no_action_rounds, "Idle turns before an attempt ends");
        bind("--warmup-passes", o.warmup_passes, "Warm-up simulation passes");
        bind("--warmup-max-help-requests", o.warmup_max_help_requests, "Help budget during warm-up (0 = same as solving)");
        bind("--retrieval-top-k", o.retrieval_top_k, "Chunks returned by kb_retrieve");
        bind("--distill-token-budget", o.distill_token_budget, "Token budget of injected knowledge");
        bind("--experience-lesson-cap", o.experience_lesson_cap, "Maximum number of lessons");
        bind("--lesson-body-cap", o.lesson_body_cap, "Maximum characters per lesson body");
        bind("--max-calls-per-help", o.max_calls_per_help, "Tool calls per help request");
        bind("--search-top-n", o.search_top_n, "Pages fetched per search");
        bind("--chunk-size", o.chunk_size, "Tokens per knowledge-base chunk");
        bind("--chunk-overlap", o.chunk_overlap, "Overlapping tokens between chunks");
        f.config_options.push_back(app->add_option("--sandbox-timeout-ms", f.sandbox_timeout_ms, "Code execution wall time"));
        app->add_flag("--no-self-reflection", f.no_self_reflection, "Disable self reflection");
        app->add_flag("--no-verified-reflection", f.no_verified_reflection, "Disable verified reflection");
        app->add_flag("--no-in-house-tool", f.no_in_house_tool, "Disable the knowledge-base tool");
        app->add_flag("--no-router", f.no_router, "Describe tools in context instead of routing help requests");
        app->add_flag("--minimal-only", f.minimal_only, "Minimal workflow: no reflection, no in-house tool");
    }

    RunConfig resolve_config(RunFlags const& f)
    {
        RunConfig config;
        if (!f.config_path.empty())
            config = load_config(f.config_path);
        apply_env_overrides(config, process_env());

        auto given = [&](std::string const& name) {
            for (auto* option: f.config_options)
                if (option->check_lname(name.substr(2)) && option->count() > 0)
                    return true;
            return false;
        };
        auto const& o = f.overrides;
        auto take = [&](std::string const& name, auto& field, auto const& value) {
            if (given(name))
                field = value;
        };
        take("--max-help-requests", config.max_help_requests, o.max_help_requests);
        take("--max-retries", config.max_retries, o.max_retries);
        take("--max-no-action-rounds", config.max_no_action_rounds, o.max_no_action_rounds);
        take("--warmup-passes", config.warmup_passes, o.warmup_passes);
        take("--warmup-max-help-requests", config.warmup_max_help_requests, o.warmup_max_help_requests);
        take("--retrieval-top-k", config.retrieval_top_k, o.retrieval_top_k);
        take("--distill-token-budget", config.distill_token_budget, o.distill_token_budget);
        take("--experience-lesson-cap", config.experience_lesson_cap, o.experience_lesson_cap);
        take("--lesson-body-cap", config.lesson_body_cap, o.lesson_body_cap);
        take("--max-calls-per-help", config.max_calls_per_help, o.max_calls_per_help);
        take("--search-top-n", config.search_top_n, o.search_top_n);
        take("--chunk-size", config.chunk_size, o.chunk_size);
        take("--chunk-overlap", config.chunk_overlap, o.chunk_overlap);
        if (given("--sandbox-timeout-ms"))
            config.sandbox.wall_time = std::chrono::milliseconds(f.sandbox_timeout_ms);
        config.ablation.self_reflection = config.ablation.self_reflection && !f.no_self_reflection;
        config.ablation.verified_reflection = config.ablation.verified_reflection && !f.no_verified_reflection;
        config.ablation.in_house_tool = config.ablation.in_house_tool && !f.no_in_house_tool;
        config.ablation.router = config.ablation.router && !f.no_router;
        config.ablation.minimal_only = config.ablation.minimal_only || f.minimal_only;
        config.validate();
        return config;
    }

    std::vector<Task> read_task_file(std::string const& format, std::filesystem::path const& path)
    {
        if (!std::filesystem::exists(path))
            throw ConfigError(fmt::format("tasks file '{}' does not exist", path.string()));
        if (format == "json")
            return load_tasks(path);
        return adapters::read_tasks(format, path);
    }

    Benchmark resolve_benchmark(RunFlags const& f, RunConfig const& config)
    {
        auto const method = grade_method_from_string(f.grade_method);
        if (f.live || f.benchmark == "live")
        {
            if (f.tasks.empty())
                throw ConfigError("live mode needs --tasks");
            std::optional<std::filesystem::path> corpus;
            if (!f.corpus.empty())
                corpus = f.corpus;
            auto benchmark = live_benchmark("live", {}, config.endpoints, corpus, method);
            benchmark.tasks = read_task_file(f.task_format, f.tasks);
            return benchmark;
        }
        if (f.benchmark == "fixture" || !f.tasks.empty() || !f.corpus.empty())
        {
            if (f.task_format != "json")
                throw ConfigError("fixture mode reads JSON task files; use --live for benchmark formats");
            auto benchmark = fixture_benchmark(f.benchmark == "fixture" ? "fixture" : f.benchmark, f.tasks, f.corpus);
            benchmark.grade_method = method;
            return benchmark;
        }
        auto benchmark = builtin_benchmark(f.benchmark, default_data_dir(), f.world);
        if (method == GradeMethod::llm_equivalence && !benchmark.make_judge)
            throw ConfigError(fmt::format("benchmark '{}' has no judge model for llm_equivalence", f.benchmark));
        benchmark.grade_method = method;
        return benchmark;
    }

    RunOptions run_options(RunFlags const& f)
    {
        RunOptions options;
        if (!f.kb_dir.empty())
            options.kb_dir = f.kb_dir;
        options.parallel_scoring = !f.serial_scoring;
        return options;
    }

    void write_file(std::filesystem::path const& path, std::string const& content)
    {
        if (path.has_parent_path())
            std::filesystem::create_directories(path.parent_path());
        std::ofstream out(path);
        if (!out)
            throw Error(fmt::format("cannot write '{}'", path.string()));
        out << content;
    }

    std::string render_summary(RunSummary const& s)
    {
        std::string text = fmt::format("benchmark {} ({})\n", s.benchmark, s.variant);
        text += fmt::format("accuracy  {}/{} ({:.1f}%)\n", s.correct, s.graded, 100.0 * s.accuracy());
        text += fmt::format("answered  {}/{}\n", s.answered, s.tasks);
        text += fmt::format("help requests {}, attempts {}, kb_retrieve calls {}, direct tool calls {}\n",
                            s.help_requests,
                            s.attempts,
                            s.kb_retrieve_calls,
                            s.direct_tool_calls);
        text += fmt::format("knowledge base: {} records, {} chunks\n", s.kb.records, s.kb.chunks);
        text += "experience versions:";
        for (auto const& snapshot: s.batch.experience_history)
            text += fmt::format(" v{}({})", snapshot.version, snapshot.lessons.size());
        text += "\n";
        for (auto const& outcome: s.batch.outcomes)
        {
            auto const& r = outcome.report;
            text += fmt::format("  {:<24} {:<16} {:<8} attempts={} help={} answer={}\n",
                                r.task_id,
                                to_string(r.status),
                                outcome.verdict ? (outcome.verdict->correct ? "correct" : "wrong") : "ungraded",
                                r.attempts,
                                r.total_help_requests,
                                r.final_answer.value_or("-"));
        }
        return text;
    }

    int cmd_warmup(RunFlags const& f, std::ostream& out)
    {
        auto const config = resolve_config(f);
        auto const benchmark = resolve_benchmark(f, config);
        auto options = run_options(f);
        if (!options.kb_dir)
            spdlog::warn("no --kb-dir given; the warmed-up store is discarded after this command");
        auto const run = run_warmup(benchmark, config, options);
        out << fmt::format("warm-up: {} passes over {} tasks\n", run.summary.passes, benchmark.tasks.size());
        for (std::size_t i = 0; i < run.summary.pass_fetch_sets.size(); ++i)
            out << fmt::format("  pass {}: {} records fetched\n", i + 1, run.summary.pass_fetch_sets[i].size());
        out << fmt::format("store: {} -> {} records, {} chunks\n", run.summary.store_size_before, run.summary.store_size_after, run.kb.chunks);
        out << fmt::format("simulations: {} ({} failed)\n", run.summary.simulations, run.summary.failed_simulations);
        out << fmt::format("kb_retrieve registered: {}\n", run.summary.kb_retrieve_registered ? "yes" : "no");
        return exit_ok;
    }

    int cmd_run(RunFlags const& f, std::ostream& out)
    {
        auto const config = resolve_config(f);
        auto const benchmark = resolve_benchmark(f, config);
        auto options = run_options(f);
        std::filesystem::path const dir = f.out;
        std::filesystem::create_directories(dir / "traces");
        DirectoryTraceFactory traces(dir / "traces", system_clock());
        options.traces = &traces;
        options.experience_out = dir / "experience.json";

        auto const summary = run_benchmark(benchmark, config, options, "run");
        auto const text = render_summary(summary);
        write_file(dir / "report.json", json(summary).dump(2) + "\n");
        write_file(dir / "report.txt", text);
        out << text << fmt::format("report written to {}\n", (dir / "report.json").string());
        return summary.answered == 0 ? exit_runtime_failure : exit_ok;
    }

    int cmd_ablate(RunFlags const& f, std::ostream& out)
    {
        auto const config = resolve_config(f);
        auto const benchmark = resolve_benchmark(f, config);
        auto const runs = run_ablation(benchmark, config, run_options(f));
        auto const table = render_table(runs);
        std::filesystem::path const dir = f.out;
        write_file(dir / "ablation.json", json(runs).dump(2) + "\n");
        write_file(dir / "ablation.txt", table);
        out << table;
        bool const any = std::any_of(runs.begin(), runs.end(), [](RunSummary const& r) { return r.answered > 0; });
        return any ? exit_ok : exit_runtime_failure;
    }

    int cmd_gen_world(WorldParams const& params, std::string const& out_dir, std::ostream& out)
    {
        auto const world = generate_world(params);
        write_world(world, out_dir);
        out << fmt::format("wrote {} pages and {} tasks to {}\n", world.pages.size(), world.tasks.size(), out_dir);
        return exit_ok;
    }

    int cmd_trace(std::string const& path, TraceFilter const& filter, std::ostream& out)
    {
        std::ifstream in(path);
        if (!in)
            throw LoadError(fmt::format("cannot read trace file '{}'", path));
        auto const rendering = render_trace(in, filter);
        out << rendering.text;
        return exit_ok;
    }

    struct GradeFlags
    {
        std::string answer;
        std::string gold;
        std::string report;
        std::string tasks;
        std::string method = "exact_match";
    };

    int cmd_grade(GradeFlags const& g, std::ostream& out)
    {
        auto const method = grade_method_from_string(g.method);
        std::shared_ptr<ChatProvider> judge;
        if (method == GradeMethod::llm_equivalence)
        {
            auto env = process_env();
            auto url = env("KESTREL_CHAT_URL");
            auto model = env("KESTREL_CHAT_MODEL");
            auto key = env("KESTREL_CHAT_API_KEY");
            if (!url || !model || !key)
                throw ConfigError("llm_equivalence grading needs KESTREL_CHAT_URL, KESTREL_CHAT_MODEL and KESTREL_CHAT_API_KEY");
            judge = std::make_shared<HttpChatProvider>(*url, *model, *key, 0.0);
        }

        if (!g.report.empty())
        {
            if (g.tasks.empty())
                throw ConfigError("grading a report needs --tasks");
            std::ifstream in(g.report);
            if (!in)
                throw ConfigError(fmt::format("cannot read report '{}'", g.report));
            json report;
            try
            {
                report = json::parse(in);
            }
            catch (json::exception const& e)
            {
                throw LoadError(fmt::format("malformed report '{}': {}", g.report, e.what()));
            }
            std::map<std::string, std::string> gold;
            for (auto const& task: load_tasks(g.tasks))
                if (task.gold_answer)
                    gold[task.id] = *task.gold_answer;
            int graded = 0;
            int correct = 0;
            for (auto const& row: report.at("per_task"))
            {
                auto const id = row.at("task_id").get<std::string>();
                auto it = gold.find(id);
                if (it == gold.end())
                    continue;
                ++graded;
                bool ok = false;
                if (row.at("final_answer").is_string())
                    ok = grade(row.at("final_answer").get<std::string>(), it->second, method, judge.get()).correct;
                correct += ok ? 1 : 0;
                out << fmt::format("{:<24} {}\n", id, ok ? "correct" : "wrong");
            }
            out << fmt::format("accuracy {}/{} ({})\n", correct, graded, to_string(method));
            return exit_ok;
        }
        if (g.answer.empty() || g.gold.empty())
            throw ConfigError("grade needs --answer and --gold, or --report and --tasks");
        auto const verdict = grade(g.answer, g.gold, method, judge.get());
        out << (verdict.correct ? "correct" : "wrong") << " (" << to_string(verdict.method) << ")\n";
        return exit_ok;
    }

    void route_logs_to_stderr(std::string const& level)
    {
        auto logger = spdlog::get("kestrel");
        if (!logger)
            logger = spdlog::stderr_logger_mt("kestrel");
        spdlog::set_default_logger(logger);
        spdlog::set_level(spdlog::level::from_str(level));
    }
} // namespace

int run_cli(int argc, char const* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app { "kestrel: help-seeking agent runner with reflection and a persistent knowledge base", "kestrel" };
    app.require_subcommand(1);
    std::string log_level = "warn";
    app.add_option("--log-level", log_level, "trace | debug | info | warn | error | off")->capture_default_str();

    RunFlags warmup_flags;
    RunFlags run_flags;
    RunFlags ablate_flags;
    auto* warmup = app.add_subcommand("warmup", "Fill the knowledge base by simulating every task");
    add_run_options(warmup, warmup_flags);
    auto* run = app.add_subcommand("run", "Solve a benchmark and write traces plus an aggregate report");
    add_run_options(run, run_flags);
    auto* ablate = app.add_subcommand("ablate", "Run the full configuration and the five ablations");
    add_run_options(ablate, ablate_flags);

    WorldParams world;
    std::string world_out = "world";
    auto* gen = app.add_subcommand("gen-world", "Write a synthetic corpus and task file");
    add_world_options(gen, world);
    gen->add_option("--out", world_out, "Output directory")->capture_default_str();

    std::string trace_path;
    TraceFilter filter;
    int attempt = 0;
    std::string kind;
    auto* trace = app.add_subcommand("trace", "Render a trace file");
    trace->add_option("file", trace_path, "Trace JSONL file")->required();
    auto* attempt_option = trace->add_option("--attempt", attempt, "Only this attempt");
    auto* kind_option = trace->add_option("--kind", kind, "Only this record kind");

    GradeFlags grade_flags;
    auto* grade_cmd = app.add_subcommand("grade", "Grade an answer or a run report");
    grade_cmd->add_option("--answer", grade_flags.answer, "Predicted answer");
    grade_cmd->add_option("--gold", grade_flags.gold, "Reference answer");
    grade_cmd->add_option("--report", grade_flags.report, "report.json written by `run`");
    grade_cmd->add_option("--tasks", grade_flags.tasks, "Tasks file with gold answers");
    grade_cmd->add_option("--method", grade_flags.method, "exact_match | llm_equivalence")->capture_default_str();

    try
    {
        app.parse(argc, argv);
    }
    catch (CLI::ParseError const& e)
    {
        auto const code = app.exit(e, out, err);
        return code == 0 ? exit_ok : exit_config_error;
    }

    try
    {
        route_logs_to_stderr(log_level);
        if (*warmup)
            return cmd_warmup(warmup_flags, out);
        if (*run)
            return cmd_run(run_flags, out);
        if (*ablate)
            return cmd_ablate(ablate_flags, out);
        if (*gen)
            return cmd_gen_world(world, world_out, out);
        if (*trace)
        {
            if (attempt_option->count() > 0)
                filter.attempt = attempt;
            if (kind_option->count() > 0)
                filter.kind = kind;
            return cmd_trace(trace_path, filter, out);
        }
        if (*grade_cmd)
            return cmd_grade(grade_flags, out);
    }
    catch (ConfigError const& e)
    {
        err << "configuration error: " << e.what() << '\n';
        return exit_config_error;
    }
    catch (PreconditionError const& e)
    {
        err << "invalid parameters: " << e.what() << '\n';
        return exit_config_error;
    }
    catch (std::exception const& e)
    {
        err << "error: " << e.what() << '\n';
        return exit_runtime_failure;
    }
    return exit_config_error;
}

} // namespace kestrel
