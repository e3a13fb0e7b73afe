// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <kestrel/prompts.hpp>
#include <kestrel/text.hpp>

#include <fstream>
#include <sstream>

using namespace kestrel;
using testing::FunctionProvider;
using testing::Gen;
using testing::make_task;
using testing::services_for;
using testing::system_starts_with;
using testing::TempDir;

namespace
{
using Reply = std::function<std::string(ChatRequest const&)>;

std::string user_text(ChatRequest const& r) { return r.messages.back().content; }

bool has_knowledge(ChatRequest const& r) { return user_text(r).find("<knowledge>") != std::string::npos; }

/// Routes each role to its own reply function.
std::shared_ptr<FunctionProvider> roles(Reply agent, Reply self = nullptr, Reply verified = nullptr)
{
    return std::make_shared<FunctionProvider>([=](ChatRequest const& r) -> std::string {
        if (system_starts_with(r, prompts::self_reflection_header))
            return self ? self(r) : "fine\nVERDICT: CONFIDENT";
        if (system_starts_with(r, prompts::verified_reflection_header))
            return verified ? verified(r) : "";
        return agent(r);
    });
}

std::shared_ptr<FixtureCorpus> corpus() { return std::make_shared<FixtureCorpus>(testing::small_corpus()); }

RunConfig plain_config()
{
    RunConfig c;
    c.warmup_passes = 0;
    c.ablation.in_house_tool = false;
    return c;
}

std::size_t knowledge_events(Trajectory const& t)
{
    return static_cast<std::size_t>(t.knowledge_count());
}

std::vector<Task> copper_tasks(int n)
{
    std::vector<Task> tasks;
    for (int i = 0; i < n; ++i)
        tasks.push_back(make_task("task-" + std::to_string(i), "What is the facade clad in? (" + std::to_string(i) + ")", "copper"));
    return tasks;
}

/// Asks one question, then answers `answer`.
Reply ask_then(std::string answer)
{
    return [answer](ChatRequest const& r) {
        return has_knowledge(r) ? "<think>found it</think><answer>" + answer + "</answer>"
                                : std::string("<think>need facts</think><help>copper facade</help>");
    };
}
} // namespace

TEST_SUITE("orchestrator")
{
    TEST_CASE("immediate answer uses no tools")
    {
        auto model = roles([](ChatRequest const&) { return "<answer>42</answer>"; });
        Orchestrator orch(plain_config(), services_for(model, corpus(), plain_config()));
        auto const report = orch.solve_task(make_task("t", "6*7?"), {});
        CHECK(report.status == SolveStatus::answered);
        CHECK(report.final_answer == "42");
        CHECK(report.attempts == 1);
        CHECK(report.help_requests_used == 0);
        CHECK(report.self_reflections.size() == 1);
        CHECK(report.self_reflections[0].verdict == Confidence::confident);
    }

    TEST_CASE("help requests become knowledge events with provenance")
    {
        auto model = roles(ask_then("Copper"));
        auto const config = plain_config();
        auto services = services_for(model, corpus(), config);
        auto kb = services.kb;
        Orchestrator orch(config, services);
        MemoryTraceFactory traces(fixed_clock(0));
        auto trace = traces.open("t");
        auto const report = orch.solve_task(make_task("t", "What is the facade clad in?"), {}, trace.get());
        CHECK(report.final_answer == "Copper");
        CHECK(report.help_requests_used == 1);
        CHECK(report.tool_calls.at("web_search") == 1);
        REQUIRE(report.trajectories.size() == 1);
        auto const& events = report.trajectories[0].events;
        auto const knowledge = std::find_if(events.begin(), events.end(), [](auto const& e) { return std::holds_alternative<Knowledge>(e); });
        REQUIRE(knowledge != events.end());
        auto const& k = std::get<Knowledge>(*knowledge);
        CHECK(k.distilled_text.find("copper") != std::string::npos);
        REQUIRE_FALSE(k.provenance.empty());
        for (auto const& id: k.provenance)
            CHECK(kb->contains(id));
        CHECK(kb->size() == report.fetched_record_ids.size());

        std::vector<std::string> kinds;
        for (auto const& r: traces.records("t"))
            kinds.push_back(r["kind"]);
        CHECK(kinds.front() == "context");
        CHECK(kinds.back() == "status");
        CHECK(std::count(kinds.begin(), kinds.end(), "routing") == 1);
    }

    TEST_CASE("always-help script stops at exactly the budget")
    {
        auto model = roles([](ChatRequest const&) { return "<help>more facts about copper</help>"; });
        auto config = plain_config();
        config.max_help_requests = 3;
        Orchestrator orch(config, services_for(model, corpus(), config));
        auto const report = orch.solve_task(make_task("t", "q"), {});
        CHECK(report.status == SolveStatus::budget_exhausted);
        CHECK(report.help_requests_used == 3);
        REQUIRE(report.trajectories.size() == 1);
        CHECK(knowledge_events(report.trajectories[0]) == 3);
        CHECK(report.reason.find("help budget of 3") != std::string::npos);
        CHECK_FALSE(report.final_answer);
    }

    TEST_CASE("budget soundness under random scripts")
    {
        Gen g(21);
        for (int i = 0; i < 60; ++i)
        {
            auto config = plain_config();
            config.max_help_requests = g.integer(1, 6);
            config.max_retries = g.integer(0, 3);
            config.max_no_action_rounds = g.integer(1, 3);
            auto const seed = static_cast<std::uint64_t>(g.integer(0, 1'000'000));
            auto rng = std::make_shared<Gen>(seed);
            auto model = roles(
                [rng](ChatRequest const&) -> std::string {
                    switch (rng->integer(0, 3))
                    {
                        case 0: return "<help>copper</help>";
                        case 1: return "<answer>copper</answer>";
                        case 2: return "thinking <help>unterminated";
                        default: return "<tool name=\"web_search\">bridge</tool>";
                    }
                },
                [rng](ChatRequest const&) { return rng->coin() ? "VERDICT: CONFIDENT" : "doubt\nVERDICT: UNCERTAIN"; });
            Orchestrator orch(config, services_for(model, corpus(), config));
            auto const report = orch.solve_task(make_task("t", "q"), {});
            CHECK(report.attempts >= 1);
            CHECK(report.attempts <= 1 + config.max_retries);
            CHECK(report.help_requests_used <= config.max_help_requests);
            for (auto const& t: report.trajectories)
            {
                CHECK_FALSE(check_trajectory(t));
                CHECK(t.help_request_count() <= config.max_help_requests);
            }
            // An attempt that stops without answering keeps the latest earlier answer.
            auto const any_answer = std::any_of(report.trajectories.begin(), report.trajectories.end(), [](auto const& t) {
                return t.final_answer().has_value();
            });
            CHECK(report.final_answer.has_value() == any_answer);
            if (report.status == SolveStatus::answered)
                CHECK(report.final_answer == report.trajectories.back().final_answer());
        }
    }

    TEST_CASE("no-action turns end the attempt")
    {
        auto model = roles([](ChatRequest const&) { return "just thinking aloud"; });
        auto config = plain_config();
        config.max_no_action_rounds = 2;
        Orchestrator orch(config, services_for(model, corpus(), config));
        auto const report = orch.solve_task(make_task("t", "q"), {});
        CHECK(report.status == SolveStatus::budget_exhausted);
        CHECK(report.reason.find("2 consecutive turns") != std::string::npos);
        CHECK(model->calls == 2);
        CHECK(report.trajectories[0].events.size() == 2);
    }

    TEST_CASE("uncertain reflections trigger retries with critiques")
    {
        auto model = roles([](ChatRequest const&) { return "<answer>copper</answer>"; },
                           [](ChatRequest const&) { return "check the site size\nVERDICT: UNCERTAIN"; });
        auto config = plain_config();
        config.max_retries = 2;
        Orchestrator orch(config, services_for(model, corpus(), config));
        auto const report = orch.solve_task(make_task("t", "q"), {});
        CHECK(report.attempts == 3);
        CHECK(report.self_reflections.size() == 2); // the last attempt is not reflected on
        CHECK(report.final_answer == "copper");
        std::vector<std::string> agent_inputs;
        for (auto const& r: model->requests)
            if (system_starts_with(r, prompts::agent_header))
                agent_inputs.push_back(user_text(r));
        REQUIRE(agent_inputs.size() == 3);
        CHECK(agent_inputs[0].find("Reflection on Earlier Attempts:") == std::string::npos);
        CHECK(agent_inputs[2].find("Attempt 1: check the site size\nAttempt 2: check the site size") != std::string::npos);
    }

    TEST_CASE("self reflection off means a single attempt")
    {
        auto model = roles([](ChatRequest const&) { return "<answer>x</answer>"; },
                           [](ChatRequest const&) { return "VERDICT: UNCERTAIN"; });
        auto config = plain_config();
        config.ablation.self_reflection = false;
        Orchestrator orch(config, services_for(model, corpus(), config));
        auto const report = orch.solve_task(make_task("t", "q"), {});
        CHECK(report.attempts == 1);
        CHECK(report.self_reflections.empty());
    }

    TEST_CASE("provider failures")
    {
        auto broken = roles([](ChatRequest const&) -> std::string { throw ProviderError("endpoint down", true); });
        auto config = plain_config();
        Orchestrator orch(config, services_for(broken, corpus(), config));
        auto const report = orch.solve_task(make_task("t", "q"), {});
        CHECK(report.status == SolveStatus::provider_error);
        CHECK(report.reason.find("endpoint down") != std::string::npos);

        auto flaky_reflector = roles([](ChatRequest const&) { return "<answer>copper</answer>"; },
                                     [](ChatRequest const&) -> std::string { throw ProviderError("reflector down", true); });
        Orchestrator keeps(config, services_for(flaky_reflector, corpus(), config));
        auto const kept = keeps.solve_task(make_task("t", "q"), {});
        CHECK(kept.status == SolveStatus::answered);
        CHECK(kept.final_answer == "copper");
        CHECK(kept.attempts == 1);
    }

    TEST_CASE("router off exposes tools to the agent")
    {
        auto model = roles([](ChatRequest const& r) {
            return has_knowledge(r) ? std::string("<answer>copper</answer>") : std::string("<tool name=\"web_search\">copper facade</tool>");
        });
        auto config = plain_config();
        config.ablation.router = false;
        Orchestrator orch(config, services_for(model, corpus(), config));
        auto const report = orch.solve_task(make_task("t", "q"), {});
        CHECK(report.final_answer == "copper");
        CHECK(report.direct_tool_calls == 1);
        auto const& first = model->requests.front();
        CHECK(first.system_prompt().find("- web_search (input: ") != std::string::npos);
        CHECK(user_text(model->requests[1]).find("--- https://fixture.example/copper ---") != std::string::npos);
    }

    TEST_CASE("orchestrator checks its collaborators")
    {
        auto const config = plain_config();
        auto model = roles([](ChatRequest const&) { return "<answer>x</answer>"; });
        auto services = services_for(model, corpus(), config);
        services.reflector = nullptr;
        CHECK_THROWS_AS(Orchestrator(config, services), ConfigError);
        auto with_kb_tool = config;
        with_kb_tool.ablation.in_house_tool = true;
        auto no_kb = services_for(model, corpus(), config);
        no_kb.kb = nullptr;
        CHECK_THROWS_AS(Orchestrator(with_kb_tool, no_kb), ConfigError);
        auto bad = config;
        bad.max_help_requests = 0;
        CHECK_THROWS_AS(Orchestrator(bad, services_for(model, corpus(), config)), ConfigError);
    }

    TEST_CASE("experience evolves unilaterally across a batch")
    {
        int lesson_counter = 0;
        auto model = roles(ask_then("copper"), nullptr, [&](ChatRequest const&) {
            ++lesson_counter;
            return "LESSON: Lesson " + std::to_string(lesson_counter) + " :: Verify each requirement.";
        });
        auto config = plain_config();
        MemoryTraceFactory traces(fixed_clock(0));
        auto services = services_for(model, corpus(), config);
        auto kb = services.kb;
        Orchestrator orch(config, services);
        auto const tasks = copper_tasks(10);
        auto const batch = orch.run_batch(tasks, {}, &traces);

        REQUIRE(batch.outcomes.size() == 10);
        int violations = 0;
        for (std::size_t i = 0; i < tasks.size(); ++i)
        {
            auto const& id = tasks[i].id;
            CHECK(batch.outcomes[i].experience_version == static_cast<int>(i));
            CHECK(batch.outcomes[i].verdict->correct);
            for (auto const& record: traces.records(id))
            {
                if (record["kind"] != "context")
                    continue;
                CHECK(record["data"]["experience_version"] == static_cast<int>(i));
                for (auto const& lesson: record["data"]["lessons"])
                    for (auto const& source: lesson["derived_from"])
                        violations += source == id ? 1 : 0;
                CHECK(record["data"]["lessons"].size() == std::min<std::size_t>(i, 10));
            }
            // Coverage: every cited record is in the store.
            for (auto const& t: batch.outcomes[i].report.trajectories)
                for (auto const& e: t.events)
                    if (auto const* k = std::get_if<Knowledge>(&e))
                        for (auto const& pid: k->provenance)
                            CHECK(kb->contains(pid));
        }
        CHECK(violations == 0);
        CHECK(batch.final_experience.version == 10);
        CHECK(batch.experience_history.size() == 11);
    }

    TEST_CASE("only later tasks see a lesson")
    {
        auto model = roles(ask_then("tin"), nullptr, [](ChatRequest const&) { return "LESSON: Check Materials :: Read the cladding section."; });
        auto config = plain_config();
        auto services = services_for(model, corpus(), config);
        Orchestrator orch(config, services);
        MemoryTraceFactory traces(fixed_clock(0));
        auto const batch = orch.run_batch(copper_tasks(2), {}, &traces);
        CHECK_FALSE(batch.outcomes[0].verdict->correct);
        CHECK(traces.records("task-0")[0]["data"]["lessons"].empty());
        CHECK(traces.records("task-1")[0]["data"]["lessons"].size() == 1);
    }

    TEST_CASE("verified reflection off keeps the initial experience")
    {
        auto model = roles(ask_then("tin"), nullptr, [](ChatRequest const&) { return "LESSON: A :: b"; });
        auto config = plain_config();
        config.ablation.verified_reflection = false;
        Orchestrator orch(config, services_for(model, corpus(), config));
        auto const batch = orch.run_batch(copper_tasks(3));
        for (auto const& o: batch.outcomes)
            CHECK(o.experience_version == 0);
        CHECK(batch.final_experience.version == 0);
    }

    TEST_CASE("minimal workflow renders no experience and never retrieves from the store")
    {
        auto model = roles(ask_then("copper"), nullptr, [](ChatRequest const&) { return "LESSON: A :: b"; });
        auto config = plain_config();
        config.ablation.minimal_only = true;
        config.ablation.in_house_tool = true;
        ExperienceState initial;
        initial.version = 1;
        initial.lessons = { { "Prior", "lesson", { "elsewhere" }, 1 } };
        MemoryTraceFactory traces(fixed_clock(0));
        Orchestrator orch(config, services_for(model, corpus(), config));
        auto const batch = orch.run_batch(copper_tasks(3), initial, &traces);
        for (auto const& id: traces.task_ids())
            for (auto const& r: traces.records(id))
                if (r["kind"] == "context")
                    CHECK(r["data"]["experience_block"] == "");
        for (auto const& o: batch.outcomes)
        {
            CHECK_FALSE(o.report.tool_calls.contains("kb_retrieve"));
            CHECK(o.report.attempts == 1);
        }
        CHECK_FALSE(orch.services().router->registry().contains("kb_retrieve"));
    }

    TEST_CASE("per-task errors are captured and the batch continues")
    {
        int call = 0;
        auto model = roles([&](ChatRequest const&) -> std::string {
            if (++call == 1)
                throw ProviderError("transient", true);
            return "<answer>copper</answer>";
        });
        auto config = plain_config();
        Orchestrator orch(config, services_for(model, corpus(), config));
        auto const batch = orch.run_batch(copper_tasks(2));
        CHECK(batch.outcomes[0].report.status == SolveStatus::provider_error);
        CHECK_FALSE(batch.outcomes[0].verdict->correct);
        CHECK(batch.outcomes[1].report.status == SolveStatus::answered);
        CHECK_THROWS_AS(orch.run_batch({}), PreconditionError);
    }

    TEST_CASE("scripted runs write identical traces")
    {
        auto run_once = [](std::filesystem::path const& dir) {
            int counter = 0;
            auto model = roles(ask_then("copper"), nullptr, [&](ChatRequest const&) {
                return "LESSON: Lesson " + std::to_string(++counter) + " :: body";
            });
            auto config = plain_config();
            DirectoryTraceFactory traces(dir, fixed_clock(0));
            Orchestrator orch(config, services_for(model, corpus(), config));
            orch.run_batch(copper_tasks(3), {}, &traces);
        };
        TempDir a;
        TempDir b;
        run_once(a.path());
        run_once(b.path());
        for (auto const& entry: std::filesystem::directory_iterator(a.path()))
        {
            std::ifstream fa(entry.path());
            std::ifstream fb(b.path() / entry.path().filename());
            std::stringstream sa;
            std::stringstream sb;
            sa << fa.rdbuf();
            sb << fb.rdbuf();
            CHECK_FALSE(sa.str().empty());
            CHECK(sa.str() == sb.str());
        }
    }
}
