// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <kestrel/prompts.hpp>
#include <kestrel/text.hpp>

using namespace kestrel;
using testing::Gen;
using testing::make_task;

namespace
{
ExperienceState two_lessons()
{
    ExperienceState e;
    e.version = 2;
    e.lessons = { { "Total Constraint Compliance", "Check every requirement.", { "prior-1" }, 1 },
                  { "Search With Combined Filters", "Combine the filters in one query.", { "prior-2" }, 2 } };
    return e;
}

bool has_tag(std::string const& s)
{
    return s.find("<think>") != std::string::npos || s.find("</think>") != std::string::npos;
}
} // namespace

TEST_SUITE("context")
{
    TEST_CASE("first attempt renders experience and query without critiques")
    {
        auto const task = make_task("t1", "Which colour is the facade?");
        auto const ctx = build_context(task, two_lessons(), {}, Trajectory { "t1", {}, 1 });
        CHECK(ctx.system_instruction.starts_with(prompts::agent_header));
        CHECK(ctx.system_instruction.find("Reply with the answer only.") != std::string::npos);
        CHECK(ctx.experience_block
              == "Previous Task Experience:\nTotal Constraint Compliance: Check every requirement.\n"
                 "Search With Combined Filters: Combine the filters in one query.");
        CHECK_FALSE(ctx.self_reflection_block);
        CHECK(ctx.query_block == "Task:\nWhich colour is the facade?");
        CHECK(ctx.history_block.empty());
        CHECK(ctx.experience_version == 2);
        CHECK(ctx.rendered_lessons.size() == 2);

        auto const request = to_request(ctx);
        REQUIRE(request.messages.size() == 2);
        CHECK(request.messages[1].content.starts_with("Previous Task Experience:"));
        CHECK(request.messages[1].content.ends_with("Task:\nWhich colour is the facade?"));
        CHECK(request.stop_markers == agent_stop_markers);
    }

    TEST_CASE("experience block lists lesson titles in state order")
    {
        ExperienceState e;
        e.version = 3;
        for (auto const* title: { "Total Constraint Compliance", "Constraint-Driven Filtering", "Cultural Depth in Symbolism" })
            e.lessons.push_back({ title, "body", { "earlier" }, 3 });
        auto const block = build_context(make_task("case", "q"), e, {}, Trajectory { "case", {}, 1 }).experience_block;
        auto const a = block.find("Total Constraint Compliance:");
        auto const b = block.find("Constraint-Driven Filtering:");
        auto const c = block.find("Cultural Depth in Symbolism:");
        REQUIRE(c != std::string::npos);
        CHECK(a < b);
        CHECK(b < c);
        CHECK(build_context(make_task("case", "q"), {}, {}, Trajectory { "case", {}, 1 }).experience_block.empty());
    }

    TEST_CASE("later attempts carry critiques oldest first")
    {
        auto const task = make_task("t1", "q");
        Trajectory history { "t1", { Reasoning { "r" }, HelpRequest { "h", 1, {} }, Knowledge { "k [R1]", { "id" }, "" } }, 3 };
        auto const ctx = build_context(task, two_lessons(), { " first ", "second" }, history);
        REQUIRE(ctx.self_reflection_block);
        CHECK(*ctx.self_reflection_block == "Reflection on Earlier Attempts:\nAttempt 1: first\nAttempt 2: second");
        CHECK(ctx.history_block == "<think>r</think>\n<help>h</help>\n<knowledge>k [R1]</knowledge>");
        auto const user = to_request(ctx).messages[1].content;
        CHECK(user.find("Reflection on Earlier Attempts:") < user.find("Task:"));
        CHECK(user.find("Task:") < user.find("Progress so far:"));
    }

    TEST_CASE("critique count must match the attempt")
    {
        auto const task = make_task("t1", "q");
        CHECK_THROWS_AS(build_context(task, {}, { "c" }, Trajectory { "t1", {}, 1 }), PreconditionError);
        CHECK_THROWS_AS(build_context(task, {}, {}, Trajectory { "t1", {}, 2 }), PreconditionError);
        CHECK_THROWS_AS(build_context(task, {}, {}, Trajectory { "t1", {}, 0 }), PreconditionError);
    }

    TEST_CASE("lessons derived from the current task are a leakage error")
    {
        auto experience = two_lessons();
        experience.lessons[1].derived_from.push_back("t1");
        CHECK_THROWS_AS(build_context(make_task("t1", "q"), experience, {}, Trajectory { "t1", {}, 1 }), InvariantError);
        CHECK_NOTHROW(build_context(make_task("t2", "q"), experience, {}, Trajectory { "t2", {}, 1 }));
    }

    TEST_CASE("experience can be left out and direct tools listed")
    {
        ContextOptions options;
        options.include_experience = false;
        options.direct_tools = { web_search_description(), code_exec_description() };
        auto const ctx = build_context(make_task("t1", "q"), two_lessons(), {}, Trajectory { "t1", {}, 1 }, options);
        CHECK(ctx.experience_block.empty());
        CHECK(ctx.rendered_lessons.empty());
        CHECK(ctx.system_instruction.find("- web_search (input: ") != std::string::npos);
        CHECK(ctx.system_instruction.find("- code_exec (input: ") != std::string::npos);
        CHECK(to_request(ctx).messages[1].content == "Task:\nq");
    }

    TEST_CASE("render events covers every tag")
    {
        std::vector<TrajectoryEvent> const events { Reasoning { "r" },
                                                    HelpRequest { "x", 1, std::string("web_search") },
                                                    Knowledge { "", {}, "no results" },
                                                    Knowledge { "fact", { "id" }, "partial" },
                                                    FinalAnswer { "a" } };
        CHECK(render_events(events)
              == "<think>r</think>\n<tool name=\"web_search\">x</tool>\n<knowledge>(note: no results)</knowledge>\n"
                 "<knowledge>fact\n(note: partial)</knowledge>\n<answer>a</answer>");
    }

    TEST_CASE("parse segment examples")
    {
        auto const help = parse_segment("<think>plan</think><help>I need to check details about a building</help>");
        CHECK(help.kind == ActionKind::help);
        CHECK(help.reasoning == "plan");
        CHECK(help.payload == "I need to check details about a building");

        auto const answer = parse_segment("done <answer> Copper </answer> trailing <help>x</help>");
        CHECK(answer.kind == ActionKind::answer);
        CHECK(answer.payload == "Copper");
        CHECK(answer.reasoning == "done");

        auto const tool = parse_segment("<tool name=\"code_exec\">print(1)</tool>");
        CHECK(tool.kind == ActionKind::tool_call);
        CHECK(tool.tool_name == "code_exec");
        CHECK(tool.payload == "print(1)");

        CHECK(parse_segment("<help>unterminated").kind == ActionKind::none);
        CHECK(parse_segment("<answer>   </answer>").kind == ActionKind::none);
        CHECK(parse_segment("<tool name=\"\">x</tool>").kind == ActionKind::none);
        CHECK(parse_segment("<think>only thinking</think>").reasoning == "only thinking");
        CHECK(parse_segment("").kind == ActionKind::none);
    }

    TEST_CASE("parse segment is total on mangled tag soup")
    {
        Gen g(99);
        std::vector<std::string> const pieces { "<help>",  "</help>", "<answer>", "</answer>", "<think>", "</think>",
                                                "<tool",   "name=",   "\"",       ">",         "</tool>", " ",
                                                "word",    "\n",      "é",        "<",         "/",       "help" };
        for (int i = 0; i < 10'000; ++i)
        {
            std::string soup;
            for (int n = g.integer(0, 20); n > 0; --n)
                soup += g.pick(pieces);
            Segment s;
            REQUIRE_NOTHROW(s = parse_segment(soup));
            CHECK_FALSE(has_tag(s.reasoning));
            if (s.kind == ActionKind::none)
            {
                CHECK(s.payload.empty());
                continue;
            }
            CHECK_FALSE(s.payload.empty());
            CHECK(s.payload == text::trim(s.payload));
            CHECK(soup.find(s.payload) != std::string::npos);
            if (s.kind == ActionKind::tool_call)
                CHECK_FALSE(s.tool_name.empty());
        }
    }

    TEST_CASE("rendered reasoning and action parse back")
    {
        Gen g(4);
        for (int i = 0; i < 500; ++i)
        {
            auto const reasoning = g.sentence();
            auto const payload = g.sentence();
            std::vector<TrajectoryEvent> events { Reasoning { reasoning } };
            ActionKind expected = ActionKind::help;
            switch (g.integer(0, 2))
            {
                case 0: events.push_back(HelpRequest { payload, 1, {} }); break;
                case 1:
                    events.push_back(FinalAnswer { payload });
                    expected = ActionKind::answer;
                    break;
                default:
                    events.push_back(HelpRequest { payload, 1, std::string("web_search") });
                    expected = ActionKind::tool_call;
            }
            auto const s = parse_segment(render_events(events));
            CHECK(s.kind == expected);
            CHECK(s.reasoning == reasoning);
            CHECK(s.payload == payload);
        }
    }
}
