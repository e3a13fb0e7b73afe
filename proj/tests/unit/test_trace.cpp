// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <kestrel/trace.hpp>

#include <sstream>
#include <thread>

using namespace kestrel;
using testing::TempDir;

namespace
{
std::string jsonl(std::vector<json> const& records)
{
    std::string out;
    for (auto const& r: records)
        out += r.dump() + "\n";
    return out;
}

std::vector<json> sample_records()
{
    auto sink = std::make_shared<MemorySink>();
    TraceLog log("case", sink, fixed_clock(5));
    log.emit(trace_kind::context, 1, { { "experience_version", 3 }, { "lessons", json::array({ { { "title", "Total Constraint Compliance" } } }) } });
    log.emit(trace_kind::help_request, 1, { { "seq_index", 1 }, { "text", "check the building" } });
    log.emit(trace_kind::routing, 1, { { "calls", json::array({ { { "tool", "web_search" }, { "argument", "q" } } }) } });
    log.emit(trace_kind::knowledge, 1, { { "distilled_text", "fact [R1]" }, { "provenance", json::array({ "id" }) }, { "note", "" } });
    log.emit(trace_kind::final_answer, 1, { { "text", "silver-gray" } });
    log.emit(trace_kind::self_reflection, 1, { { "verdict", "UNCERTAIN" }, { "critique", "ignores the site size" } });
    log.emit(trace_kind::final_answer, 2, { { "text", "Copper" } });
    log.emit(trace_kind::self_reflection, 2, { { "verdict", "CONFIDENT" }, { "critique", "All constraints are met" } });
    return sink->records();
}
} // namespace

TEST_SUITE("trace")
{
    TEST_CASE("trace log stamps records")
    {
        auto const records = sample_records();
        REQUIRE(records.size() == 8);
        for (std::size_t i = 0; i < records.size(); ++i)
        {
            CHECK(records[i]["task_id"] == "case");
            CHECK(records[i]["seq"] == static_cast<int>(i) + 1);
            CHECK(records[i]["timestamp"] == 5);
        }
        CHECK(records[6]["attempt"] == 2);
    }

    TEST_CASE("directory factory writes one sanitized file per task")
    {
        TempDir dir;
        DirectoryTraceFactory factory(dir / "traces", fixed_clock(1));
        CHECK(factory.path_for("a/b c").filename() == "a_b_c.jsonl");
        {
            auto log = factory.open("a/b c");
            log->emit(trace_kind::status, 1, { { "status", "answered" } });
            log->emit(trace_kind::status, 1, { { "status", "done" } });
        }
        std::ifstream in(factory.path_for("a/b c"));
        std::string line;
        int lines = 0;
        while (std::getline(in, line))
        {
            CHECK(json::parse(line)["task_id"] == "a/b c");
            ++lines;
        }
        CHECK(lines == 2);
    }

    TEST_CASE("memory factory keeps tasks apart")
    {
        MemoryTraceFactory factory(fixed_clock(0));
        auto a = factory.open("a");
        auto b = factory.open("b");
        a->emit(trace_kind::reasoning, 1, { { "text", "x" } });
        b->emit(trace_kind::reasoning, 1, { { "text", "y" } });
        b->emit(trace_kind::reasoning, 1, { { "text", "z" } });
        CHECK(factory.records("a").size() == 1);
        CHECK(factory.records("b").size() == 2);
        CHECK(factory.records("missing").empty());
        CHECK(factory.task_ids() == std::vector<std::string> { "a", "b" });
    }

    TEST_CASE("memory sink accepts concurrent writers")
    {
        auto sink = std::make_shared<MemorySink>();
        std::vector<std::thread> threads;
        for (int t = 0; t < 4; ++t)
            threads.emplace_back([&, t] {
                TraceLog log("t" + std::to_string(t), sink, fixed_clock(0));
                for (int i = 0; i < 250; ++i)
                    log.emit(trace_kind::reasoning, 1, { { "text", "x" } });
            });
        for (auto& t: threads)
            t.join();
        CHECK(sink->records().size() == 1000);
    }

    TEST_CASE("rendering shows attempts and verdicts")
    {
        std::istringstream in(jsonl(sample_records()));
        auto const r = render_trace(in);
        CHECK(r.events == 8);
        CHECK(r.corrupt_lines == 0);
        CHECK(r.text.find("== attempt 1 ==") != std::string::npos);
        CHECK(r.text.find("== attempt 2 ==") != std::string::npos);
        CHECK(r.text.find("context (experience v3, 1 lessons: Total Constraint Compliance)") != std::string::npos);
        CHECK(r.text.find("help #1: check the building") != std::string::npos);
        CHECK(r.text.find("routed: web_search(q)") != std::string::npos);
        CHECK(r.text.find("knowledge [1 sources]: fact [R1]") != std::string::npos);
        CHECK(r.text.find("self-reflection: UNCERTAIN") != std::string::npos);
        CHECK(r.text.find("self-reflection: CONFIDENT") != std::string::npos);
        CHECK(r.text.ends_with("8 events\n"));
    }

    TEST_CASE("rendering filters by attempt and kind")
    {
        std::istringstream by_attempt(jsonl(sample_records()));
        auto const second = render_trace(by_attempt, { 2, std::nullopt });
        CHECK(second.events == 2);
        CHECK(second.text.find("== attempt 1 ==") == std::string::npos);

        std::istringstream by_kind(jsonl(sample_records()));
        auto const answers = render_trace(by_kind, { std::nullopt, std::string(trace_kind::final_answer) });
        CHECK(answers.events == 2);
        CHECK(answers.text.find("answer: Copper") != std::string::npos);
    }

    TEST_CASE("corrupt and empty input")
    {
        std::istringstream corrupt(jsonl(sample_records()) + "{broken\n[1,2]\n\n");
        auto const r = render_trace(corrupt);
        CHECK(r.events == 8);
        CHECK(r.corrupt_lines == 2);
        CHECK(r.text.find("[corrupt line 9]") != std::string::npos);

        std::istringstream empty("");
        CHECK(render_trace(empty).text == "0 events\n");
    }
}
