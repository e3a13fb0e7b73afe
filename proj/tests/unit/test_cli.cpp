// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <kestrel/cli.hpp>
#include <kestrel/synthetic_world.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace kestrel;
using testing::TempDir;

namespace
{
struct CliResult
{
    int code = -1;
    std::string out;
    std::string err;
};

CliResult cli(std::vector<std::string> args)
{
    args.insert(args.begin(), "kestrel");
    std::vector<char const*> argv;
    for (auto const& a: args)
        argv.push_back(a.c_str());
    std::ostringstream out;
    std::ostringstream err;
    CliResult result;
    result.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    result.out = out.str();
    result.err = err.str();
    return result;
}

std::string slurp(std::filesystem::path const& path)
{
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::filesystem::path> files_in(std::filesystem::path const& dir)
{
    std::vector<std::filesystem::path> out;
    for (auto const& entry: std::filesystem::directory_iterator(dir))
        out.push_back(entry.path());
    std::sort(out.begin(), out.end());
    return out;
}
} // namespace

TEST_SUITE("cli")
{
    TEST_CASE("run writes the report, traces and experience history")
    {
        TempDir dir;
        auto const r = cli({ "run", "--n-tasks", "4", "--out", (dir / "out").string() });
        CHECK(r.code == exit_ok);
        CHECK(r.out.find("accuracy  4/4") != std::string::npos);
        auto const report = json::parse(slurp(dir / "out" / "report.json"));
        CHECK(report["correct"] == 4);
        CHECK(report["per_task"].size() == 4);
        CHECK(slurp(dir / "out" / "report.txt").starts_with("benchmark synthetic"));
        CHECK(files_in(dir / "out" / "traces").size() == 4);
        CHECK(std::filesystem::exists(dir / "out" / "experience.json"));
        for (auto const& trace: files_in(dir / "out" / "traces"))
            CHECK(slurp(trace).find("api_key") == std::string::npos);
    }

    TEST_CASE("a run that answers nothing exits with a runtime failure")
    {
        TempDir dir;
        auto const wrong = cli({ "run", "--minimal-only", "--n-tasks", "3", "--out", (dir / "a").string() });
        CHECK(wrong.code == exit_ok);
        CHECK(json::parse(slurp(dir / "a" / "report.json"))["correct"] == 0);

        auto const none = cli({ "run", "--minimal-only", "--max-help-requests", "1", "--n-tasks", "3", "--out", (dir / "b").string() });
        CHECK(none.code == exit_runtime_failure);
        CHECK(json::parse(slurp(dir / "b" / "report.json"))["answered"] == 0);
    }

    TEST_CASE("configuration errors exit with code 2")
    {
        TempDir dir;
        auto const out = dir.path().string();
        CHECK(cli({}).code == exit_config_error);
        CHECK(cli({ "frobnicate" }).code == exit_config_error);
        CHECK(cli({ "run", "--benchmark", "gaia-full", "--out", out }).code == exit_config_error);
        CHECK(cli({ "run", "--max-help-requests", "0", "--out", out }).code == exit_config_error);
        CHECK(cli({ "run", "--chunk-size", "10", "--chunk-overlap", "10", "--out", out }).code == exit_config_error);
        CHECK(cli({ "run", "--grade-method", "vibes", "--out", out }).code == exit_config_error);
        CHECK(cli({ "gen-world", "--depth-min", "0", "--depth-max", "0", "--out", out }).code == exit_config_error);
        CHECK(cli({ "run", "--benchmark", "fixture", "--tasks", (dir / "none.json").string(), "--out", out }).code == exit_config_error);

        std::ofstream(dir / "bad.toml") << "max_help = 3\n";
        auto const bad = cli({ "run", "--config", (dir / "bad.toml").string(), "--out", out });
        CHECK(bad.code == exit_config_error);
        CHECK(bad.err.find("max_help") != std::string::npos);

        std::ofstream(dir / "secret.toml") << "[endpoints]\napi_key = \"sk-live-123\"\n";
        auto const secret = cli({ "run", "--config", (dir / "secret.toml").string(), "--out", out });
        CHECK(secret.code == exit_config_error);
        CHECK(secret.err.find("sk-live-123") == std::string::npos);
    }

    TEST_CASE("fixture mode needs both files on disk")
    {
        TempDir dir;
        CHECK(cli({ "gen-world", "--n-tasks", "3", "--out", dir.path().string() }).code == exit_ok);
        auto const tasks = (dir / "tasks.json").string();
        CHECK(cli({ "run", "--benchmark", "fixture", "--tasks", tasks, "--out", (dir / "a").string() }).code == exit_config_error);
        auto const ok = cli({ "run",
                              "--benchmark",
                              "fixture",
                              "--tasks",
                              tasks,
                              "--corpus",
                              (dir / "corpus.json").string(),
                              "--out",
                              (dir / "b").string() });
        CHECK(ok.code == exit_ok);
        CHECK(ok.out.find("accuracy  3/3") != std::string::npos);
    }

    TEST_CASE("live mode without endpoints is a configuration error")
    {
        TempDir dir;
        for (auto const* name: { "KESTREL_CHAT_URL", "KESTREL_CHAT_MODEL", "KESTREL_CHAT_API_KEY" })
            ::unsetenv(name);
        std::ofstream(dir / "tasks.json") << R"([{"id": "t", "query": "q"}])";
        auto const r = cli({ "run", "--live", "--tasks", (dir / "tasks.json").string(), "--out", (dir / "o").string() });
        CHECK(r.code == exit_config_error);
        CHECK(r.err.find("KESTREL_CHAT") != std::string::npos);
        CHECK(cli({ "grade", "--answer", "a", "--gold", "a", "--method", "llm_equivalence" }).code == exit_config_error);
    }

    TEST_CASE("gen-world is deterministic")
    {
        TempDir a;
        TempDir b;
        CHECK(cli({ "gen-world", "--seed", "5", "--out", a.path().string() }).code == exit_ok);
        CHECK(cli({ "gen-world", "--seed", "5", "--out", b.path().string() }).code == exit_ok);
        CHECK(slurp(a / "corpus.json") == slurp(b / "corpus.json"));
        CHECK(slurp(a / "tasks.json") == slurp(b / "tasks.json"));
        CHECK(load_tasks(a / "tasks.json").size() == 20);
    }

    TEST_CASE("trace rendering with filters")
    {
        TempDir dir;
        REQUIRE(cli({ "run", "--benchmark", "case-replay", "--out", dir.path().string() }).code == exit_ok);
        auto const traces = files_in(dir / "traces");
        REQUIRE(traces.size() == 1);
        auto const path = traces[0].string();

        auto const all = cli({ "trace", path });
        CHECK(all.code == exit_ok);
        CHECK(all.out.find("== attempt 1 ==") != std::string::npos);
        CHECK(all.out.find("== attempt 2 ==") != std::string::npos);
        CHECK(all.out.find("answer: Copper") != std::string::npos);
        CHECK(all.out.find("verified reflection: experience v") != std::string::npos);

        auto const second = cli({ "trace", path, "--attempt", "2" });
        CHECK(second.out.find("== attempt 1 ==") == std::string::npos);
        CHECK(second.out.find("answer: Copper") != std::string::npos);

        auto const answers = cli({ "trace", path, "--kind", "final_answer" });
        CHECK(answers.out.find("answer: silver-gray with dark blue accents") != std::string::npos);
        CHECK(answers.out.find("help #") == std::string::npos);
        CHECK(answers.out.ends_with("2 events\n"));

        CHECK(cli({ "trace", (dir / "missing.jsonl").string() }).code == exit_runtime_failure);
    }

    TEST_CASE("grade answers and reports")
    {
        auto const same = cli({ "grade", "--answer", "The Copper.", "--gold", "copper" });
        CHECK(same.code == exit_ok);
        CHECK(same.out.starts_with("correct"));
        CHECK(cli({ "grade", "--answer", "bronze", "--gold", "copper" }).out.starts_with("wrong"));
        CHECK(cli({ "grade", "--answer", "x" }).code == exit_config_error);

        TempDir dir;
        REQUIRE(cli({ "gen-world", "--n-tasks", "3", "--out", dir.path().string() }).code == exit_ok);
        REQUIRE(cli({ "run", "--n-tasks", "3", "--out", (dir / "run").string() }).code == exit_ok);
        auto const graded = cli({ "grade", "--report", (dir / "run" / "report.json").string(), "--tasks", (dir / "tasks.json").string() });
        CHECK(graded.code == exit_ok);
        CHECK(graded.out.find("accuracy 3/3") != std::string::npos);
        CHECK(cli({ "grade", "--report", (dir / "run" / "report.json").string() }).code == exit_config_error);
    }

    TEST_CASE("warmup and ablate")
    {
        TempDir dir;
        auto const warm = cli({ "warmup", "--n-tasks", "3", "--warmup-passes", "2", "--kb-dir", (dir / "kb").string() });
        CHECK(warm.code == exit_ok);
        CHECK(warm.out.find("pass 2:") != std::string::npos);
        CHECK(warm.out.find("kb_retrieve registered: yes") != std::string::npos);
        CHECK(std::filesystem::exists(dir / "kb"));

        auto const ablate = cli({ "ablate", "--n-tasks", "4", "--out", (dir / "ab").string() });
        CHECK(ablate.code == exit_ok);
        auto const runs = json::parse(slurp(dir / "ab" / "ablation.json"));
        CHECK(runs.size() == 6);
        CHECK(runs[0]["variant"] == "full");
        CHECK(slurp(dir / "ab" / "ablation.txt") == ablate.out);
    }
}
