// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <kestrel/text.hpp>

#include <fstream>

using namespace kestrel;
using testing::FunctionProvider;
using testing::Gen;
using testing::make_task;
using testing::TempDir;

namespace
{
class LiveJudge final: public ChatProvider
{
  public:
    explicit LiveJudge(std::string reply): _reply(std::move(reply)) {}
    std::string complete(ChatRequest const& request) override
    {
        last_user = request.messages.back().content;
        return _reply;
    }
    [[nodiscard]] bool is_live() const override { return true; }
    std::string last_user;

  private:
    std::string _reply;
};

Trajectory answered(std::string const& answer, int attempt = 1)
{
    return Trajectory { "t1", { Reasoning { "r" }, HelpRequest { "h", 1, {} }, Knowledge { "k [R1]", { "id" }, "" }, FinalAnswer { answer } }, attempt };
}

PromptContext context_for(Task const& task)
{
    return build_context(task, {}, {}, Trajectory { task.id, {}, 1 });
}

bool is_utf8_prefix(std::string const& s)
{
    // A cut mid code point would leave a lead byte without its continuation bytes.
    std::size_t i = 0;
    while (i < s.size())
    {
        auto const c = static_cast<unsigned char>(s[i]);
        std::size_t const len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : 4;
        if (i + len > s.size())
            return false;
        i += len;
    }
    return true;
}
} // namespace

TEST_SUITE("reflection")
{
    TEST_CASE("answer normalization")
    {
        CHECK(normalize_answer("  The   Copper. ") == "copper");
        CHECK(normalize_answer("\"An Apple\"") == "apple");
        CHECK(normalize_answer("1,234,567") == "1234567");
        CHECK(normalize_answer("1,2") == "1,2");
        CHECK(normalize_answer("a") == "a");
        CHECK(normalize_answer("Silver-Gray") == "silver-gray");
    }

    TEST_CASE("exact match grading")
    {
        CHECK(grade("copper", "Copper", GradeMethod::exact_match).correct);
        CHECK_FALSE(grade("silver-gray with dark blue accents", "Copper", GradeMethod::exact_match).correct);
        CHECK_THROWS_AS(grade("", "Copper", GradeMethod::exact_match), PreconditionError);
        CHECK_THROWS_AS(grade("x", " ", GradeMethod::exact_match), PreconditionError);
    }

    TEST_CASE("normalization is idempotent and grading reflexive")
    {
        Gen g(12);
        std::string_view const alphabet = "abcXYZ ,.!'\"-019\t";
        for (int i = 0; i < 2000; ++i)
        {
            auto const s = g.text(30, alphabet);
            CHECK(normalize_answer(normalize_answer(s)) == normalize_answer(s));
            if (!text::trim(s).empty())
                CHECK(grade(s, s, GradeMethod::exact_match).correct);
        }
    }

    TEST_CASE("equivalence grading needs a live judge")
    {
        auto offline = std::make_shared<FunctionProvider>([](ChatRequest const&) { return "yes"; });
        CHECK_THROWS_AS(grade("a", "b", GradeMethod::llm_equivalence), ConfigError);
        CHECK_THROWS_AS(grade("a", "b", GradeMethod::llm_equivalence, offline.get()), ConfigError);
        LiveJudge yes("Yes.");
        auto const v = grade("copper cladding", "Copper", GradeMethod::llm_equivalence, &yes);
        CHECK(v.correct);
        CHECK(v.method == GradeMethod::llm_equivalence);
        CHECK(yes.last_user.find("Gold answer: Copper") != std::string::npos);
        LiveJudge no("no");
        CHECK_FALSE(grade("copper", "Copper", GradeMethod::llm_equivalence, &no).correct);
        CHECK(grade_method_from_string("exact_match") == GradeMethod::exact_match);
        CHECK_THROWS_AS(grade_method_from_string("fuzzy"), ConfigError);
    }

    TEST_CASE("self reflection verdict parsing")
    {
        auto const uncertain = parse_self_reflection("ignores the explicit site size constraint\nVERDICT: UNCERTAIN\n");
        CHECK(uncertain.verdict == Confidence::uncertain);
        CHECK(uncertain.critique == "ignores the explicit site size constraint");
        CHECK(uncertain.parser_note.empty());

        auto const confident = parse_self_reflection("All constraints are met\n  VERDICT: CONFIDENT  \n\n");
        CHECK(confident.verdict == Confidence::confident);

        for (auto const* malformed: { "Looks right. VERDICT: CONFIDENT", "VERDICT: confident", "VERDICT: CONFIDENT\nbut wait", "" })
        {
            auto const r = parse_self_reflection(malformed);
            CHECK(r.verdict == Confidence::uncertain);
            CHECK_FALSE(r.parser_note.empty());
            CHECK_FALSE(r.critique.empty());
        }
    }

    TEST_CASE("lesson parsing")
    {
        auto const drafts = parse_lessons("intro\nLESSON: Keep Runner-Up Candidates :: Record alternatives.\n"
                                          "LESSON: missing separator\n  LESSON:  Title  ::  Body with :: inside \n");
        REQUIRE(drafts.size() == 2);
        CHECK(drafts[0].title == "Keep Runner-Up Candidates");
        CHECK(drafts[0].body == "Record alternatives.");
        CHECK(drafts[1].title == "Title");
        CHECK(drafts[1].body == "Body with :: inside");
        CHECK(parse_lessons("no lessons here").empty());
    }

    TEST_CASE("merging reinforces, appends and evicts")
    {
        ExperienceState prior;
        prior.version = 3;
        prior.lessons = { { "Total Constraint Compliance", "old", { "p1" }, 1 },
                          { "Search With Combined Filters", "b", { "p2" }, 2 },
                          { "Read Figurative Clues In Context", "c", { "p3" }, 3 } };
        auto const next = merge_lessons(prior,
                                        { { "total constraint compliance", "new body" }, { "Keep Runner-Up Candidates", "keep them" } },
                                        "case",
                                        10,
                                        500);
        CHECK(next.version == 4);
        REQUIRE(next.lessons.size() == 4);
        CHECK(next.lessons[0].title == "Total Constraint Compliance");
        CHECK(next.lessons[0].body == "new body");
        CHECK(next.lessons[0].last_reinforced == 4);
        CHECK(next.lessons[0].derived_from == std::vector<std::string> { "p1", "case" });
        CHECK(next.lessons[3].title == "Keep Runner-Up Candidates");
        CHECK_NOTHROW(next.validate(500));

        auto const capped = merge_lessons(prior, { { "Fresh", "f" } }, "case", 2, 500);
        REQUIRE(capped.lessons.size() == 2);
        CHECK(capped.lessons[0].title == "Read Figurative Clues In Context");
        CHECK(capped.lessons[1].title == "Fresh");

        auto const empty = merge_lessons(prior, {}, "case", 10, 500);
        CHECK(empty.version == 4);
        CHECK(json(empty.lessons) == json(prior.lessons));
        CHECK_THROWS_AS(merge_lessons(prior, {}, "case", 0, 500), PreconditionError);
    }

    TEST_CASE("merged experience stays within its caps")
    {
        Gen g(31);
        std::vector<std::string> const code_points { "a", "b", "c", " ", "é", "€", "𝄞" };
        for (int i = 0; i < 300; ++i)
        {
            auto const lesson_cap = static_cast<std::size_t>(g.integer(1, 6));
            auto const body_cap = static_cast<std::size_t>(g.integer(1, 40));
            ExperienceState state;
            for (int round = 0; round < 6; ++round)
            {
                std::vector<LessonDraft> drafts;
                for (int d = g.integer(0, 4); d > 0; --d)
                {
                    std::string body;
                    for (int n = g.integer(0, 30); n > 0; --n)
                        body += g.pick(code_points);
                    drafts.push_back({ "L" + std::to_string(g.integer(0, 9)), body });
                }
                auto const next = merge_lessons(state, drafts, "task" + std::to_string(round), lesson_cap, body_cap);
                CHECK(next.version == state.version + 1);
                CHECK(next.lessons.size() <= lesson_cap);
                REQUIRE_NOTHROW(next.validate(body_cap));
                for (auto const& l: next.lessons)
                {
                    CHECK(l.body.size() <= body_cap);
                    CHECK(is_utf8_prefix(l.body));
                }
                state = next;
            }
        }
    }

    TEST_CASE("eviction keeps the most recently reinforced lessons")
    {
        Gen g(8);
        for (int i = 0; i < 300; ++i)
        {
            ExperienceState prior;
            prior.version = 10;
            for (int l = 0; l < 6; ++l)
                prior.lessons.push_back({ "P" + std::to_string(l), "b", { "x" }, g.integer(1, 10) });
            auto const cap = static_cast<std::size_t>(g.integer(1, 6));
            auto const next = merge_lessons(prior, { { "New", "n" } }, "t", cap, 100);
            std::set<std::string> kept;
            for (auto const& l: next.lessons)
                kept.insert(l.title);
            CHECK(kept.contains("New"));
            int min_kept = 11;
            int max_dropped = 0;
            for (auto const& l: prior.lessons)
            {
                if (kept.contains(l.title))
                    min_kept = std::min(min_kept, l.last_reinforced);
                else
                    max_dropped = std::max(max_dropped, l.last_reinforced);
            }
            CHECK(max_dropped <= min_kept);
        }
    }

    TEST_CASE("reflector prompts and provider failures")
    {
        auto const task = make_task("t1", "Which colour?", "Copper");
        auto const ctx = context_for(task);
        std::string reply = "All constraints are met\nVERDICT: CONFIDENT";
        bool fail = false;
        auto model = std::make_shared<FunctionProvider>([&](ChatRequest const&) -> std::string {
            if (fail)
                throw ProviderError("down", true);
            return reply;
        });
        Reflector reflector(model, 10, 200);

        auto const self = reflector.self_reflect(ctx, answered("Copper", 2));
        CHECK(self.verdict == Confidence::confident);
        auto const& user = model->requests.back().messages.back().content;
        CHECK(user.find("Attempt 2:") != std::string::npos);
        CHECK(user.find("Reference answer") == std::string::npos); // no gold before grading
        CHECK(user.find("Copper") != std::string::npos);
        CHECK_THROWS_AS(reflector.self_reflect(ctx, Trajectory { "t1", { Reasoning { "r" } }, 1 }), PreconditionError);

        ExperienceState prior;
        reply = "LESSON: Keep Runner-Up Candidates :: Record alternatives.";
        auto const next = reflector.verified_reflect(ctx, answered("Copper"), "Copper", prior, "t1");
        CHECK(next.version == 1);
        CHECK(model->requests.back().messages.back().content.find("Reference answer: Copper") != std::string::npos);

        fail = true;
        CHECK_THROWS_AS(reflector.self_reflect(ctx, answered("Copper")), ProviderError);
        auto const unchanged = reflector.verified_reflect(ctx, answered("Copper"), "Copper", next, "t1");
        CHECK(json(unchanged) == json(next));
        CHECK_THROWS_AS(reflector.verified_reflect(ctx, answered("Copper"), " ", prior, "t1"), PreconditionError);
        CHECK_THROWS_AS(Reflector(nullptr, 1, 1), PreconditionError);
    }

    TEST_CASE("experience history round-trips")
    {
        TempDir dir;
        ExperienceState v1;
        v1.version = 1;
        v1.lessons = { { "A", "b", { "t" }, 1 } };
        save_experience_history(dir / "experience.json", { ExperienceState {}, v1 });
        auto const loaded = load_experience_history(dir / "experience.json");
        REQUIRE(loaded.size() == 2);
        CHECK(json(loaded[1]) == json(v1));
        CHECK_THROWS_AS(load_experience_history(dir / "missing.json"), LoadError);
        std::ofstream(dir / "bad.json") << "{\"snapshots\": 3}";
        CHECK_THROWS_AS(load_experience_history(dir / "bad.json"), LoadError);
    }
}
