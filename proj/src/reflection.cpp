// SPDX-License-Identifier: Apache-2.0
#include <kestrel/errors.hpp>
#include <kestrel/prompts.hpp>
#include <kestrel/reflection.hpp>
#include <kestrel/text.hpp>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <sstream>

namespace kestrel
{

std::string_view to_string(Confidence confidence)
{
    return confidence == Confidence::confident ? "CONFIDENT" : "UNCERTAIN";
}

std::string_view to_string(GradeMethod method)
{
    return method == GradeMethod::exact_match ? "exact_match" : "llm_equivalence";
}

GradeMethod grade_method_from_string(std::string_view name)
{
    if (name == "exact_match")
        return GradeMethod::exact_match;
    if (name == "llm_equivalence")
        return GradeMethod::llm_equivalence;
    throw ConfigError(fmt::format("unknown grading method '{}'", name));
}

std::string normalize_answer(std::string_view answer)
{
    std::string collapsed;
    for (char c: text::to_lower(answer))
    {
        if (std::isspace(static_cast<unsigned char>(c)))
        {
            if (!collapsed.empty() && collapsed.back() != ' ')
                collapsed.push_back(' ');
        }
        else
            collapsed.push_back(c);
    }
    auto s = text::trim(collapsed);

    auto is_edge = [](char c) { return c == ' ' || std::ispunct(static_cast<unsigned char>(c)) != 0; };
    for (std::string previous; previous != s;)
    {
        previous = s;
        std::size_t begin = 0;
        std::size_t end = s.size();
        while (begin < end && is_edge(s[begin]))
            ++begin;
        while (end > begin && is_edge(s[end - 1]))
            --end;
        s = s.substr(begin, end - begin);
        for (std::string_view article: { "the ", "an ", "a " })
            if (s.starts_with(article) && s.size() > article.size())
            {
                s.erase(0, article.size());
                break;
            }
    }

    static std::regex const grouped_number(R"(^[-+]?\d{1,3}(,\d{3})+(\.\d+)?$)");
    if (std::regex_match(s, grouped_number))
        s.erase(std::remove(s.begin(), s.end(), ','), s.end());
    return s;
}

Verdict grade(std::string const& predicted, std::string const& gold, GradeMethod method, ChatProvider* judge)
{
    if (text::trim(predicted).empty() || text::trim(gold).empty())
        throw PreconditionError("grade needs a non-empty prediction and gold answer");
    if (method == GradeMethod::exact_match)
        return { normalize_answer(predicted) == normalize_answer(gold), method };

    if (judge == nullptr || !judge->is_live())
        throw ConfigError("llm_equivalence grading needs a live chat provider");
    ChatRequest request;
    request.messages.push_back({ Role::system, fmt::format("{}\n{}", prompts::judge_header, prompts::judge_instructions) });
    request.messages.push_back({ Role::user, fmt::format("Gold answer: {}\nPredicted answer: {}", gold, predicted) });
    request.max_output = 8;
    auto const reply = text::to_lower(text::trim(judge->complete(request)));
    return { reply.starts_with("yes"), method };
}

SelfReflection parse_self_reflection(std::string_view reply)
{
    std::vector<std::string> lines;
    std::string line;
    for (char c: reply)
    {
        if (c == '\n')
            lines.push_back(std::exchange(line, {}));
        else
            line.push_back(c);
    }
    lines.push_back(line);
    while (!lines.empty() && text::trim(lines.back()).empty())
        lines.pop_back();

    SelfReflection reflection;
    std::optional<Confidence> verdict;
    if (!lines.empty())
    {
        auto const last = text::trim(lines.back());
        if (last == "VERDICT: CONFIDENT")
            verdict = Confidence::confident;
        else if (last == "VERDICT: UNCERTAIN")
            verdict = Confidence::uncertain;
    }
    if (verdict)
    {
        lines.pop_back();
        reflection.verdict = *verdict;
        reflection.critique = text::trim(text::join(lines, "\n"));
    }
    else
    {
        reflection.verdict = Confidence::uncertain;
        reflection.critique = text::trim(reply);
        reflection.parser_note = "reflector reply has no verdict line; treated as UNCERTAIN";
    }
    if (reflection.verdict == Confidence::uncertain && reflection.critique.empty())
        reflection.critique = "The previous attempt could not be confirmed; re-check every step and constraint.";
    return reflection;
}

std::vector<LessonDraft> parse_lessons(std::string_view reply)
{
    static std::regex const lesson_line(R"(^\s*LESSON:\s*(.+?)\s*::\s*(.+?)\s*$)");
    std::vector<LessonDraft> drafts;
    std::string const input(reply);
    std::istringstream lines(input);
    std::string line;
    std::smatch m;
    while (std::getline(lines, line))
        if (std::regex_match(line, m, lesson_line))
            drafts.push_back({ m[1].str(), m[2].str() });
    return drafts;
}

namespace
{
    /// Cuts at a UTF-8 code point boundary.
    std::string cap_chars(std::string body, std::size_t cap)
    {
        if (body.size() <= cap)
            return body;
        auto cut = cap;
        while (cut > 0 && (static_cast<unsigned char>(body[cut]) & 0xC0) == 0x80)
            --cut;
        body.resize(cut);
        return body;
    }
} // namespace

ExperienceState merge_lessons(ExperienceState const& prior,
                              std::vector<LessonDraft> const& drafts,
                              std::string const& task_id,
                              std::size_t lesson_cap,
                              std::size_t body_cap)
{
    if (lesson_cap < 1)
        throw PreconditionError("lesson cap must be >= 1");
    ExperienceState next = prior;
    next.version = prior.version + 1;

    for (auto const& draft: drafts)
    {
        auto title = text::trim(draft.title);
        auto body = cap_chars(text::trim(draft.body), body_cap);
        if (title.empty() || body.empty())
            continue;
        auto existing = std::find_if(next.lessons.begin(), next.lessons.end(), [&](Lesson const& l) {
            return text::to_lower(l.title) == text::to_lower(title);
        });
        if (existing != next.lessons.end())
        {
            existing->body = std::move(body);
            existing->last_reinforced = next.version;
            if (std::find(existing->derived_from.begin(), existing->derived_from.end(), task_id) == existing->derived_from.end())
                existing->derived_from.push_back(task_id);
            continue;
        }
        next.lessons.push_back(Lesson { std::move(title), std::move(body), { task_id }, next.version });
    }

    while (next.lessons.size() > lesson_cap)
    {
        // min_element keeps the first of equal keys, i.e. the oldest lesson.
        auto victim = std::min_element(next.lessons.begin(), next.lessons.end(), [](Lesson const& a, Lesson const& b) {
            return a.last_reinforced < b.last_reinforced;
        });
        next.lessons.erase(victim);
    }
    return next;
}

Reflector::Reflector(std::shared_ptr<ChatProvider> provider, std::size_t lesson_cap, std::size_t body_cap):
    _provider(std::move(provider)), _lesson_cap(lesson_cap), _body_cap(body_cap)
{
    if (!_provider)
        throw PreconditionError("reflector needs a chat provider");
}

SelfReflection Reflector::self_reflect(PromptContext const& context, Trajectory const& trajectory)
{
    if (!trajectory.final_answer())
        throw PreconditionError("self reflection needs a trajectory with a final answer");

    ChatRequest request;
    request.messages.push_back({ Role::system,
                                 fmt::format("{}\n{}", prompts::self_reflection_header, prompts::self_reflection_instructions) });
    request.messages.push_back({ Role::user,
                                 fmt::format("{}\n\nAttempt {}:\n{}",
                                             context.query_block,
                                             trajectory.attempt,
                                             render_events(trajectory.events)) });
    request.max_output = 1024;
    return parse_self_reflection(_provider->complete(request));
}

ExperienceState Reflector::verified_reflect(PromptContext const& context,
                                            Trajectory const& trajectory,
                                            std::string const& gold,
                                            ExperienceState const& prior,
                                            std::string const& task_id)
{
    if (text::trim(gold).empty())
        throw PreconditionError("verified reflection needs a gold answer");
    prior.validate(_body_cap);

    std::string existing;
    for (auto const& lesson: prior.lessons)
        existing += fmt::format("\n{}: {}", lesson.title, lesson.body);

    ChatRequest request;
    request.messages.push_back({ Role::system,
                                 fmt::format("{}\n{}", prompts::verified_reflection_header, prompts::verified_reflection_instructions) });
    request.messages.push_back({ Role::user,
                                 fmt::format("{}\n\nAttempt:\n{}\n\nFinal answer: {}\nReference answer: {}\n\nExisting lessons:{}",
                                             context.query_block,
                                             render_events(trajectory.events),
                                             trajectory.final_answer().value_or("(none)"),
                                             gold,
                                             existing.empty() ? " (none)" : existing) });
    request.max_output = 1024;

    try
    {
        return merge_lessons(prior, parse_lessons(_provider->complete(request)), task_id, _lesson_cap, _body_cap);
    }
    catch (ProviderError const& e)
    {
        spdlog::warn("verified reflection for task {} failed, experience unchanged: {}", task_id, e.what());
        return prior;
    }
}

void save_experience_history(std::filesystem::path const& path, std::vector<ExperienceState> const& snapshots)
{
    std::ofstream out(path);
    if (!out)
        throw Error(fmt::format("cannot write experience history '{}'", path.string()));
    out << json { { "snapshots", snapshots } }.dump(2) << '\n';
}

std::vector<ExperienceState> load_experience_history(std::filesystem::path const& path)
{
    std::ifstream in(path);
    if (!in)
        throw LoadError(fmt::format("cannot read experience history '{}'", path.string()));
    try
    {
        return json::parse(in).at("snapshots").get<std::vector<ExperienceState>>();
    }
    catch (json::exception const& e)
    {
        throw LoadError(fmt::format("malformed experience history '{}': {}", path.string(), e.what()));
    }
}

} // namespace kestrel
