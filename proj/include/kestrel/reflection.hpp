// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <kestrel/context.hpp>
#include <kestrel/core_types.hpp>
#include <kestrel/provider.hpp>

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace kestrel
{

enum class Confidence
{
    confident,
    uncertain,
};

std::string_view to_string(Confidence confidence);

struct SelfReflection
{
    std::string critique;
    Confidence verdict = Confidence::uncertain;
    /// Set when the verdict line was missing or malformed.
    std::string parser_note;
};

enum class GradeMethod
{
    exact_match,
    llm_equivalence,
};

std::string_view to_string(GradeMethod method);
/// Throws ConfigError for unknown names.
GradeMethod grade_method_from_string(std::string_view name);

struct Verdict
{
    bool correct = false;
    GradeMethod method = GradeMethod::exact_match;
};

/// Lowercase, collapse whitespace, trim, strip surrounding punctuation, drop a leading article
/// and drop thousands separators from pure numbers.
std::string normalize_answer(std::string_view answer);

/// Throws PreconditionError for empty inputs and ConfigError when llm_equivalence is requested
/// without a live judge.
Verdict grade(std::string const& predicted, std::string const& gold, GradeMethod method, ChatProvider* judge = nullptr);

/// Parses the reflector reply: the last non-empty line must be exactly "VERDICT: CONFIDENT" or
/// "VERDICT: UNCERTAIN" (surrounding whitespace allowed). Anything else is UNCERTAIN with a note.
SelfReflection parse_self_reflection(std::string_view reply);

struct LessonDraft
{
    std::string title;
    std::string body;
};

/// Lines of the form "LESSON: <title> :: <body>"; other lines are ignored.
std::vector<LessonDraft> parse_lessons(std::string_view reply);

/// Folds drafts into `prior` as version prior.version + 1. A draft whose title matches an existing
/// lesson (case-insensitive) reinforces it; others are appended. Bodies are cut to `body_cap`
/// characters. Over `lesson_cap`, the least recently reinforced lessons go first, oldest first on ties.
ExperienceState merge_lessons(ExperienceState const& prior,
                              std::vector<LessonDraft> const& drafts,
                              std::string const& task_id,
                              std::size_t lesson_cap,
                              std::size_t body_cap);

class Reflector
{
  public:
    Reflector(std::shared_ptr<ChatProvider> provider, std::size_t lesson_cap, std::size_t body_cap);

    /// Throws PreconditionError when the trajectory has no final answer; provider errors propagate.
    SelfReflection self_reflect(PromptContext const& context, Trajectory const& trajectory);

    /// Never throws for provider failures: the prior state comes back unchanged with a warning.
    /// Throws PreconditionError for an empty gold answer or an invalid prior.
    ExperienceState verified_reflect(PromptContext const& context,
                                     Trajectory const& trajectory,
                                     std::string const& gold,
                                     ExperienceState const& prior,
                                     std::string const& task_id);

  private:
    std::shared_ptr<ChatProvider> _provider;
    std::size_t _lesson_cap;
    std::size_t _body_cap;
};

/// Experience snapshots, one per version, as {"snapshots": [...]}.
void save_experience_history(std::filesystem::path const& path, std::vector<ExperienceState> const& snapshots);
std::vector<ExperienceState> load_experience_history(std::filesystem::path const& path);

} // namespace kestrel
