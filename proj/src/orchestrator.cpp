// SPDX-License-Identifier: Apache-2.0
#include <kestrel/errors.hpp>
#include <kestrel/orchestrator.hpp>
#include <kestrel/text.hpp>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <set>

namespace kestrel
{

std::string_view to_string(SolveStatus status)
{
    switch (status)
    {
        case SolveStatus::answered: return "answered";
        case SolveStatus::budget_exhausted: return "budget_exhausted";
        case SolveStatus::provider_error: return "provider_error";
    }
    return "provider_error";
}

void to_json(json& j, SolveReport const& v)
{
    json reflections = json::array();
    for (auto const& r: v.self_reflections)
        reflections.push_back({ { "verdict", to_string(r.verdict) }, { "critique", r.critique }, { "parser_note", r.parser_note } });
    j = json { { "task_id", v.task_id },
               { "final_answer", v.final_answer ? json(*v.final_answer) : json(nullptr) },
               { "attempts", v.attempts },
               { "trajectories", v.trajectories },
               { "help_requests_used", v.help_requests_used },
               { "total_help_requests", v.total_help_requests },
               { "status", to_string(v.status) },
               { "reason", v.reason },
               { "self_reflections", std::move(reflections) },
               { "fetched_record_ids", v.fetched_record_ids },
               { "tool_calls", v.tool_calls },
               { "direct_tool_calls", v.direct_tool_calls } };
}

Orchestrator::Orchestrator(RunConfig config, AgentServices services):
    _config(std::move(config)), _services(std::move(services))
{
    _config.validate();
    _config = _config.effective();
    if (!_services.agent)
        throw ConfigError("orchestrator needs an agent provider");
    if (!_services.router)
        throw ConfigError("orchestrator needs a tool router");
    if ((_config.ablation.self_reflection || _config.ablation.verified_reflection) && !_services.reflector)
        throw ConfigError("reflection is enabled but no reflector is configured");
    if (_config.ablation.in_house_tool && !_services.kb)
        throw ConfigError("the in-house tool is enabled but no knowledge base is configured");
    if (!_services.clock)
        _services.clock = system_clock();
}

ContextOptions Orchestrator::context_options(bool use_experience) const
{
    ContextOptions options;
    options.include_experience = use_experience && !_config.ablation.minimal_only;
    if (!_config.ablation.router)
        options.direct_tools = _services.router->registry().descriptions();
    return options;
}

namespace
{
    json context_record(PromptContext const& context)
    {
        json lessons = json::array();
        for (auto const& lesson: context.rendered_lessons)
            lessons.push_back({ { "title", lesson.title }, { "derived_from", lesson.derived_from } });
        return json { { "experience_version", context.experience_version },
                      { "lessons", std::move(lessons) },
                      { "experience_block", context.experience_block },
                      { "self_reflection_block", context.self_reflection_block ? json(*context.self_reflection_block) : json(nullptr) } };
    }

    Knowledge merge_outcome(RoutingOutcome const& outcome)
    {
        Knowledge merged;
        std::vector<std::string> texts;
        for (auto const& k: outcome.distilled)
        {
            if (k.distilled_text.empty())
                continue;
            texts.push_back(k.distilled_text);
            for (auto const& id: k.provenance)
                if (std::find(merged.provenance.begin(), merged.provenance.end(), id) == merged.provenance.end())
                    merged.provenance.push_back(id);
        }
        merged.distilled_text = text::join(texts, "\n\n");
        if (merged.distilled_text.empty())
            merged.provenance.clear();
        merged.note = outcome.note;
        if (merged.distilled_text.empty() && merged.note.empty())
            merged.note = "no results";
        return merged;
    }

    void emit(TraceLog* trace, char const* kind, int attempt, json data)
    {
        if (trace != nullptr)
            trace->emit(kind, attempt, std::move(data));
    }
} // namespace

SolveReport Orchestrator::solve_task(Task const& task, ExperienceState const& experience, TraceLog* trace)
{
    AttemptOptions options;
    options.max_help = _config.max_help_requests;
    options.reflect = _config.ablation.self_reflection;
    options.use_experience = true;
    options.max_attempts = options.reflect ? 1 + _config.max_retries : 1;
    return run(task, experience, options, trace);
}

SolveReport Orchestrator::simulate(Task const& task, TraceLog* trace)
{
    AttemptOptions options;
    options.max_help = _config.warmup_max_help_requests > 0 ? _config.warmup_max_help_requests : _config.max_help_requests;
    options.reflect = false;
    options.use_experience = _config.warmup_uses_experience;
    options.max_attempts = 1;
    return run(task, ExperienceState {}, options, trace);
}

SolveReport Orchestrator::run(Task const& task, ExperienceState const& experience, AttemptOptions const& options, TraceLog* trace)
{
    task.validate();
    experience.validate(static_cast<std::size_t>(_config.lesson_body_cap));

    SolveReport report;
    report.task_id = task.id;
    std::vector<std::string> critiques;
    std::set<std::string> fetched;
    auto const& no_experience = ExperienceState {};

    for (int attempt = 1; attempt <= options.max_attempts; ++attempt)
    {
        Trajectory trajectory { task.id, {}, attempt };
        int help_used = 0;
        int idle_rounds = 0;
        bool provider_failed = false;
        std::string stop_reason;
        PromptContext context;

        while (true)
        {
            context = build_context(task,
                                    options.use_experience ? experience : no_experience,
                                    critiques,
                                    trajectory,
                                    context_options(options.use_experience));
            emit(trace, trace_kind::context, attempt, context_record(context));

            std::string output;
            try
            {
                output = _services.agent->complete(to_request(context));
            }
            catch (ProviderError const& e)
            {
                provider_failed = true;
                stop_reason = fmt::format("agent provider failed: {}", e.what());
                break;
            }

            auto segment = parse_segment(output);
            if (!segment.reasoning.empty())
            {
                emit(trace, trace_kind::reasoning, attempt, { { "text", segment.reasoning } });
                trajectory.events.emplace_back(Reasoning { std::move(segment.reasoning) });
            }

            if (segment.kind == ActionKind::answer)
            {
                emit(trace, trace_kind::final_answer, attempt, { { "text", segment.payload } });
                trajectory.events.emplace_back(FinalAnswer { std::move(segment.payload) });
                break;
            }
            if (segment.kind == ActionKind::none)
            {
                if (++idle_rounds >= _config.max_no_action_rounds)
                {
                    stop_reason = fmt::format("no help request or answer in {} consecutive turns", idle_rounds);
                    break;
                }
                continue;
            }

            idle_rounds = 0;
            if (help_used >= options.max_help)
            {
                stop_reason = fmt::format("help budget of {} requests exhausted", options.max_help);
                break;
            }
            ++help_used;

            HelpRequest help { segment.payload, help_used, std::nullopt };
            if (segment.kind == ActionKind::tool_call)
                help.direct_tool = segment.tool_name;
            json help_record { { "text", help.text }, { "seq_index", help.seq_index } };
            if (help.direct_tool)
                help_record["direct_tool"] = *help.direct_tool;
            emit(trace, trace_kind::help_request, attempt, std::move(help_record));
            trajectory.events.emplace_back(help);

            CallContext call_context { task.id, help.seq_index, _services.clock };
            RoutingOutcome outcome;
            if (help.direct_tool)
            {
                outcome = _services.router->direct(ToolCall { *help.direct_tool, help.text, help.seq_index }, call_context);
                ++report.direct_tool_calls;
            }
            else
                outcome = _services.router->handle(help.text, call_context);

            json raw_ids = json::array();
            for (auto const& record: outcome.raw)
            {
                raw_ids.push_back(record.record_id);
                if (fetched.insert(record.record_id).second)
                    report.fetched_record_ids.push_back(record.record_id);
            }
            for (auto const& call: outcome.calls)
                ++report.tool_calls[call.tool];
            emit(trace,
                 trace_kind::routing,
                 attempt,
                 { { "calls", outcome.calls }, { "raw_record_ids", std::move(raw_ids) }, { "note", outcome.note }, { "failed_calls", outcome.failed_calls } });

            if (_services.kb && !outcome.raw.empty())
                _services.kb->ingest(outcome.raw);

            auto knowledge = merge_outcome(outcome);
            emit(trace,
                 trace_kind::knowledge,
                 attempt,
                 { { "distilled_text", knowledge.distilled_text }, { "provenance", knowledge.provenance }, { "note", knowledge.note } });
            trajectory.events.emplace_back(std::move(knowledge));
        }

        if (auto violation = check_trajectory(trajectory))
            throw InvariantError(fmt::format("task {} attempt {} produced an illegal trajectory: {}", task.id, attempt, *violation));

        report.trajectories.push_back(trajectory);
        report.attempts = attempt;
        report.help_requests_used = help_used;
        report.total_help_requests += help_used;

        auto const answer = trajectory.final_answer();
        if (provider_failed || !answer)
        {
            report.status = provider_failed ? SolveStatus::provider_error : SolveStatus::budget_exhausted;
            report.reason = stop_reason;
            break;
        }
        report.final_answer = answer;
        report.status = SolveStatus::answered;
        report.reason.clear();

        if (!options.reflect || attempt == options.max_attempts)
            break;

        SelfReflection reflection;
        try
        {
            reflection = _services.reflector->self_reflect(context, trajectory);
        }
        catch (ProviderError const& e)
        {
            spdlog::warn("self reflection for task {} failed, keeping the answer: {}", task.id, e.what());
            break;
        }
        emit(trace,
             trace_kind::self_reflection,
             attempt,
             { { "verdict", to_string(reflection.verdict) }, { "critique", reflection.critique }, { "parser_note", reflection.parser_note } });
        report.self_reflections.push_back(reflection);
        if (reflection.verdict == Confidence::confident)
            break;
        critiques.push_back(reflection.critique);
    }

    emit(trace,
         trace_kind::status,
         report.attempts,
         { { "status", to_string(report.status) },
           { "final_answer", report.final_answer.value_or("") },
           { "attempts", report.attempts },
           { "help_requests_used", report.help_requests_used },
           { "reason", report.reason } });
    return report;
}

BatchResult Orchestrator::run_batch(std::vector<Task> const& tasks, ExperienceState initial, TraceFactory* traces)
{
    validate_batch(tasks);
    initial.validate(static_cast<std::size_t>(_config.lesson_body_cap));

    BatchResult result;
    if (_config.ablation.in_house_tool)
    {
        if (_config.warmup_passes > 0)
            result.warmup = warm_up(tasks, _config.warmup_passes, *this);
        else
        {
            spdlog::warn("warm-up skipped; kb_retrieve starts with the current store ({} records)", _services.kb->size());
            register_kb_retrieve(*_services.router, _services.kb, _config.retrieval_top_k);
        }
    }

    auto experience = std::move(initial);
    result.experience_history.push_back(experience);
    for (auto const& task: tasks)
    {
        std::unique_ptr<TraceLog> trace = traces != nullptr ? traces->open(task.id) : nullptr;
        TaskOutcome outcome;
        outcome.experience_version = experience.version;
        try
        {
            outcome.report = solve_task(task, experience, trace.get());
        }
        catch (InvariantError const&)
        {
            throw;
        }
        catch (Error const& e)
        {
            spdlog::error("task {} failed: {}", task.id, e.what());
            outcome.report.task_id = task.id;
            outcome.report.status = SolveStatus::provider_error;
            outcome.report.reason = e.what();
        }

        if (task.gold_answer)
        {
            outcome.verdict = outcome.report.final_answer
                                  ? grade(*outcome.report.final_answer, *task.gold_answer, _services.grade_method, _services.judge.get())
                                  : Verdict { false, _services.grade_method };
        }

        bool const reflect = _config.ablation.verified_reflection && task.gold_answer
                             && (_config.reflect_on_correct || !outcome.verdict->correct);
        if (reflect)
        {
            auto const trajectory = outcome.report.trajectories.empty() ? Trajectory { task.id, {}, 1 }
                                                                        : outcome.report.trajectories.back();
            auto const context = build_context(task, experience, {}, Trajectory { task.id, {}, 1 }, context_options(true));
            auto next = _services.reflector->verified_reflect(context, trajectory, *task.gold_answer, experience, task.id);
            json lessons = json::array();
            for (auto const& lesson: next.lessons)
                lessons.push_back({ { "title", lesson.title }, { "derived_from", lesson.derived_from } });
            if (trace)
                trace->emit(trace_kind::verified_reflection,
                            outcome.report.attempts,
                            { { "from_version", experience.version },
                              { "to_version", next.version },
                              { "correct", outcome.verdict->correct },
                              { "lessons", std::move(lessons) } });
            if (next.version != experience.version)
                result.experience_history.push_back(next);
            experience = std::move(next);
        }
        result.outcomes.push_back(std::move(outcome));
    }
    result.final_experience = std::move(experience);
    return result;
}

} // namespace kestrel
