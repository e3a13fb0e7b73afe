// SPDX-License-Identifier: Apache-2.0
#include <kestrel/core_types.hpp>
#include <kestrel/errors.hpp>

#include <fmt/format.h>
#include <openssl/evp.h>

#include <array>
#include <set>

namespace kestrel
{

Clock system_clock()
{
    return [] {
        using namespace std::chrono;
        return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
    };
}

Clock fixed_clock(Timestamp value)
{
    return [value] { return value; };
}

void Task::validate() const
{
    if (id.empty())
        throw PreconditionError("task id must not be empty");
    if (query.find_first_not_of(" \t\r\n") == std::string::npos)
        throw PreconditionError(fmt::format("task '{}' has an empty query", id));
}

void validate_batch(std::vector<Task> const& tasks)
{
    if (tasks.empty())
        throw PreconditionError("task batch is empty");
    std::set<std::string> seen;
    for (auto const& task: tasks)
    {
        task.validate();
        if (!seen.insert(task.id).second)
            throw PreconditionError(fmt::format("duplicate task id '{}' in batch", task.id));
    }
}

std::optional<std::string> Trajectory::final_answer() const
{
    if (!events.empty())
        if (auto const* answer = std::get_if<FinalAnswer>(&events.back()))
            return answer->text;
    return std::nullopt;
}

int Trajectory::help_request_count() const
{
    return static_cast<int>(std::count_if(events.begin(), events.end(), [](auto const& e) {
        return std::holds_alternative<HelpRequest>(e);
    }));
}

int Trajectory::knowledge_count() const
{
    return static_cast<int>(std::count_if(events.begin(), events.end(), [](auto const& e) {
        return std::holds_alternative<Knowledge>(e);
    }));
}

std::optional<std::string> check_trajectory(Trajectory const& trajectory)
{
    if (trajectory.attempt < 1)
        return fmt::format("attempt {} is below 1", trajectory.attempt);

    int last_seq = 0;
    bool open_help = false; // a HelpRequest not yet answered by Knowledge
    auto const& events = trajectory.events;
    for (std::size_t i = 0; i < events.size(); ++i)
    {
        auto const& event = events[i];
        if (auto const* answer = std::get_if<FinalAnswer>(&event))
        {
            if (answer->text.empty())
                return fmt::format("event {}: final answer is empty", i);
            if (i + 1 != events.size())
                return fmt::format("event {}: final answer is not the last event", i);
        }
        else if (auto const* help = std::get_if<HelpRequest>(&event))
        {
            if (help->seq_index <= last_seq)
                return fmt::format("event {}: help seq_index {} does not increase (previous {})",
                                   i,
                                   help->seq_index,
                                   last_seq);
            last_seq = help->seq_index;
            open_help = true;
        }
        else if (auto const* knowledge = std::get_if<Knowledge>(&event))
        {
            if (!open_help)
                return fmt::format("event {}: knowledge without a preceding help request", i);
            open_help = false;
            if (knowledge->provenance.empty() && !knowledge->distilled_text.empty())
                return fmt::format("event {}: knowledge text without provenance", i);
        }
    }
    return std::nullopt;
}

namespace
{
    std::string sha256_parts(std::initializer_list<std::string_view> parts)
    {
        std::array<unsigned char, EVP_MAX_MD_SIZE> digest {};
        unsigned int length = 0;
        std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
        if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
            throw Error("sha256 digest failed");
        for (auto part: parts)
            if (EVP_DigestUpdate(ctx.get(), part.data(), part.size()) != 1)
                throw Error("sha256 digest failed");
        if (EVP_DigestFinal_ex(ctx.get(), digest.data(), &length) != 1)
            throw Error("sha256 digest failed");

        static constexpr char hex_digits[] = "0123456789abcdef";
        std::string hex;
        hex.reserve(length * 2);
        for (unsigned int i = 0; i < length; ++i)
        {
            hex.push_back(hex_digits[digest[i] >> 4]);
            hex.push_back(hex_digits[digest[i] & 0x0f]);
        }
        return hex;
    }
} // namespace

std::string sha256_hex(std::string_view data)
{
    return sha256_parts({ data });
}

std::string compute_record_id(SourceLocator const& source, std::string_view content)
{
    // Unit separators keep (kind, locator, content) unambiguous.
    std::string const header = fmt::format("{}\x1f{}\x1f", to_string(source.kind), source.locator);
    return sha256_parts({ header, content });
}

RawKnowledgeRecord make_record(
    SourceLocator source, std::string content, std::string task_id, int help_index, Timestamp fetched_at)
{
    RawKnowledgeRecord record;
    record.record_id = compute_record_id(source, content);
    record.source = std::move(source);
    record.content = std::move(content);
    record.fetched_at = fetched_at;
    record.task_id = std::move(task_id);
    record.help_index = help_index;
    return record;
}

void ExperienceState::validate(std::size_t body_cap) const
{
    if (version < 0)
        throw InvariantError("experience version is negative");
    if (version == 0 && !lessons.empty())
        throw InvariantError("experience version 0 must have no lessons");
    for (auto const& lesson: lessons)
    {
        if (lesson.body.size() > body_cap)
            throw InvariantError(fmt::format("lesson '{}' exceeds the body cap of {}", lesson.title, body_cap));
        if (lesson.derived_from.empty())
            throw InvariantError(fmt::format("lesson '{}' has no derived_from entry", lesson.title));
    }
}

void RunConfig::validate() const
{
    if (max_help_requests < 1)
        throw ConfigError("max_help_requests must be >= 1");
    if (max_retries < 0)
        throw ConfigError("max_retries must be >= 0");
    if (max_no_action_rounds < 1)
        throw ConfigError("max_no_action_rounds must be >= 1");
    if (warmup_passes < 0)
        throw ConfigError("warmup_passes must be >= 0");
    if (warmup_max_help_requests < 0)
        throw ConfigError("warmup_max_help_requests must be >= 0");
    if (retrieval_top_k < 1)
        throw ConfigError("retrieval_top_k must be >= 1");
    if (distill_token_budget < 1)
        throw ConfigError("distill_token_budget must be >= 1");
    if (experience_lesson_cap < 1)
        throw ConfigError("experience_lesson_cap must be >= 1");
    if (lesson_body_cap < 1)
        throw ConfigError("lesson_body_cap must be >= 1");
    if (max_calls_per_help < 1)
        throw ConfigError("max_calls_per_help must be >= 1");
    if (search_top_n < 1)
        throw ConfigError("search_top_n must be >= 1");
    if (chunk_size < 1 || chunk_overlap < 0 || chunk_overlap >= chunk_size)
        throw ConfigError("chunk_overlap must be in [0, chunk_size)");
    if (sandbox.wall_time.count() < 1 || sandbox.output_bytes < 1)
        throw ConfigError("sandbox limits must be positive");
}

RunConfig RunConfig::effective() const
{
    RunConfig out = *this;
    if (out.ablation.minimal_only)
    {
        out.ablation.self_reflection = false;
        out.ablation.verified_reflection = false;
        out.ablation.in_house_tool = false;
        out.ablation.router = true;
        out.warmup_passes = 0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

std::string_view to_string(SourceKind kind)
{
    switch (kind)
    {
        case SourceKind::url: return "url";
        case SourceKind::code_execution: return "code_execution";
        case SourceKind::kb_chunk: return "kb_chunk";
    }
    return "url";
}

SourceKind source_kind_from_string(std::string_view text)
{
    if (text == "url")
        return SourceKind::url;
    if (text == "code_execution")
        return SourceKind::code_execution;
    if (text == "kb_chunk")
        return SourceKind::kb_chunk;
    throw LoadError(fmt::format("unknown source kind '{}'", text));
}

std::string_view to_string(ToolInputKind kind)
{
    return kind == ToolInputKind::code_snippet ? "code_snippet" : "free_text_query";
}

void to_json(json& j, Task const& v)
{
    j = json { { "id", v.id }, { "query", v.query }, { "instruction", v.instruction }, { "meta", v.meta } };
    j["gold_answer"] = v.gold_answer ? json(*v.gold_answer) : json(nullptr);
}

void from_json(json const& j, Task& v)
{
    v.id = j.at("id").get<std::string>();
    v.query = j.at("query").get<std::string>();
    v.instruction = j.value("instruction", std::string {});
    if (auto it = j.find("gold_answer"); it != j.end() && !it->is_null())
        v.gold_answer = it->get<std::string>();
    else
        v.gold_answer.reset();
    v.meta = j.value("meta", std::map<std::string, std::string> {});
}

void to_json(json& j, TrajectoryEvent const& v)
{
    std::visit(
        [&j](auto const& e) {
            using T = std::decay_t<decltype(e)>;
            if constexpr (std::is_same_v<T, Reasoning>)
                j = json { { "type", "reasoning" }, { "text", e.text } };
            else if constexpr (std::is_same_v<T, HelpRequest>)
            {
                j = json { { "type", "help_request" }, { "text", e.text }, { "seq_index", e.seq_index } };
                if (e.direct_tool)
                    j["direct_tool"] = *e.direct_tool;
            }
            else if constexpr (std::is_same_v<T, Knowledge>)
                j = json { { "type", "knowledge" },
                           { "distilled_text", e.distilled_text },
                           { "provenance", e.provenance },
                           { "note", e.note } };
            else
                j = json { { "type", "final_answer" }, { "text", e.text } };
        },
        v);
}

void from_json(json const& j, TrajectoryEvent& v)
{
    auto const type = j.at("type").get<std::string>();
    if (type == "reasoning")
        v = Reasoning { j.at("text").get<std::string>() };
    else if (type == "help_request")
    {
        HelpRequest help { j.at("text").get<std::string>(), j.at("seq_index").get<int>(), std::nullopt };
        if (j.contains("direct_tool"))
            help.direct_tool = j.at("direct_tool").get<std::string>();
        v = std::move(help);
    }
    else if (type == "knowledge")
        v = Knowledge { j.at("distilled_text").get<std::string>(),
                        j.at("provenance").get<std::vector<std::string>>(),
                        j.value("note", std::string {}) };
    else if (type == "final_answer")
        v = FinalAnswer { j.at("text").get<std::string>() };
    else
        throw LoadError(fmt::format("unknown trajectory event type '{}'", type));
}

void to_json(json& j, Trajectory const& v)
{
    j = json { { "task_id", v.task_id }, { "events", v.events }, { "attempt", v.attempt } };
}

void from_json(json const& j, Trajectory& v)
{
    v.task_id = j.at("task_id").get<std::string>();
    v.events = j.at("events").get<std::vector<TrajectoryEvent>>();
    v.attempt = j.at("attempt").get<int>();
}

void to_json(json& j, ToolDescription const& v)
{
    j = json { { "name", v.name }, { "description", v.description }, { "input_kind", to_string(v.input_kind) } };
}

void from_json(json const& j, ToolDescription& v)
{
    v.name = j.at("name").get<std::string>();
    v.description = j.at("description").get<std::string>();
    v.input_kind = j.value("input_kind", std::string("free_text_query")) == "code_snippet"
                       ? ToolInputKind::code_snippet
                       : ToolInputKind::free_text_query;
}

void to_json(json& j, ToolCall const& v)
{
    j = json { { "tool", v.tool }, { "argument", v.argument }, { "origin_help_index", v.origin_help_index } };
}

void from_json(json const& j, ToolCall& v)
{
    v.tool = j.at("tool").get<std::string>();
    v.argument = j.at("argument").get<std::string>();
    v.origin_help_index = j.value("origin_help_index", 0);
}

void to_json(json& j, SourceLocator const& v)
{
    j = json { { "kind", to_string(v.kind) }, { "locator", v.locator } };
}

void from_json(json const& j, SourceLocator& v)
{
    v.kind = source_kind_from_string(j.at("kind").get<std::string>());
    v.locator = j.at("locator").get<std::string>();
}

void to_json(json& j, RawKnowledgeRecord const& v)
{
    j = json { { "record_id", v.record_id }, { "source", v.source },      { "content", v.content },
               { "fetched_at", v.fetched_at }, { "task_id", v.task_id }, { "help_index", v.help_index } };
}

void from_json(json const& j, RawKnowledgeRecord& v)
{
    v.record_id = j.at("record_id").get<std::string>();
    v.source = j.at("source").get<SourceLocator>();
    v.content = j.at("content").get<std::string>();
    v.fetched_at = j.value("fetched_at", Timestamp { 0 });
    v.task_id = j.value("task_id", std::string {});
    v.help_index = j.value("help_index", 0);
}

void to_json(json& j, Lesson const& v)
{
    j = json { { "title", v.title },
               { "body", v.body },
               { "derived_from", v.derived_from },
               { "last_reinforced", v.last_reinforced } };
}

void from_json(json const& j, Lesson& v)
{
    v.title = j.at("title").get<std::string>();
    v.body = j.at("body").get<std::string>();
    v.derived_from = j.value("derived_from", std::vector<std::string> {});
    v.last_reinforced = j.value("last_reinforced", 0);
}

void to_json(json& j, ExperienceState const& v)
{
    j = json { { "version", v.version }, { "lessons", v.lessons } };
}

void from_json(json const& j, ExperienceState& v)
{
    v.version = j.at("version").get<int>();
    v.lessons = j.value("lessons", std::vector<Lesson> {});
}

void to_json(json& j, RunConfig const& v)
{
    j = json {
        { "max_help_requests", v.max_help_requests },
        { "max_retries", v.max_retries },
        { "max_no_action_rounds", v.max_no_action_rounds },
        { "ablation",
          { { "self_reflection", v.ablation.self_reflection },
            { "verified_reflection", v.ablation.verified_reflection },
            { "in_house_tool", v.ablation.in_house_tool },
            { "router", v.ablation.router },
            { "minimal_only", v.ablation.minimal_only } } },
        { "warmup_passes", v.warmup_passes },
        { "warmup_max_help_requests", v.warmup_max_help_requests },
        { "warmup_uses_experience", v.warmup_uses_experience },
        { "reflect_on_correct", v.reflect_on_correct },
        { "retrieval_top_k", v.retrieval_top_k },
        { "distill_token_budget", v.distill_token_budget },
        { "experience_lesson_cap", v.experience_lesson_cap },
        { "lesson_body_cap", v.lesson_body_cap },
        { "max_calls_per_help", v.max_calls_per_help },
        { "search_top_n", v.search_top_n },
        { "chunk_size", v.chunk_size },
        { "chunk_overlap", v.chunk_overlap },
        { "sandbox",
          { { "wall_time_ms", v.sandbox.wall_time.count() }, { "output_bytes", v.sandbox.output_bytes } } },
        // API keys are read from the environment and never serialized.
        { "endpoints",
          { { "chat_url", v.endpoints.chat_url },
            { "chat_model", v.endpoints.chat_model },
            { "embed_url", v.endpoints.embed_url },
            { "embed_model", v.endpoints.embed_model },
            { "embed_dim", v.endpoints.embed_dim },
            { "search_url", v.endpoints.search_url },
            { "reader_url", v.endpoints.reader_url },
            { "temperature", v.endpoints.temperature } } },
    };
}

namespace
{
    template <typename T>
    void assign_if(json const& j, char const* key, T& field)
    {
        if (auto it = j.find(key); it != j.end() && !it->is_null())
            field = it->get<T>();
    }
} // namespace

void from_json(json const& j, RunConfig& v)
{
    try
    {
        assign_if(j, "max_help_requests", v.max_help_requests);
        assign_if(j, "max_retries", v.max_retries);
        assign_if(j, "max_no_action_rounds", v.max_no_action_rounds);
        if (auto it = j.find("ablation"); it != j.end())
        {
            assign_if(*it, "self_reflection", v.ablation.self_reflection);
            assign_if(*it, "verified_reflection", v.ablation.verified_reflection);
            assign_if(*it, "in_house_tool", v.ablation.in_house_tool);
            assign_if(*it, "router", v.ablation.router);
            assign_if(*it, "minimal_only", v.ablation.minimal_only);
        }
        assign_if(j, "warmup_passes", v.warmup_passes);
        assign_if(j, "warmup_max_help_requests", v.warmup_max_help_requests);
        assign_if(j, "warmup_uses_experience", v.warmup_uses_experience);
        assign_if(j, "reflect_on_correct", v.reflect_on_correct);
        assign_if(j, "retrieval_top_k", v.retrieval_top_k);
        assign_if(j, "distill_token_budget", v.distill_token_budget);
        assign_if(j, "experience_lesson_cap", v.experience_lesson_cap);
        assign_if(j, "lesson_body_cap", v.lesson_body_cap);
        assign_if(j, "max_calls_per_help", v.max_calls_per_help);
        assign_if(j, "search_top_n", v.search_top_n);
        assign_if(j, "chunk_size", v.chunk_size);
        assign_if(j, "chunk_overlap", v.chunk_overlap);
        if (auto it = j.find("sandbox"); it != j.end())
        {
            if (it->contains("wall_time_ms"))
                v.sandbox.wall_time = std::chrono::milliseconds(it->at("wall_time_ms").get<std::int64_t>());
            assign_if(*it, "output_bytes", v.sandbox.output_bytes);
        }
        if (auto it = j.find("endpoints"); it != j.end())
        {
            assign_if(*it, "chat_url", v.endpoints.chat_url);
            assign_if(*it, "chat_model", v.endpoints.chat_model);
            assign_if(*it, "embed_url", v.endpoints.embed_url);
            assign_if(*it, "embed_model", v.endpoints.embed_model);
            assign_if(*it, "embed_dim", v.endpoints.embed_dim);
            assign_if(*it, "search_url", v.endpoints.search_url);
            assign_if(*it, "reader_url", v.endpoints.reader_url);
            assign_if(*it, "temperature", v.endpoints.temperature);
        }
    }
    catch (json::exception const& e)
    {
        throw ConfigError(fmt::format("invalid run configuration: {}", e.what()));
    }
}

} // namespace kestrel
