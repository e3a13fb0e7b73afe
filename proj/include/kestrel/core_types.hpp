// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace kestrel
{

using json = nlohmann::json;

/// Milliseconds since the Unix epoch.
using Timestamp = std::int64_t;
using Clock = std::function<Timestamp()>;

Clock system_clock();
/// Clock that always returns `value`; used for reproducible traces.
Clock fixed_clock(Timestamp value);

// ---------------------------------------------------------------------------
// Tasks and trajectories
// ---------------------------------------------------------------------------

struct Task
{
    std::string id;
    std::string query;
    std::string instruction;
    std::optional<std::string> gold_answer;
    std::map<std::string, std::string> meta;

    /// Throws PreconditionError when id or query is empty.
    void validate() const;
};

/// Throws PreconditionError on empty batches, invalid tasks or duplicate ids.
void validate_batch(std::vector<Task> const& tasks);

struct Reasoning
{
    std::string text;
};

struct HelpRequest
{
    std::string text;
    int seq_index = 0;
    /// Set only when the agent called a tool directly (in-context tool descriptions mode).
    std::optional<std::string> direct_tool;
};

struct Knowledge
{
    std::string distilled_text;
    std::vector<std::string> provenance;
    /// Non-empty when routing or execution degraded (error note).
    std::string note;
};

struct FinalAnswer
{
    std::string text;
};

using TrajectoryEvent = std::variant<Reasoning, HelpRequest, Knowledge, FinalAnswer>;

struct Trajectory
{
    std::string task_id;
    std::vector<TrajectoryEvent> events;
    int attempt = 1;

    [[nodiscard]] std::optional<std::string> final_answer() const;
    [[nodiscard]] int help_request_count() const;
    [[nodiscard]] int knowledge_count() const;
};

/// Returns a description of the first violated trajectory invariant, or nullopt when legal.
std::optional<std::string> check_trajectory(Trajectory const& trajectory);

// ---------------------------------------------------------------------------
// Tools
// ---------------------------------------------------------------------------

enum class ToolInputKind
{
    free_text_query,
    code_snippet,
};

struct ToolDescription
{
    std::string name;
    std::string description;
    ToolInputKind input_kind = ToolInputKind::free_text_query;
};

struct ToolCall
{
    std::string tool;
    std::string argument;
    int origin_help_index = 0;
};

enum class SourceKind
{
    url,
    code_execution,
    kb_chunk,
};

struct SourceLocator
{
    SourceKind kind = SourceKind::url;
    std::string locator;
};

struct RawKnowledgeRecord
{
    std::string record_id;
    SourceLocator source;
    std::string content;
    Timestamp fetched_at = 0;
    std::string task_id;
    int help_index = 0;
};

std::string sha256_hex(std::string_view data);

/// SHA-256 (hex) over the source kind, locator and content. Stable across processes and platforms.
std::string compute_record_id(SourceLocator const& source, std::string_view content);

RawKnowledgeRecord make_record(SourceLocator source,
                               std::string content,
                               std::string task_id,
                               int help_index,
                               Timestamp fetched_at);

// ---------------------------------------------------------------------------
// Experience
// ---------------------------------------------------------------------------

struct Lesson
{
    std::string title;
    std::string body;
    /// Task ids whose verified reflection produced or reinforced this lesson.
    std::vector<std::string> derived_from;
    /// Experience version at which the lesson was last emitted; drives eviction.
    int last_reinforced = 0;
};

struct ExperienceState
{
    int version = 0;
    std::vector<Lesson> lessons;

    /// Throws InvariantError when version 0 carries lessons, a body exceeds `body_cap`,
    /// or a lesson has no derived_from entry.
    void validate(std::size_t body_cap) const;
};

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct AblationFlags
{
    bool self_reflection = true;
    bool verified_reflection = true;
    bool in_house_tool = true;
    /// false = tool descriptions are placed in the agent context and tools are called directly.
    bool router = true;
    bool minimal_only = false;
};

struct SandboxLimits
{
    std::chrono::milliseconds wall_time { 10'000 };
    std::size_t output_bytes = 16 * 1024;
};

struct ProviderEndpoints
{
    std::string chat_url;
    std::string chat_model;
    std::string embed_url;
    std::string embed_model;
    int embed_dim = 1024;
    std::string search_url = "https://www.googleapis.com/customsearch/v1";
    std::string reader_url = "https://r.jina.ai/";
    double temperature = 0.6;
};

struct RunConfig
{
    int max_help_requests = 10;
    int max_retries = 2;
    int max_no_action_rounds = 3;
    AblationFlags ablation;
    int warmup_passes = 3;
    /// Help budget for warm-up simulations; 0 means "same as max_help_requests".
    int warmup_max_help_requests = 0;
    bool warmup_uses_experience = false;
    bool reflect_on_correct = true;
    int retrieval_top_k = 5;
    int distill_token_budget = 1200;
    int experience_lesson_cap = 12;
    int lesson_body_cap = 400;
    int max_calls_per_help = 8;
    int search_top_n = 5;
    int chunk_size = 512;
    int chunk_overlap = 64;
    SandboxLimits sandbox;
    ProviderEndpoints endpoints;

    /// Throws ConfigError on out-of-range values.
    void validate() const;

    /// Copy with minimal_only applied: reflection and in-house tool forced off, warm-up skipped.
    [[nodiscard]] RunConfig effective() const;
};

// ---------------------------------------------------------------------------
// JSON (canonical lower_snake_case representation)
// ---------------------------------------------------------------------------

void to_json(json& j, Task const& v);
void from_json(json const& j, Task& v);
void to_json(json& j, TrajectoryEvent const& v);
void from_json(json const& j, TrajectoryEvent& v);
void to_json(json& j, Trajectory const& v);
void from_json(json const& j, Trajectory& v);
void to_json(json& j, ToolDescription const& v);
void from_json(json const& j, ToolDescription& v);
void to_json(json& j, ToolCall const& v);
void from_json(json const& j, ToolCall& v);
void to_json(json& j, SourceLocator const& v);
void from_json(json const& j, SourceLocator& v);
void to_json(json& j, RawKnowledgeRecord const& v);
void from_json(json const& j, RawKnowledgeRecord& v);
void to_json(json& j, Lesson const& v);
void from_json(json const& j, Lesson& v);
void to_json(json& j, ExperienceState const& v);
void from_json(json const& j, ExperienceState& v);
void to_json(json& j, RunConfig const& v);
/// Partial update: only keys present in `j` override fields of `v`.
void from_json(json const& j, RunConfig& v);

std::string_view to_string(SourceKind kind);
SourceKind source_kind_from_string(std::string_view text);
std::string_view to_string(ToolInputKind kind);

} // namespace kestrel
