// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <kestrel/core_types.hpp>
#include <kestrel/orchestrator.hpp>
#include <kestrel/provider.hpp>
#include <kestrel/reflection.hpp>
#include <kestrel/synthetic_world.hpp>
#include <kestrel/tool_backends.hpp>
#include <kestrel/warmup.hpp>

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace kestrel
{

enum class RouterKind
{
    keyword,
    model,
};

enum class DistillerKind
{
    extractive,
    model,
};

/// Everything needed to run one benchmark: tasks, a web world and the model behind every role.
struct Benchmark
{
    std::string name;
    std::vector<Task> tasks;
    std::shared_ptr<SearchEngine> search;
    /// Called once per run so scripted providers start from the top of their script.
    std::function<std::shared_ptr<ChatProvider>()> make_model;
    std::function<std::shared_ptr<EmbeddingProvider>()> make_embedder;
    std::function<std::shared_ptr<ChatProvider>()> make_judge;
    RouterKind router = RouterKind::keyword;
    DistillerKind distiller = DistillerKind::extractive;
    GradeMethod grade_method = GradeMethod::exact_match;
    ExperienceState initial_experience;
    /// Adjusts the configuration before a run (e.g. replay fixtures cannot afford warm-up calls).
    std::function<void(RunConfig&)> adjust_config;
    bool live = false;
};

/// Offline chained-lookup benchmark: generated world, fixture search, reference policy.
Benchmark synthetic_benchmark(WorldParams const& params = {});

/// Scripted case-study replay loaded from `path` (see data/case_replay.json).
Benchmark replay_benchmark(std::filesystem::path const& path);

/// Tasks + fixture corpus on disk with the reference policy as the model.
/// Throws ConfigError when either path is missing.
Benchmark fixture_benchmark(std::string name, std::filesystem::path const& tasks, std::filesystem::path const& corpus);

/// Real endpoints. Reads endpoint URLs and keys from the environment; throws ConfigError naming
/// the first missing variable. When `corpus` is set, search stays on the fixture corpus.
Benchmark live_benchmark(std::string name,
                         std::vector<Task> tasks,
                         ProviderEndpoints const& endpoints,
                         std::optional<std::filesystem::path> const& corpus,
                         GradeMethod grade_method);

/// Resolves "synthetic" and "case-replay". Throws ConfigError for other names.
Benchmark builtin_benchmark(std::string const& name, std::filesystem::path const& data_dir, WorldParams const& world = {});

/// Directory holding bundled fixtures (data/ in the source tree unless KESTREL_DATA_DIR is set).
std::filesystem::path default_data_dir();

struct RunOptions
{
    /// Persistent knowledge-base directory; in-memory when unset.
    std::optional<std::filesystem::path> kb_dir;
    TraceFactory* traces = nullptr;
    /// Experience snapshots are written here when set.
    std::optional<std::filesystem::path> experience_out;
    Clock clock = system_clock();
    bool parallel_scoring = true;
};

struct RunSummary
{
    std::string benchmark;
    std::string variant;
    AblationFlags flags;
    int tasks = 0;
    int answered = 0;
    int graded = 0;
    int correct = 0;
    int help_requests = 0;
    int attempts = 0;
    int kb_retrieve_calls = 0;
    int direct_tool_calls = 0;
    int provider_errors = 0;
    /// Knowledge provenance ids that are missing from the knowledge base.
    int coverage_violations = 0;
    KnowledgeBaseStats kb;
    BatchResult batch;

    [[nodiscard]] double accuracy() const { return graded == 0 ? 0.0 : static_cast<double>(correct) / graded; }
};

void to_json(json& j, RunSummary const& v);

/// Builds the tool registry, router, reflector and knowledge base for `config`, then runs the batch.
RunSummary run_benchmark(Benchmark const& benchmark, RunConfig config, RunOptions const& options, std::string variant = "custom");

struct WarmupRun
{
    WarmupSummary summary;
    KnowledgeBaseStats kb;
};

/// Warm-up only: `config.warmup_passes` simulation passes filling the knowledge base.
/// Throws PreconditionError when warmup_passes < 1.
WarmupRun run_warmup(Benchmark const& benchmark, RunConfig config, RunOptions const& options);

struct Variant
{
    std::string name;
    AblationFlags flags;
};

/// Full configuration followed by the five single-component ablations.
std::vector<Variant> ablation_variants();

/// Runs every variant on a fresh knowledge base. With a kb_dir, each variant gets a subdirectory.
std::vector<RunSummary> run_ablation(Benchmark const& benchmark, RunConfig const& base, RunOptions const& options);

std::string render_table(std::vector<RunSummary> const& runs);

} // namespace kestrel
