// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <kestrel/core_types.hpp>

#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace kestrel
{

/// Record kinds written to task traces.
namespace trace_kind
{
    inline constexpr char const* context = "context";
    inline constexpr char const* reasoning = "reasoning";
    inline constexpr char const* help_request = "help_request";
    inline constexpr char const* routing = "routing";
    inline constexpr char const* knowledge = "knowledge";
    inline constexpr char const* final_answer = "final_answer";
    inline constexpr char const* self_reflection = "self_reflection";
    inline constexpr char const* verified_reflection = "verified_reflection";
    inline constexpr char const* status = "status";
} // namespace trace_kind

class TraceSink
{
  public:
    virtual ~TraceSink() = default;
    virtual void write(json const& record) = 0;
};

class MemorySink final: public TraceSink
{
  public:
    void write(json const& record) override;
    [[nodiscard]] std::vector<json> records() const;

  private:
    std::vector<json> _records;
    mutable std::mutex _mutex;
};

/// Appends one JSON object per line; flushed after every record.
class JsonlFileSink final: public TraceSink
{
  public:
    explicit JsonlFileSink(std::filesystem::path const& path);
    void write(json const& record) override;

  private:
    std::ofstream _out;
    std::mutex _mutex;
};

/// Stamps records of one task with task_id, attempt, a monotone seq and a timestamp.
class TraceLog
{
  public:
    TraceLog(std::string task_id, std::shared_ptr<TraceSink> sink, Clock clock);

    void emit(std::string const& kind, int attempt, json data);

    [[nodiscard]] std::string const& task_id() const { return _task_id; }

  private:
    std::string _task_id;
    std::shared_ptr<TraceSink> _sink;
    Clock _clock;
    std::int64_t _seq = 0;
};

/// Creates one trace per task.
class TraceFactory
{
  public:
    virtual ~TraceFactory() = default;
    virtual std::unique_ptr<TraceLog> open(std::string const& task_id) = 0;
};

/// `<directory>/<task id>.jsonl`, with characters outside [A-Za-z0-9._-] replaced by '_'.
class DirectoryTraceFactory final: public TraceFactory
{
  public:
    DirectoryTraceFactory(std::filesystem::path directory, Clock clock);
    std::unique_ptr<TraceLog> open(std::string const& task_id) override;

    [[nodiscard]] std::filesystem::path path_for(std::string const& task_id) const;

  private:
    std::filesystem::path _directory;
    Clock _clock;
};

/// Keeps every task's records in memory (tests, audits).
class MemoryTraceFactory final: public TraceFactory
{
  public:
    explicit MemoryTraceFactory(Clock clock);
    std::unique_ptr<TraceLog> open(std::string const& task_id) override;

    [[nodiscard]] std::vector<json> records(std::string const& task_id) const;
    [[nodiscard]] std::vector<std::string> task_ids() const;

  private:
    Clock _clock;
    std::vector<std::pair<std::string, std::shared_ptr<MemorySink>>> _sinks;
    mutable std::mutex _mutex;
};

struct TraceFilter
{
    std::optional<int> attempt;
    std::optional<std::string> kind;
};

struct TraceRendering
{
    std::string text;
    std::size_t events = 0;
    std::size_t corrupt_lines = 0;
};

/// Human-readable rendering: attempt boundaries, help/knowledge pairs, reflection verdicts.
/// Corrupt lines are replaced by a marker and rendering continues.
TraceRendering render_trace(std::istream& in, TraceFilter const& filter = {});

} // namespace kestrel
