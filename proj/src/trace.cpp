// SPDX-License-Identifier: Apache-2.0
#include <kestrel/errors.hpp>
#include <kestrel/trace.hpp>

#include <fmt/format.h>

#include <cctype>

namespace kestrel
{

void MemorySink::write(json const& record)
{
    std::lock_guard lock(_mutex);
    _records.push_back(record);
}

std::vector<json> MemorySink::records() const
{
    std::lock_guard lock(_mutex);
    return _records;
}

JsonlFileSink::JsonlFileSink(std::filesystem::path const& path)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    _out.open(path, std::ios::trunc);
    if (!_out)
        throw Error(fmt::format("cannot open trace file '{}'", path.string()));
}

void JsonlFileSink::write(json const& record)
{
    std::lock_guard lock(_mutex);
    _out << record.dump() << '\n';
    _out.flush();
}

TraceLog::TraceLog(std::string task_id, std::shared_ptr<TraceSink> sink, Clock clock):
    _task_id(std::move(task_id)), _sink(std::move(sink)), _clock(std::move(clock))
{
    if (!_sink)
        throw PreconditionError("trace log needs a sink");
}

void TraceLog::emit(std::string const& kind, int attempt, json data)
{
    json record { { "task_id", _task_id },
                  { "attempt", attempt },
                  { "seq", ++_seq },
                  { "timestamp", _clock() },
                  { "kind", kind },
                  { "data", std::move(data) } };
    _sink->write(record);
}

DirectoryTraceFactory::DirectoryTraceFactory(std::filesystem::path directory, Clock clock):
    _directory(std::move(directory)), _clock(std::move(clock))
{
    std::filesystem::create_directories(_directory);
}

std::filesystem::path DirectoryTraceFactory::path_for(std::string const& task_id) const
{
    std::string name;
    for (char c: task_id)
        name.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-' ? c : '_');
    if (name.empty() || name == "." || name == "..")
        name = "_" + name;
    return _directory / (name + ".jsonl");
}

std::unique_ptr<TraceLog> DirectoryTraceFactory::open(std::string const& task_id)
{
    return std::make_unique<TraceLog>(task_id, std::make_shared<JsonlFileSink>(path_for(task_id)), _clock);
}

MemoryTraceFactory::MemoryTraceFactory(Clock clock): _clock(std::move(clock)) {}

std::unique_ptr<TraceLog> MemoryTraceFactory::open(std::string const& task_id)
{
    auto sink = std::make_shared<MemorySink>();
    {
        std::lock_guard lock(_mutex);
        _sinks.emplace_back(task_id, sink);
    }
    return std::make_unique<TraceLog>(task_id, sink, _clock);
}

std::vector<json> MemoryTraceFactory::records(std::string const& task_id) const
{
    std::lock_guard lock(_mutex);
    std::vector<json> out;
    for (auto const& [id, sink]: _sinks)
        if (id == task_id)
            for (auto& r: sink->records())
                out.push_back(std::move(r));
    return out;
}

std::vector<std::string> MemoryTraceFactory::task_ids() const
{
    std::lock_guard lock(_mutex);
    std::vector<std::string> out;
    for (auto const& [id, sink]: _sinks)
        out.push_back(id);
    return out;
}

namespace
{
    std::string one_line(std::string const& s, std::size_t limit = 160)
    {
        std::string out;
        for (char c: s)
            out.push_back(c == '\n' ? ' ' : c);
        if (out.size() > limit)
        {
            out.resize(limit);
            out += "...";
        }
        return out;
    }

    std::string describe(json const& record)
    {
        auto const kind = record.value("kind", std::string("?"));
        auto const& data = record.contains("data") ? record.at("data") : json::object();
        auto str = [&](char const* key) { return data.contains(key) && data[key].is_string() ? data[key].get<std::string>() : std::string(); };

        if (kind == trace_kind::context)
        {
            std::vector<std::string> titles;
            for (auto const& lesson: data.value("lessons", json::array()))
                titles.push_back(lesson.value("title", ""));
            return fmt::format("context (experience v{}, {} lessons{}{})",
                               data.value("experience_version", 0),
                               titles.size(),
                               titles.empty() ? "" : ": ",
                               fmt::join(titles, ", "));
        }
        if (kind == trace_kind::help_request)
        {
            auto const tool = str("direct_tool");
            return fmt::format("  help #{}{}: {}", data.value("seq_index", 0), tool.empty() ? "" : " [" + tool + "]", one_line(str("text")));
        }
        if (kind == trace_kind::routing)
        {
            std::vector<std::string> calls;
            for (auto const& call: data.value("calls", json::array()))
                calls.push_back(fmt::format("{}({})", call.value("tool", ""), call.value("argument", "")));
            return fmt::format("    routed: {}", calls.empty() ? "(no calls)" : one_line(fmt::format("{}", fmt::join(calls, ", ")), 240));
        }
        if (kind == trace_kind::knowledge)
        {
            auto const note = str("note");
            return fmt::format("    knowledge [{} sources]: {}{}",
                               data.value("provenance", json::array()).size(),
                               one_line(str("distilled_text")),
                               note.empty() ? "" : " (note: " + one_line(note, 120) + ")");
        }
        if (kind == trace_kind::reasoning)
            return fmt::format("  think: {}", one_line(str("text")));
        if (kind == trace_kind::final_answer)
            return fmt::format("  answer: {}", str("text"));
        if (kind == trace_kind::self_reflection)
            return fmt::format("  self-reflection: {} - {}", str("verdict"), one_line(str("critique")));
        if (kind == trace_kind::verified_reflection)
            return fmt::format("verified reflection: experience v{} -> v{} ({} lessons)",
                               data.value("from_version", 0),
                               data.value("to_version", 0),
                               data.value("lessons", json::array()).size());
        if (kind == trace_kind::status)
            return fmt::format("status: {}{}", str("status"), str("final_answer").empty() ? "" : " (answer: " + str("final_answer") + ")");
        return fmt::format("{}: {}", kind, one_line(data.dump()));
    }
} // namespace

TraceRendering render_trace(std::istream& in, TraceFilter const& filter)
{
    TraceRendering rendering;
    std::string line;
    std::size_t line_number = 0;
    std::optional<int> current_attempt;
    while (std::getline(in, line))
    {
        ++line_number;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        auto const record = json::parse(line, nullptr, false);
        if (record.is_discarded() || !record.is_object())
        {
            ++rendering.corrupt_lines;
            rendering.text += fmt::format("[corrupt line {}]\n", line_number);
            continue;
        }
        auto const attempt = record.value("attempt", 0);
        auto const kind = record.value("kind", std::string());
        if (filter.attempt && attempt != *filter.attempt)
            continue;
        if (filter.kind && kind != *filter.kind)
            continue;
        if (attempt > 0 && attempt != current_attempt.value_or(-1) && kind != trace_kind::verified_reflection && kind != trace_kind::status)
        {
            rendering.text += fmt::format("== attempt {} ==\n", attempt);
            current_attempt = attempt;
        }
        rendering.text += describe(record) + "\n";
        ++rendering.events;
    }
    rendering.text += fmt::format("{} events\n", rendering.events);
    return rendering;
}

} // namespace kestrel
