// SPDX-License-Identifier: Apache-2.0
#include <kestrel/benchmark_adapters.hpp>
#include <kestrel/errors.hpp>
#include <kestrel/text.hpp>

#include <fmt/format.h>

#include <fstream>
#include <sstream>

namespace kestrel::adapters
{

namespace
{
    std::string slurp(std::filesystem::path const& path)
    {
        std::ifstream in(path, std::ios::binary);
        if (!in)
            throw LoadError(fmt::format("cannot read '{}'", path.string()));
        std::ostringstream buffer;
        buffer << in.rdbuf();
        return buffer.str();
    }

    /// Parses JSON lines, or a single JSON array when the file starts with '['.
    std::vector<json> json_rows(std::filesystem::path const& path)
    {
        auto const content = slurp(path);
        auto const trimmed = text::trim(content);
        std::vector<json> rows;
        if (trimmed.starts_with("["))
        {
            try
            {
                for (auto& row: json::parse(trimmed))
                    rows.push_back(std::move(row));
            }
            catch (json::exception const& e)
            {
                throw LoadError(fmt::format("malformed JSON in '{}': {}", path.string(), e.what()));
            }
            return rows;
        }
        std::istringstream in(content);
        std::string line;
        for (std::size_t number = 1; std::getline(in, line); ++number)
        {
            if (text::trim(line).empty())
                continue;
            try
            {
                rows.push_back(json::parse(line));
            }
            catch (json::exception const& e)
            {
                throw LoadError(fmt::format("malformed JSON at {}:{}: {}", path.string(), number, e.what()));
            }
        }
        return rows;
    }

    std::string scalar_string(json const& value)
    {
        if (value.is_string())
            return value.get<std::string>();
        if (value.is_null())
            return {};
        return value.dump();
    }

    std::vector<Task> finish(std::vector<Task> tasks, std::filesystem::path const& path)
    {
        try
        {
            validate_batch(tasks);
        }
        catch (PreconditionError const& e)
        {
            throw LoadError(fmt::format("invalid tasks in '{}': {}", path.string(), e.what()));
        }
        return tasks;
    }
} // namespace

std::vector<Task> read_gaia(std::filesystem::path const& path, std::optional<int> level)
{
    std::vector<Task> tasks;
    for (auto const& row: json_rows(path))
    {
        if (!scalar_string(row.value("file_name", json())).empty())
            continue;
        auto const row_level = scalar_string(row.value("Level", json()));
        if (level && row_level != std::to_string(*level))
            continue;
        Task task;
        task.id = scalar_string(row.at("task_id"));
        task.query = scalar_string(row.at("Question"));
        task.instruction = "Reply with the final answer only.";
        if (auto answer = scalar_string(row.value("Final answer", json())); !answer.empty() && answer != "?")
            task.gold_answer = answer;
        task.meta = { { "benchmark", "gaia" }, { "level", row_level } };
        tasks.push_back(std::move(task));
    }
    return finish(std::move(tasks), path);
}

std::vector<Task> read_webwalkerqa(std::filesystem::path const& path)
{
    std::vector<Task> tasks;
    std::size_t n = 0;
    for (auto const& row: json_rows(path))
    {
        ++n;
        Task task;
        task.id = row.contains("id") ? scalar_string(row.at("id")) : fmt::format("webwalkerqa-{:04}", n);
        task.query = scalar_string(row.at("question"));
        task.instruction = "Reply with the final answer only.";
        if (auto answer = scalar_string(row.value("answer", json())); !answer.empty())
            task.gold_answer = answer;
        task.meta = { { "benchmark", "webwalkerqa" } };
        if (auto root = scalar_string(row.value("root_url", json())); !root.empty())
            task.meta["root_url"] = root;
        if (auto it = row.find("info"); it != row.end() && it->is_object())
            for (auto const* key: { "difficulty_level", "type", "domain", "lang" })
                if (auto value = scalar_string(it->value(key, json())); !value.empty())
                    task.meta[key] = value;
        tasks.push_back(std::move(task));
    }
    return finish(std::move(tasks), path);
}

std::vector<std::vector<std::string>> parse_csv(std::string_view input)
{
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    bool field_started = false;
    for (std::size_t i = 0; i < input.size(); ++i)
    {
        char const c = input[i];
        if (quoted)
        {
            if (c == '"')
            {
                if (i + 1 < input.size() && input[i + 1] == '"')
                    field.push_back('"'), ++i;
                else
                    quoted = false;
            }
            else
                field.push_back(c);
            continue;
        }
        switch (c)
        {
            case '"':
                if (!field.empty())
                    throw LoadError("CSV quote inside an unquoted field");
                quoted = true;
                field_started = true;
                break;
            case ',':
                row.push_back(std::move(field));
                field.clear();
                field_started = true;
                break;
            case '\r': break;
            case '\n':
                if (field_started || !field.empty() || !row.empty())
                {
                    row.push_back(std::move(field));
                    rows.push_back(std::move(row));
                }
                field.clear();
                row.clear();
                field_started = false;
                break;
            default: field.push_back(c); field_started = true;
        }
    }
    if (quoted)
        throw LoadError("CSV ends inside a quoted field");
    if (field_started || !row.empty())
    {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<Task> read_browsecomp(std::filesystem::path const& path)
{
    auto rows = parse_csv(slurp(path));
    if (rows.empty())
        throw LoadError(fmt::format("'{}' is empty", path.string()));
    auto const& header = rows.front();
    auto column = [&](std::string_view name) -> std::optional<std::size_t> {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (text::trim(header[i]) == name)
                return i;
        return std::nullopt;
    };
    auto const problem = column("problem");
    auto const answer = column("answer");
    if (!problem || !answer)
        throw LoadError(fmt::format("'{}' needs 'problem' and 'answer' columns (decrypted format)", path.string()));
    auto const topic = column("problem_topic");

    std::vector<Task> tasks;
    for (std::size_t r = 1; r < rows.size(); ++r)
    {
        auto const& row = rows[r];
        if (row.size() != header.size())
            throw LoadError(fmt::format("'{}' row {} has {} fields, expected {}", path.string(), r + 1, row.size(), header.size()));
        Task task;
        task.id = fmt::format("browsecomp-{:04}", r);
        task.query = row[*problem];
        task.instruction = "Reply with the final answer only.";
        if (!row[*answer].empty())
            task.gold_answer = row[*answer];
        task.meta = { { "benchmark", "browsecomp" } };
        if (topic)
            task.meta["topic"] = row[*topic];
        tasks.push_back(std::move(task));
    }
    return finish(std::move(tasks), path);
}

std::vector<Task> read_tasks(std::string_view format, std::filesystem::path const& path)
{
    if (format == "gaia")
        return read_gaia(path);
    if (format == "webwalkerqa")
        return read_webwalkerqa(path);
    if (format == "browsecomp")
        return read_browsecomp(path);
    throw ConfigError(fmt::format("unknown task format '{}' (gaia, webwalkerqa, browsecomp)", format));
}

} // namespace kestrel::adapters
