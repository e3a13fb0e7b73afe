// SPDX-License-Identifier: Apache-2.0
#include <kestrel/text.hpp>

#include <algorithm>
#include <cctype>
#include <utility>

namespace kestrel::text
{

namespace
{
    bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
    bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
} // namespace

std::vector<std::string> terms(std::string_view input)
{
    std::vector<std::string> out;
    std::string current;
    for (char c: input)
    {
        if (is_alnum(c))
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        else if (!current.empty())
            out.push_back(std::exchange(current, {}));
    }
    if (!current.empty())
        out.push_back(std::move(current));
    return out;
}

std::vector<std::string> whitespace_tokens(std::string_view input)
{
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < input.size())
    {
        while (i < input.size() && is_space(input[i]))
            ++i;
        auto const start = i;
        while (i < input.size() && !is_space(input[i]))
            ++i;
        if (i > start)
            out.emplace_back(input.substr(start, i - start));
    }
    return out;
}

std::size_t count_tokens(std::string_view input)
{
    return whitespace_tokens(input).size();
}

std::string truncate_tokens(std::string_view input, std::size_t max_tokens)
{
    std::size_t seen = 0;
    std::size_t end = 0;
    std::size_t i = 0;
    while (i < input.size())
    {
        while (i < input.size() && is_space(input[i]))
            ++i;
        if (i == input.size())
            break;
        if (seen == max_tokens)
            return std::string(input.substr(0, end));
        while (i < input.size() && !is_space(input[i]))
            ++i;
        end = i;
        ++seen;
    }
    return std::string(input);
}

std::vector<std::string> sentences(std::string_view input)
{
    std::vector<std::string> out;
    std::string current;
    auto flush = [&] {
        auto t = trim(current);
        if (!t.empty())
            out.push_back(std::move(t));
        current.clear();
    };
    for (std::size_t i = 0; i < input.size(); ++i)
    {
        char const c = input[i];
        if (c == '\n')
        {
            flush();
            continue;
        }
        current.push_back(c);
        bool const terminator = c == '.' || c == '?' || c == '!';
        if (terminator && (i + 1 == input.size() || is_space(input[i + 1])))
            flush();
    }
    flush();
    return out;
}

std::string trim(std::string_view input)
{
    auto begin = input.begin();
    auto end = input.end();
    while (begin != end && is_space(*begin))
        ++begin;
    while (end != begin && is_space(*(end - 1)))
        --end;
    return { begin, end };
}

std::string to_lower(std::string_view input)
{
    std::string out(input);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

bool contains_icase(std::string_view haystack, std::string_view needle)
{
    return to_lower(haystack).find(to_lower(needle)) != std::string::npos;
}

std::string join(std::vector<std::string> const& parts, std::string_view separator)
{
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i)
    {
        if (i > 0)
            out += separator;
        out += parts[i];
    }
    return out;
}

} // namespace kestrel::text
