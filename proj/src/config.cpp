// SPDX-License-Identifier: Apache-2.0
#include <kestrel/config.hpp>
#include <kestrel/errors.hpp>
#include <kestrel/text.hpp>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <array>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace kestrel
{

namespace
{
    class LineParser
    {
      public:
        LineParser(std::string_view line, std::size_t number): _line(line), _number(number) {}

        [[noreturn]] void fail(std::string_view what) const
        {
            throw ConfigError(fmt::format("TOML line {}: {}", _number, what));
        }

        void skip_ws()
        {
            while (_pos < _line.size() && (_line[_pos] == ' ' || _line[_pos] == '\t'))
                ++_pos;
        }

        [[nodiscard]] bool at_end_or_comment()
        {
            skip_ws();
            return _pos >= _line.size() || _line[_pos] == '#';
        }

        [[nodiscard]] char peek() const { return _pos < _line.size() ? _line[_pos] : '\0'; }

        void expect(char c)
        {
            skip_ws();
            if (peek() != c)
                fail(fmt::format("expected '{}'", c));
            ++_pos;
        }

        std::vector<std::string> key_path()
        {
            std::vector<std::string> path;
            while (true)
            {
                skip_ws();
                auto const c = peek();
                if (c == '"')
                    path.push_back(basic_string());
                else if (c == '\'')
                    path.push_back(literal_string());
                else
                {
                    auto const begin = _pos;
                    while (_pos < _line.size() && (std::isalnum(static_cast<unsigned char>(_line[_pos])) || _line[_pos] == '_' || _line[_pos] == '-'))
                        ++_pos;
                    if (_pos == begin)
                        fail("expected a key");
                    path.emplace_back(_line.substr(begin, _pos - begin));
                }
                skip_ws();
                if (peek() != '.')
                    return path;
                ++_pos;
            }
        }

        json value()
        {
            skip_ws();
            auto const c = peek();
            if (c == '"')
                return basic_string();
            if (c == '\'')
                return literal_string();
            if (c == '[')
                return array();
            if (_line.substr(_pos).starts_with("true"))
                return _pos += 4, true;
            if (_line.substr(_pos).starts_with("false"))
                return _pos += 5, false;
            return number();
        }

      private:
        std::string basic_string()
        {
            if (_line.substr(_pos).starts_with("\"\"\""))
                fail("multi-line strings are not supported");
            ++_pos;
            std::string out;
            while (_pos < _line.size() && _line[_pos] != '"')
            {
                char c = _line[_pos++];
                if (c != '\\')
                {
                    out.push_back(c);
                    continue;
                }
                if (_pos >= _line.size())
                    fail("unterminated escape");
                switch (char e = _line[_pos++])
                {
                    case 'n': out.push_back('\n'); break;
                    case 't': out.push_back('\t'); break;
                    case 'r': out.push_back('\r'); break;
                    case '"': out.push_back('"'); break;
                    case '\\': out.push_back('\\'); break;
                    case 'u': out += unicode_escape(); break;
                    default: fail(fmt::format("unsupported escape '\\{}'", e));
                }
            }
            if (_pos >= _line.size())
                fail("unterminated string");
            ++_pos;
            return out;
        }

        std::string unicode_escape()
        {
            if (_pos + 4 > _line.size())
                fail("short \\u escape");
            auto const hex = std::string(_line.substr(_pos, 4));
            _pos += 4;
            char* end = nullptr;
            auto const cp = std::strtoul(hex.c_str(), &end, 16);
            if (end != hex.c_str() + 4)
                fail("bad \\u escape");
            std::string out;
            if (cp < 0x80)
                out.push_back(static_cast<char>(cp));
            else if (cp < 0x800)
            {
                out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
                out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
            }
            else
            {
                out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
                out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
                out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
            }
            return out;
        }

        std::string literal_string()
        {
            ++_pos;
            auto const end = _line.find('\'', _pos);
            if (end == std::string_view::npos)
                fail("unterminated string");
            std::string out(_line.substr(_pos, end - _pos));
            _pos = end + 1;
            return out;
        }

        json array()
        {
            ++_pos;
            json out = json::array();
            while (true)
            {
                skip_ws();
                if (peek() == ']')
                    return ++_pos, out;
                if (peek() == '\0')
                    fail("arrays must close on the same line");
                out.push_back(value());
                skip_ws();
                if (peek() == ',')
                    ++_pos;
                else if (peek() != ']')
                    fail("expected ',' or ']' in array");
            }
        }

        json number()
        {
            auto const begin = _pos;
            while (_pos < _line.size() && std::string_view("+-0123456789_.eE").find(_line[_pos]) != std::string_view::npos)
                ++_pos;
            std::string digits;
            for (auto c: _line.substr(begin, _pos - begin))
                if (c != '_')
                    digits.push_back(c);
            if (digits.empty())
                fail("expected a value");
            char* end = nullptr;
            if (digits.find_first_of(".eE") == std::string::npos)
            {
                auto const v = std::strtoll(digits.c_str(), &end, 10);
                if (end != digits.c_str() + digits.size())
                    fail(fmt::format("bad integer '{}'", digits));
                return v;
            }
            auto const v = std::strtod(digits.c_str(), &end);
            if (end != digits.c_str() + digits.size())
                fail(fmt::format("bad float '{}'", digits));
            return v;
        }

        std::string_view _line;
        std::size_t _number;
        std::size_t _pos = 0;
    };

    json& descend(json& root, std::vector<std::string> const& path, std::size_t count, LineParser const& parser)
    {
        json* node = &root;
        for (std::size_t i = 0; i < count; ++i)
        {
            auto& child = (*node)[path[i]];
            if (child.is_null())
                child = json::object();
            if (!child.is_object())
                parser.fail(fmt::format("'{}' is not a table", path[i]));
            node = &child;
        }
        return *node;
    }

    constexpr std::array<std::string_view, 5> secret_words { "api_key", "apikey", "secret", "token", "password" };

    void check_keys(json const& doc, json const& schema, std::string const& prefix)
    {
        for (auto const& [key, value]: doc.items())
        {
            auto const name = prefix.empty() ? key : prefix + "." + key;
            for (auto word: secret_words)
                if (text::contains_icase(key, word))
                    throw ConfigError(fmt::format("'{}' looks like a secret; set it through the environment instead", name));
            auto it = schema.find(key);
            if (it == schema.end())
                throw ConfigError(fmt::format("unknown configuration key '{}'", name));
            if (it->is_object() != value.is_object())
                throw ConfigError(fmt::format("configuration key '{}' has the wrong shape", name));
            if (value.is_object())
                check_keys(value, *it, name);
        }
    }
} // namespace

json parse_toml(std::string_view text)
{
    json root = json::object();
    std::vector<std::string> table;
    std::set<std::vector<std::string>> headers;
    std::size_t number = 0;
    std::istringstream in { std::string(text) };
    std::string line;
    while (std::getline(in, line))
    {
        ++number;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        LineParser parser(line, number);
        if (parser.at_end_or_comment())
            continue;
        if (parser.peek() == '[')
        {
            parser.expect('[');
            if (parser.peek() == '[')
                parser.fail("arrays of tables are not supported");
            table = parser.key_path();
            parser.expect(']');
            if (!parser.at_end_or_comment())
                parser.fail("unexpected text after table header");
            if (!headers.insert(table).second)
                parser.fail(fmt::format("table [{}] is defined twice", fmt::join(table, ".")));
            descend(root, table, table.size(), parser);
            continue;
        }
        auto path = table;
        auto const key = parser.key_path();
        path.insert(path.end(), key.begin(), key.end());
        parser.expect('=');
        auto value = parser.value();
        if (!parser.at_end_or_comment())
            parser.fail("unexpected text after value");
        auto& parent = descend(root, path, path.size() - 1, parser);
        if (parent.contains(path.back()))
            parser.fail(fmt::format("duplicate key '{}'", path.back()));
        parent[path.back()] = std::move(value);
    }
    return root;
}

EnvLookup process_env()
{
    return [](std::string const& name) -> std::optional<std::string> {
        char const* value = std::getenv(name.c_str());
        if (value == nullptr || *value == '\0')
            return std::nullopt;
        return std::string(value);
    };
}

void apply_env_overrides(RunConfig& config, EnvLookup const& env)
{
    auto set = [&](char const* name, std::string& field) {
        if (auto value = env(name))
            field = *value;
    };
    set("KESTREL_CHAT_URL", config.endpoints.chat_url);
    set("KESTREL_CHAT_MODEL", config.endpoints.chat_model);
    set("KESTREL_EMBED_URL", config.endpoints.embed_url);
    set("KESTREL_EMBED_MODEL", config.endpoints.embed_model);
    set("KESTREL_SEARCH_URL", config.endpoints.search_url);
    set("KESTREL_READER_URL", config.endpoints.reader_url);
}

RunConfig config_from_toml(std::string_view text, RunConfig base)
{
    auto const doc = parse_toml(text);
    check_keys(doc, json(RunConfig {}), "");
    from_json(doc, base);
    base.validate();
    return base;
}

RunConfig load_config(std::filesystem::path const& path, RunConfig base)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError(fmt::format("cannot read config file '{}'", path.string()));
    std::ostringstream buffer;
    buffer << in.rdbuf();
    try
    {
        return config_from_toml(buffer.str(), std::move(base));
    }
    catch (ConfigError const& e)
    {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

} // namespace kestrel
