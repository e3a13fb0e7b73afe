// SPDX-License-Identifier: Apache-2.0
#include <kestrel/errors.hpp>
#include <kestrel/http_provider.hpp>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include <regex>
#include <thread>

namespace kestrel
{

Endpoint Endpoint::parse(std::string const& url)
{
    static std::regex const pattern(R"(^(https?://[^/\s]+)(/[^\s]*)?$)");
    std::smatch match;
    if (!std::regex_match(url, match, pattern))
        throw ConfigError(fmt::format("invalid endpoint URL '{}'", url));
    return Endpoint { match[1].str(), match[2].matched ? match[2].str() : std::string("/") };
}

std::string with_retries(RetryPolicy const& policy, std::function<std::string()> const& call)
{
    auto backoff = policy.initial_backoff;
    auto const attempts = std::max(1, policy.attempts);
    for (int attempt = 1;; ++attempt)
    {
        try
        {
            return call();
        }
        catch (ProviderError const& e)
        {
            if (!e.retryable() || attempt >= attempts)
                throw;
            spdlog::warn("transient provider failure (attempt {}/{}): {}", attempt, attempts, e.what());
            if (policy.sleep)
                policy.sleep(backoff);
            else
                std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
    }
}

namespace
{
    httplib::Client make_client(Endpoint const& endpoint, std::string const& api_key)
    {
        httplib::Client client(endpoint.scheme_host_port);
        client.set_connection_timeout(10);
        client.set_read_timeout(300);
        if (!api_key.empty())
            client.set_bearer_token_auth(api_key);
        return client;
    }

    json post_json(Endpoint const& endpoint, std::string const& api_key, json const& body)
    {
        auto client = make_client(endpoint, api_key);
        auto response = client.Post(endpoint.path, body.dump(), "application/json");
        if (!response)
            throw ProviderError(fmt::format("transport failure: {}", httplib::to_string(response.error())), true);
        if (response->status == 429 || response->status >= 500)
            throw ProviderError(fmt::format("endpoint returned HTTP {}", response->status), true);
        if (response->status != 200)
            throw ProviderError(fmt::format("endpoint refused request with HTTP {}: {}",
                                            response->status,
                                            response->body.substr(0, 200)),
                                false);
        try
        {
            return json::parse(response->body);
        }
        catch (json::parse_error const& e)
        {
            throw ProviderError(fmt::format("malformed endpoint response: {}", e.what()), false);
        }
    }
} // namespace

std::string restore_stop_marker(std::string text, std::vector<std::string> const& stop_markers)
{
    for (auto const& marker: stop_markers)
    {
        if (marker.size() < 4 || marker.rfind("</", 0) != 0 || marker.back() != '>')
            continue;
        auto const open = "<" + marker.substr(2, marker.size() - 3);
        auto const open_pos = text.rfind(open);
        if (open_pos == std::string::npos)
            continue;
        auto const close_pos = text.find(marker, open_pos);
        if (close_pos == std::string::npos)
            return text + marker;
    }
    return text;
}

HttpChatProvider::HttpChatProvider(
    std::string url, std::string model, std::string api_key, double temperature, RetryPolicy retry):
    _endpoint(Endpoint::parse(url)),
    _model(std::move(model)),
    _api_key(std::move(api_key)),
    _temperature(temperature),
    _retry(std::move(retry))
{
}

std::string HttpChatProvider::complete(ChatRequest const& request)
{
    request.validate();
    return with_retries(_retry, [&] { return complete_once(request); });
}

std::string HttpChatProvider::complete_once(ChatRequest const& request)
{
    json messages = json::array();
    for (auto const& m: request.messages)
        messages.push_back({ { "role", to_string(m.role) }, { "content", m.content } });
    json body { { "model", _model },
                { "messages", messages },
                { "stop", request.stop_markers },
                { "max_tokens", request.max_output },
                { "temperature", _temperature } };

    auto const reply = post_json(_endpoint, _api_key, body);
    auto const choices = reply.find("choices");
    if (choices == reply.end() || !choices->is_array() || choices->empty())
        throw ProviderError("endpoint response has no choices", false);
    auto const& first = choices->front();
    if (first.value("finish_reason", std::string {}) == "content_filter")
        throw ProviderError("provider refused the request (content_filter)", false);

    std::string text;
    if (first.contains("message") && first["message"].contains("content") && first["message"]["content"].is_string())
        text = first["message"]["content"].get<std::string>();
    else if (first.contains("text") && first["text"].is_string())
        text = first["text"].get<std::string>();
    else
        throw ProviderError("endpoint response has no message content", false);

    return apply_stop_markers(restore_stop_marker(std::move(text), request.stop_markers), request.stop_markers);
}

HttpEmbeddingProvider::HttpEmbeddingProvider(
    std::string url, std::string model, std::string api_key, int dim, RetryPolicy retry):
    _endpoint(Endpoint::parse(url)), _model(std::move(model)), _api_key(std::move(api_key)), _dim(dim), _retry(std::move(retry))
{
    if (dim <= 0)
        throw ConfigError("embedding dimension must be positive");
}

std::vector<EmbeddingVector> HttpEmbeddingProvider::embed(std::vector<std::string> const& texts)
{
    if (texts.empty())
        throw PreconditionError("embed requires at least one text");
    for (auto const& t: texts)
        if (t.empty())
            throw PreconditionError("embed input texts must be non-empty");

    auto const raw = with_retries(_retry, [&] {
        return post_json(_endpoint, _api_key, json { { "model", _model }, { "input", texts } }).dump();
    });
    auto const reply = json::parse(raw);

    json rows;
    if (reply.is_array())
        rows = reply;
    else if (reply.contains("data"))
        for (auto const& item: reply["data"])
            rows.push_back(item.at("embedding"));
    else
        throw ProviderError("embedding response has no data", false);

    if (rows.size() != texts.size())
        throw ProviderError(fmt::format("embedding response has {} vectors for {} inputs", rows.size(), texts.size()), false);

    std::vector<EmbeddingVector> out;
    for (auto const& row: rows)
    {
        EmbeddingVector v { row.get<std::vector<float>>() };
        if (v.dim() != _dim)
            throw ConfigError(fmt::format("embedding dimension mismatch: endpoint returned {}, run configured {}", v.dim(), _dim));
        out.push_back(std::move(v));
    }
    return out;
}

} // namespace kestrel
