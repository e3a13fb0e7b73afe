// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <kestrel/provider.hpp>

#include <chrono>
#include <functional>
#include <string>

namespace kestrel
{

struct RetryPolicy
{
    int attempts = 3;
    std::chrono::milliseconds initial_backoff { 1000 };
    /// Injected so tests can observe backoff without sleeping.
    std::function<void(std::chrono::milliseconds)> sleep;
};

/// Split of an endpoint URL into what cpp-httplib needs.
struct Endpoint
{
    std::string scheme_host_port;
    std::string path;

    /// Throws ConfigError for anything that is not http(s)://host[:port][/path].
    static Endpoint parse(std::string const& url);
};

/// Runs `call` under the retry policy. Only retryable ProviderErrors are retried.
std::string with_retries(RetryPolicy const& policy, std::function<std::string()> const& call);

/// Chat-completion endpoint: POST {model, messages, stop, max_tokens}; text of the first choice.
class HttpChatProvider final: public ChatProvider
{
  public:
    HttpChatProvider(std::string url, std::string model, std::string api_key, double temperature, RetryPolicy retry = {});

    std::string complete(ChatRequest const& request) override;
    [[nodiscard]] bool is_live() const override { return true; }

  private:
    std::string complete_once(ChatRequest const& request);

    Endpoint _endpoint;
    std::string _model;
    std::string _api_key;
    double _temperature;
    RetryPolicy _retry;
};

/// Embedding endpoint: POST {model, input: [texts]}; accepts `data[].embedding` or a bare list of arrays.
class HttpEmbeddingProvider final: public EmbeddingProvider
{
  public:
    HttpEmbeddingProvider(std::string url, std::string model, std::string api_key, int dim, RetryPolicy retry = {});

    std::vector<EmbeddingVector> embed(std::vector<std::string> const& texts) override;
    [[nodiscard]] int dim() const override { return _dim; }
    [[nodiscard]] std::string name() const override { return "http:" + _model; }

  private:
    Endpoint _endpoint;
    std::string _model;
    std::string _api_key;
    int _dim;
    RetryPolicy _retry;
};

/// Live models restore closing tags that the endpoint swallowed as stop sequences:
/// for a stop marker "</x>", an unclosed "<x" at the end of `text` gets the marker appended.
std::string restore_stop_marker(std::string text, std::vector<std::string> const& stop_markers);

} // namespace kestrel
