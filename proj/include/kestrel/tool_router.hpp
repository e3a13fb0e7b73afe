// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <kestrel/core_types.hpp>
#include <kestrel/provider.hpp>
#include <kestrel/tool_backends.hpp>

#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <vector>

namespace kestrel
{

/// Tool descriptions shown to the router plus their dispatch bindings.
///
/// Registration happens only at stage barriers (setup, end of warm-up); lookups are
/// guarded so a registration racing with a lookup is still well-defined.
class ToolRegistry
{
  public:
    /// Throws ConfigError for an empty name or description, a null backend or a duplicate name.
    void add(ToolDescription description, std::shared_ptr<ToolBackend> backend);

    [[nodiscard]] bool contains(std::string const& name) const;
    [[nodiscard]] std::vector<ToolDescription> descriptions() const;
    /// Throws RoutingError for unknown names.
    [[nodiscard]] std::shared_ptr<ToolBackend> backend(std::string const& name) const;
    [[nodiscard]] std::size_t size() const;
    [[nodiscard]] bool empty() const { return size() == 0; }

  private:
    std::vector<ToolDescription> _descriptions;
    std::map<std::string, std::shared_ptr<ToolBackend>> _bindings;
    mutable std::shared_mutex _mutex;
};

struct RoutingOutcome
{
    std::vector<ToolCall> calls;
    std::vector<Knowledge> distilled;
    std::vector<RawKnowledgeRecord> raw;
    /// Degradations: declined routing, failed calls, empty results.
    std::string note;
    int failed_calls = 0;
};

/// Maps a help request to tool calls.
class Router
{
  public:
    virtual ~Router() = default;

    /// Returns at least one call naming a registered tool.
    /// Throws ConfigError for an empty registry, PreconditionError for an empty request and
    /// RoutingError when the request cannot be mapped (unknown tool, declined, no calls).
    virtual std::vector<ToolCall> route(std::string const& help_request, ToolRegistry const& registry, int help_index) = 0;
};

/// Chat-model router: lists the registry in its system prompt and parses `CALL <tool>: <arg>` lines.
class ModelRouter final: public Router
{
  public:
    ModelRouter(std::shared_ptr<ChatProvider> provider, int max_calls);

    std::vector<ToolCall> route(std::string const& help_request, ToolRegistry const& registry, int help_index) override;

  private:
    std::shared_ptr<ChatProvider> _provider;
    int _max_calls;
};

/// Rule-table router for offline runs.
///
/// - memory wording ("previously retrieved", "full original", "stored") → kb_retrieve, when registered
/// - calculate / convert / compute → code_exec with an arithmetic snippet built from the numbers
/// - anything else → web_search, one query per quoted phrase (or the whole request)
class KeywordRouter final: public Router
{
  public:
    explicit KeywordRouter(int max_calls);

    std::vector<ToolCall> route(std::string const& help_request, ToolRegistry const& registry, int help_index) override;

  private:
    int _max_calls;
};

/// Python snippet for "convert/calculate" help requests: multiplies the numbers found in the text.
/// Returns an empty string when the request holds no numbers.
std::string arithmetic_snippet(std::string const& help_request);

/// Produces the task-relevant view k_i of one help request's raw records.
class Distiller
{
  public:
    virtual ~Distiller() = default;

    /// Provenance of the result is always a subset of the ids in `records`.
    virtual Knowledge distill(std::string const& help_request,
                              std::vector<ToolCall> const& calls,
                              std::vector<RawKnowledgeRecord> const& records,
                              int token_budget) = 0;
};

/// Keeps sentences sharing a content term with the call arguments and cites each as [R#].
/// Code-execution output is always kept whole.
class ExtractiveDistiller final: public Distiller
{
  public:
    Knowledge distill(std::string const& help_request,
                      std::vector<ToolCall> const& calls,
                      std::vector<RawKnowledgeRecord> const& records,
                      int token_budget) override;
};

/// Chat-model distiller. Cited labels map back to record ids; labels that were not offered are dropped.
class ModelDistiller final: public Distiller
{
  public:
    explicit ModelDistiller(std::shared_ptr<ChatProvider> provider);

    Knowledge distill(std::string const& help_request,
                      std::vector<ToolCall> const& calls,
                      std::vector<RawKnowledgeRecord> const& records,
                      int token_budget) override;

  private:
    std::shared_ptr<ChatProvider> _provider;
};

/// Dispatches every call (concurrently), distills the non-verbatim records once over their union
/// and passes in-house retrieval output through untouched. Failed calls are noted, not thrown.
/// Throws RoutingError when a call names an unbound tool.
RoutingOutcome execute(std::vector<ToolCall> const& calls,
                       ToolRegistry const& registry,
                       Distiller& distiller,
                       std::string const& help_request,
                       int token_budget,
                       CallContext const& context);

/// The router agent: route, execute, distill.
class ToolRouter
{
  public:
    ToolRouter(std::shared_ptr<ToolRegistry> registry,
               std::shared_ptr<Router> router,
               std::shared_ptr<Distiller> distiller,
               int token_budget);

    /// Never throws for routing or backend failures; those become an outcome with a note and no
    /// distilled payload. Throws ConfigError for an empty registry.
    RoutingOutcome handle(std::string const& help_request, CallContext const& context);

    /// Executes calls chosen by the agent itself (in-context tool descriptions mode): raw output
    /// is returned as a single payload truncated to the token budget, without distillation.
    RoutingOutcome direct(ToolCall const& call, CallContext const& context);

    [[nodiscard]] ToolRegistry& registry() { return *_registry; }
    [[nodiscard]] ToolRegistry const& registry() const { return *_registry; }
    [[nodiscard]] int token_budget() const { return _token_budget; }

  private:
    std::shared_ptr<ToolRegistry> _registry;
    std::shared_ptr<Router> _router;
    std::shared_ptr<Distiller> _distiller;
    int _token_budget;
};

} // namespace kestrel
