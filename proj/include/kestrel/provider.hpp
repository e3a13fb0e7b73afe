// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <kestrel/core_types.hpp>

#include <cstddef>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace kestrel
{

enum class Role
{
    system,
    user,
    assistant,
};

std::string_view to_string(Role role);

struct ChatMessage
{
    Role role = Role::user;
    std::string content;
};

struct ChatRequest
{
    std::vector<ChatMessage> messages;
    std::vector<std::string> stop_markers;
    int max_output = 2048;

    /// Throws PreconditionError unless messages is non-empty and starts with a system message.
    void validate() const;

    [[nodiscard]] std::string const& system_prompt() const;
    /// All message contents joined by newlines; used by replay predicates.
    [[nodiscard]] std::string flattened() const;
};

/// Generator behind the agent, router, distiller and reflector roles.
class ChatProvider
{
  public:
    virtual ~ChatProvider() = default;

    /// Returns generated text, cut after the earliest stop marker when one is produced.
    /// Throws ProviderError; retryable() distinguishes transport failures from refusals.
    virtual std::string complete(ChatRequest const& request) = 0;

    /// True for providers that reach a real model endpoint.
    [[nodiscard]] virtual bool is_live() const { return false; }
};

/// Cuts `text` right after the earliest occurrence of any stop marker (marker kept).
std::string apply_stop_markers(std::string text, std::vector<std::string> const& stop_markers);

struct EmbeddingVector
{
    std::vector<float> values;

    [[nodiscard]] int dim() const { return static_cast<int>(values.size()); }
};

double cosine(EmbeddingVector const& a, EmbeddingVector const& b);

class EmbeddingProvider
{
  public:
    virtual ~EmbeddingProvider() = default;

    /// One vector per input, in order. Throws PreconditionError for empty input or empty texts.
    virtual std::vector<EmbeddingVector> embed(std::vector<std::string> const& texts) = 0;

    [[nodiscard]] virtual int dim() const = 0;
    /// Identifies the embedding scheme in persisted index headers.
    [[nodiscard]] virtual std::string name() const = 0;
};

/// Hashed term-frequency embedding: lowercase alphanumeric terms, FNV-1a into `dim` buckets,
/// L2-normalised. Pure and platform independent.
class HashedTermEmbedder final: public EmbeddingProvider
{
  public:
    static constexpr int default_dim = 256;

    explicit HashedTermEmbedder(int dim = default_dim);

    std::vector<EmbeddingVector> embed(std::vector<std::string> const& texts) override;
    [[nodiscard]] int dim() const override { return _dim; }
    [[nodiscard]] std::string name() const override;

    [[nodiscard]] EmbeddingVector embed_one(std::string_view text) const;

  private:
    int _dim;
};

std::uint64_t fnv1a64(std::string_view data);

// ---------------------------------------------------------------------------
// Scripted replay
// ---------------------------------------------------------------------------

/// Returns nullopt when the request is acceptable, otherwise a description of the first mismatch.
using RequestPredicate = std::function<std::optional<std::string>(ChatRequest const&)>;

struct ScriptEntry
{
    RequestPredicate expect;
    std::string response;
};

/// Predicate: every needle occurs somewhere in the request.
RequestPredicate expect_contains(std::vector<std::string> needles);
/// Predicate: the system prompt starts with `header`, then every needle occurs.
RequestPredicate expect_role(std::string header, std::vector<std::string> needles = {});
RequestPredicate accept_any();

/// Consumes one script entry per complete() call. The cursor is mutex-guarded.
class ScriptedProvider final: public ChatProvider
{
  public:
    /// Throws PreconditionError on an empty script.
    explicit ScriptedProvider(std::vector<ScriptEntry> script);

    std::string complete(ChatRequest const& request) override;

    [[nodiscard]] std::size_t consumed() const;
    [[nodiscard]] std::size_t remaining() const;
    [[nodiscard]] std::vector<std::string> divergences() const;

  private:
    std::vector<ScriptEntry> _script;
    std::size_t _cursor = 0;
    std::vector<std::string> _divergences;
    mutable std::mutex _mutex;
};

/// Loads a replay script from JSON: [{ "role"?: role key, "contains"?: [..], "response": ".." }].
/// Role keys resolve through prompts::header_for_role.
std::vector<ScriptEntry> load_script(json const& entries);

} // namespace kestrel
