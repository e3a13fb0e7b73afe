// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <kestrel/core_types.hpp>
#include <kestrel/provider.hpp>
#include <kestrel/tool_backends.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

namespace kestrel
{

struct ChunkingParams
{
    std::size_t chunk_size = 512;
    std::size_t overlap = 64;

    [[nodiscard]] std::size_t stride() const { return chunk_size - overlap; }
};

/// Token windows [begin, end) covering `token_count` tokens. Windows advance by the stride and
/// stop once one reaches the end, so no window is contained in its predecessor.
std::vector<std::pair<std::size_t, std::size_t>> chunk_windows(std::size_t token_count, ChunkingParams params);

struct Chunk
{
    std::string chunk_id;
    std::string record_id;
    std::size_t token_begin = 0;
    std::size_t token_end = 0;
    std::string text;
    EmbeddingVector vector;
};

struct RetrievalHit
{
    Chunk chunk;
    double score = 0.0;
    SourceLocator source;
};

struct IngestResult
{
    std::size_t new_count = 0;
    std::size_t dup_count = 0;

    bool operator==(IngestResult const&) const = default;
};

struct KnowledgeBaseStats
{
    std::size_t records = 0;
    std::size_t chunks = 0;
    std::size_t pending_index = 0;
    std::map<std::string, std::size_t> by_source;
};

/// Persistent, deduplicated store of raw tool-interaction records with a brute-force cosine index.
///
/// Records are keyed by record_id (set semantics). Ingest is serialized behind a writer lock;
/// retrieval takes a shared lock and sees a consistent snapshot. When a directory is attached,
/// every new record is appended to `records.jsonl`; `save_index()` writes `index.json`, which
/// can always be regenerated from the log.
class KnowledgeBase
{
  public:
    explicit KnowledgeBase(std::shared_ptr<EmbeddingProvider> embedder, ChunkingParams params = {});

    /// Opens (or creates) a store directory, replaying the record log and reusing the index file
    /// when its header matches the embedder and chunking parameters.
    static std::unique_ptr<KnowledgeBase> open(std::filesystem::path const& directory,
                                               std::shared_ptr<EmbeddingProvider> embedder,
                                               ChunkingParams params = {});

    /// Union by record_id. New records are chunked and embedded; when embedding fails the record
    /// is kept unindexed and queued for reindex_pending().
    IngestResult ingest(std::span<RawKnowledgeRecord const> records);

    /// Cosine-ranked chunks, ties broken by chunk_id. Throws PreconditionError when top_k < 1.
    [[nodiscard]] std::vector<RetrievalHit> retrieve(std::string_view query, int top_k) const;

    /// Retries indexing of queued records; returns how many are still pending.
    std::size_t reindex_pending();

    void save_index() const;
    /// Rewrites the record log without duplicates and refreshes the index file.
    void compact() const;

    [[nodiscard]] bool contains(std::string const& record_id) const;
    [[nodiscard]] std::optional<RawKnowledgeRecord> find(std::string const& record_id) const;
    [[nodiscard]] std::set<std::string> record_ids() const;
    [[nodiscard]] std::vector<std::string> chunk_ids() const;
    [[nodiscard]] std::size_t size() const;
    [[nodiscard]] std::size_t chunk_count() const;
    [[nodiscard]] KnowledgeBaseStats stats() const;
    [[nodiscard]] ChunkingParams chunking() const { return _params; }

    /// Switches the scoring kernel; both produce identical rankings.
    void set_parallel_scoring(bool enabled) { _parallel = enabled; }

  private:
    void index_record_locked(RawKnowledgeRecord const& record);
    void rebuild_rank_keys_locked();
    void append_log_locked(RawKnowledgeRecord const& record) const;

    std::shared_ptr<EmbeddingProvider> _embedder;
    ChunkingParams _params;
    std::optional<std::filesystem::path> _directory;
    bool _parallel = true;

    std::map<std::string, RawKnowledgeRecord> _records;
    std::set<std::string> _pending;
    std::vector<Chunk> _chunks;
    std::vector<float> _matrix; // row-major, one row per chunk
    std::vector<std::size_t> _rank_keys; // position of each chunk_id in sorted order
    mutable std::shared_mutex _mutex;
};

/// In-house retrieval tool: returns the top chunks verbatim with their parent records as provenance.
class KbRetrieveTool final: public ToolBackend
{
  public:
    KbRetrieveTool(std::shared_ptr<KnowledgeBase const> kb, int top_k);
    BackendResult invoke(std::string const& argument, CallContext const& context) override;

  private:
    std::shared_ptr<KnowledgeBase const> _kb;
    int _top_k;
};

ToolDescription kb_retrieve_description();

inline constexpr char const* kb_retrieve_tool_name = "kb_retrieve";

} // namespace kestrel
