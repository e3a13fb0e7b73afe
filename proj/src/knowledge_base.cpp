// SPDX-License-Identifier: Apache-2.0
#include <kestrel/errors.hpp>
#include <kestrel/knowledge_base.hpp>
#include <kestrel/similarity_kernels.hpp>
#include <kestrel/text.hpp>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <fstream>
#include <mutex>

namespace kestrel
{

namespace
{
    constexpr char const* log_file = "records.jsonl";
    constexpr char const* index_file = "index.json";
    constexpr char const* index_format = "kestrel-kb-index";
    constexpr int index_version = 1;

    std::string make_chunk_id(std::string const& record_id, std::size_t index)
    {
        return sha256_hex(fmt::format("{}#{}", record_id, index)).substr(0, 32);
    }

    std::string window_text(std::vector<std::string> const& tokens, std::size_t begin, std::size_t end)
    {
        std::string out;
        for (std::size_t i = begin; i < end; ++i)
        {
            if (i > begin)
                out.push_back(' ');
            out += tokens[i];
        }
        return out;
    }
} // namespace

std::vector<std::pair<std::size_t, std::size_t>> chunk_windows(std::size_t token_count, ChunkingParams params)
{
    if (params.chunk_size == 0 || params.overlap >= params.chunk_size)
        throw PreconditionError("chunk overlap must be smaller than the chunk size");
    std::vector<std::pair<std::size_t, std::size_t>> windows;
    for (std::size_t start = 0; start < token_count; start += params.stride())
    {
        auto const end = std::min(start + params.chunk_size, token_count);
        windows.emplace_back(start, end);
        if (end == token_count)
            break;
    }
    return windows;
}

KnowledgeBase::KnowledgeBase(std::shared_ptr<EmbeddingProvider> embedder, ChunkingParams params):
    _embedder(std::move(embedder)), _params(params)
{
    if (!_embedder)
        throw PreconditionError("knowledge base needs an embedding provider");
    chunk_windows(0, _params); // validates parameters
}

void KnowledgeBase::index_record_locked(RawKnowledgeRecord const& record)
{
    auto const tokens = text::whitespace_tokens(record.content);
    auto const windows = chunk_windows(tokens.size(), _params);
    if (windows.empty())
        return;

    std::vector<std::string> texts;
    texts.reserve(windows.size());
    for (auto const& [begin, end]: windows)
        texts.push_back(window_text(tokens, begin, end));

    auto vectors = _embedder->embed(texts); // may throw; caller queues the record
    auto const dim = static_cast<std::size_t>(_embedder->dim());
    for (std::size_t i = 0; i < windows.size(); ++i)
    {
        if (vectors[i].values.size() != dim)
            throw ConfigError("embedding dimension mismatch against the knowledge base");
        Chunk chunk;
        chunk.chunk_id = make_chunk_id(record.record_id, i);
        chunk.record_id = record.record_id;
        chunk.token_begin = windows[i].first;
        chunk.token_end = windows[i].second;
        chunk.text = std::move(texts[i]);
        chunk.vector = std::move(vectors[i]);
        _matrix.insert(_matrix.end(), chunk.vector.values.begin(), chunk.vector.values.end());
        _chunks.push_back(std::move(chunk));
    }
}

void KnowledgeBase::rebuild_rank_keys_locked()
{
    std::vector<std::size_t> order(_chunks.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    std::sort(order.begin(), order.end(), [this](auto a, auto b) { return _chunks[a].chunk_id < _chunks[b].chunk_id; });
    _rank_keys.assign(_chunks.size(), 0);
    for (std::size_t rank = 0; rank < order.size(); ++rank)
        _rank_keys[order[rank]] = rank;
}

void KnowledgeBase::append_log_locked(RawKnowledgeRecord const& record) const
{
    if (!_directory)
        return;
    std::ofstream out(*_directory / log_file, std::ios::app);
    if (!out)
        throw Error(fmt::format("cannot append to knowledge base log in '{}'", _directory->string()));
    out << json(record).dump() << '\n';
    out.flush();
}

IngestResult KnowledgeBase::ingest(std::span<RawKnowledgeRecord const> records)
{
    std::unique_lock lock(_mutex);
    IngestResult result;
    bool indexed_any = false;
    for (auto const& record: records)
    {
        if (record.record_id.empty() || record.record_id != compute_record_id(record.source, record.content))
            throw PreconditionError(fmt::format("record '{}' has an id that does not match its content", record.record_id));
        if (_records.contains(record.record_id))
        {
            ++result.dup_count;
            continue;
        }
        _records.emplace(record.record_id, record);
        append_log_locked(record);
        ++result.new_count;
        try
        {
            index_record_locked(record);
            indexed_any = true;
        }
        catch (ProviderError const& e)
        {
            spdlog::warn("embedding failed for record {}; queued for re-index: {}", record.record_id.substr(0, 12), e.what());
            _pending.insert(record.record_id);
        }
    }
    if (indexed_any)
        rebuild_rank_keys_locked();
    return result;
}

std::size_t KnowledgeBase::reindex_pending()
{
    std::unique_lock lock(_mutex);
    for (auto it = _pending.begin(); it != _pending.end();)
    {
        try
        {
            index_record_locked(_records.at(*it));
            it = _pending.erase(it);
        }
        catch (ProviderError const&)
        {
            ++it;
        }
    }
    rebuild_rank_keys_locked();
    return _pending.size();
}

std::vector<RetrievalHit> KnowledgeBase::retrieve(std::string_view query, int top_k) const
{
    if (top_k < 1)
        throw PreconditionError("retrieve top_k must be >= 1");
    std::shared_lock lock(_mutex);
    if (_chunks.empty())
        return {};

    std::vector<float> query_vector(static_cast<std::size_t>(_embedder->dim()), 0.0f);
    if (!text::terms(query).empty())
        query_vector = _embedder->embed({ std::string(query) }).front().values;

    std::vector<float> scores(_chunks.size());
    auto const dim = static_cast<std::size_t>(_embedder->dim());
    if (_parallel)
        kernels::cosine_scores_parallel(query_vector, _matrix, dim, scores);
    else
        kernels::cosine_scores_serial(query_vector, _matrix, dim, scores);

    std::vector<RetrievalHit> hits;
    for (auto const row: kernels::top_k(scores, static_cast<std::size_t>(top_k), _rank_keys))
    {
        auto const& chunk = _chunks[row];
        hits.push_back(RetrievalHit { chunk, scores[row], _records.at(chunk.record_id).source });
    }
    return hits;
}

void KnowledgeBase::save_index() const
{
    std::shared_lock lock(_mutex);
    if (!_directory)
        return;
    json chunks = json::array();
    for (auto const& chunk: _chunks)
        chunks.push_back({ { "chunk_id", chunk.chunk_id },
                           { "record_id", chunk.record_id },
                           { "token_begin", chunk.token_begin },
                           { "token_end", chunk.token_end },
                           { "vector", chunk.vector.values } });
    json index { { "format", index_format },
                 { "version", index_version },
                 { "embedder", _embedder->name() },
                 { "dim", _embedder->dim() },
                 { "chunk_size", _params.chunk_size },
                 { "overlap", _params.overlap },
                 { "chunks", std::move(chunks) } };
    auto const tmp = *_directory / (std::string(index_file) + ".tmp");
    {
        std::ofstream out(tmp);
        out << index.dump();
    }
    std::filesystem::rename(tmp, *_directory / index_file);
}

void KnowledgeBase::compact() const
{
    {
        std::shared_lock lock(_mutex);
        if (!_directory)
            return;
        auto const tmp = *_directory / (std::string(log_file) + ".tmp");
        {
            std::ofstream out(tmp);
            for (auto const& [id, record]: _records)
                out << json(record).dump() << '\n';
        }
        std::filesystem::rename(tmp, *_directory / log_file);
    }
    save_index();
}

std::unique_ptr<KnowledgeBase> KnowledgeBase::open(std::filesystem::path const& directory,
                                                   std::shared_ptr<EmbeddingProvider> embedder,
                                                   ChunkingParams params)
{
    std::filesystem::create_directories(directory);
    auto kb = std::make_unique<KnowledgeBase>(std::move(embedder), params);

    std::vector<RawKnowledgeRecord> records;
    if (std::ifstream in(directory / log_file); in)
    {
        std::string line;
        std::size_t line_number = 0;
        while (std::getline(in, line))
        {
            ++line_number;
            if (text::trim(line).empty())
                continue;
            try
            {
                auto record = json::parse(line).get<RawKnowledgeRecord>();
                if (record.record_id != compute_record_id(record.source, record.content))
                {
                    spdlog::warn("{}:{}: record id does not match content, skipped", log_file, line_number);
                    continue;
                }
                records.push_back(std::move(record));
            }
            catch (std::exception const& e)
            {
                spdlog::warn("{}:{}: unreadable record skipped: {}", log_file, line_number, e.what());
            }
        }
    }

    std::map<std::string, std::vector<json>> stored_chunks;
    if (std::ifstream in(directory / index_file); in)
    {
        auto const index = json::parse(in, nullptr, false);
        bool const usable = !index.is_discarded() && index.value("format", "") == index_format
                            && index.value("version", 0) == index_version
                            && index.value("embedder", "") == kb->_embedder->name()
                            && index.value("dim", 0) == kb->_embedder->dim()
                            && index.value("chunk_size", std::size_t { 0 }) == params.chunk_size
                            && index.value("overlap", std::size_t { 0 }) == params.overlap;
        if (usable)
            for (auto const& c: index.at("chunks"))
                stored_chunks[c.at("record_id").get<std::string>()].push_back(c);
        else
            spdlog::info("knowledge base index in '{}' is stale; rebuilding from the record log", directory.string());
    }

    {
        std::unique_lock lock(kb->_mutex);
        for (auto& record: records)
        {
            if (kb->_records.contains(record.record_id))
                continue;
            auto const tokens = text::whitespace_tokens(record.content);
            auto const windows = chunk_windows(tokens.size(), params);
            auto const found = stored_chunks.find(record.record_id);
            bool reused = found != stored_chunks.end() && found->second.size() == windows.size();
            if (reused)
            {
                for (std::size_t i = 0; i < windows.size(); ++i)
                {
                    auto const& c = found->second[i];
                    Chunk chunk;
                    chunk.chunk_id = c.at("chunk_id").get<std::string>();
                    chunk.record_id = record.record_id;
                    chunk.token_begin = c.at("token_begin").get<std::size_t>();
                    chunk.token_end = c.at("token_end").get<std::size_t>();
                    if (chunk.token_begin != windows[i].first || chunk.token_end != windows[i].second)
                    {
                        reused = false;
                        break;
                    }
                    chunk.text = window_text(tokens, chunk.token_begin, chunk.token_end);
                    chunk.vector.values = c.at("vector").get<std::vector<float>>();
                    kb->_matrix.insert(kb->_matrix.end(), chunk.vector.values.begin(), chunk.vector.values.end());
                    kb->_chunks.push_back(std::move(chunk));
                }
            }
            kb->_records.emplace(record.record_id, record);
            if (!reused)
            {
                // Drop anything a partial reuse appended for this record, then index from scratch.
                while (!kb->_chunks.empty() && kb->_chunks.back().record_id == record.record_id)
                {
                    kb->_chunks.pop_back();
                    kb->_matrix.resize(kb->_matrix.size() - static_cast<std::size_t>(kb->_embedder->dim()));
                }
                try
                {
                    kb->index_record_locked(record);
                }
                catch (ProviderError const&)
                {
                    kb->_pending.insert(record.record_id);
                }
            }
        }
        kb->rebuild_rank_keys_locked();
        kb->_directory = directory;
    }
    return kb;
}

bool KnowledgeBase::contains(std::string const& record_id) const
{
    std::shared_lock lock(_mutex);
    return _records.contains(record_id);
}

std::optional<RawKnowledgeRecord> KnowledgeBase::find(std::string const& record_id) const
{
    std::shared_lock lock(_mutex);
    if (auto it = _records.find(record_id); it != _records.end())
        return it->second;
    return std::nullopt;
}

std::set<std::string> KnowledgeBase::record_ids() const
{
    std::shared_lock lock(_mutex);
    std::set<std::string> ids;
    for (auto const& [id, record]: _records)
        ids.insert(id);
    return ids;
}

std::vector<std::string> KnowledgeBase::chunk_ids() const
{
    std::shared_lock lock(_mutex);
    std::vector<std::string> ids;
    for (auto const& c: _chunks)
        ids.push_back(c.chunk_id);
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::size_t KnowledgeBase::size() const
{
    std::shared_lock lock(_mutex);
    return _records.size();
}

std::size_t KnowledgeBase::chunk_count() const
{
    std::shared_lock lock(_mutex);
    return _chunks.size();
}

KnowledgeBaseStats KnowledgeBase::stats() const
{
    std::shared_lock lock(_mutex);
    KnowledgeBaseStats s;
    s.records = _records.size();
    s.chunks = _chunks.size();
    s.pending_index = _pending.size();
    for (auto const& [id, record]: _records)
        ++s.by_source[std::string(to_string(record.source.kind))];
    return s;
}

// ---------------------------------------------------------------------------
// kb_retrieve
// ---------------------------------------------------------------------------

KbRetrieveTool::KbRetrieveTool(std::shared_ptr<KnowledgeBase const> kb, int top_k): _kb(std::move(kb)), _top_k(top_k)
{
    if (!_kb)
        throw PreconditionError("kb_retrieve needs a knowledge base");
    if (top_k < 1)
        throw PreconditionError("kb_retrieve top_k must be >= 1");
}

BackendResult KbRetrieveTool::invoke(std::string const& argument, CallContext const&)
{
    std::vector<RetrievalHit> hits;
    try
    {
        hits = _kb->retrieve(argument, _top_k);
    }
    catch (ProviderError const& e)
    {
        throw BackendError(fmt::format("knowledge base retrieval failed: {}", e.what()));
    }

    BackendResult result;
    std::string verbatim;
    std::set<std::string> seen;
    for (auto const& hit: hits)
    {
        verbatim += fmt::format("--- {} (chunk {}, score {:.3f}) ---\n{}\n",
                                hit.source.locator,
                                hit.chunk.chunk_id.substr(0, 8),
                                hit.score,
                                hit.chunk.text);
        if (seen.insert(hit.chunk.record_id).second)
            if (auto record = _kb->find(hit.chunk.record_id))
                result.records.push_back(std::move(*record));
    }
    if (hits.empty())
        result.note = "knowledge base is empty";
    result.verbatim = std::move(verbatim);
    return result;
}

ToolDescription kb_retrieve_description()
{
    return { kb_retrieve_tool_name,
             "Searches the local knowledge base of every page and tool output seen so far and returns the "
             "matching passages in full, unfiltered form. Use it to revisit previously retrieved sources.",
             ToolInputKind::free_text_query };
}

} // namespace kestrel
