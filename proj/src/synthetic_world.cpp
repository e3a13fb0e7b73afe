// SPDX-License-Identifier: Apache-2.0
#include <kestrel/synthetic_world.hpp>
#include <kestrel/text.hpp>

#include <fmt/format.h>

#include <array>
#include <fstream>
#include <random>
#include <set>

namespace kestrel
{

namespace
{
    constexpr std::string_view consonants = "bdfgklmnprstvz";
    constexpr std::string_view vowels = "aeiou";

    constexpr std::array<std::string_view, 16> filler_sentences {
        "The archive keeps this record under routine maintenance.",
        "Several volunteers reviewed the listing during the last audit.",
        "No further annotations were attached at the time of filing.",
        "The catalogue format follows the house style for registry notes.",
        "Cross references are kept in a separate ledger.",
        "This page was migrated from an older index without changes.",
        "Readers are reminded that comments are moderated weekly.",
        "The storage room temperature was logged as normal.",
        "An earlier draft of this note has been withdrawn.",
        "Formatting errors reported by readers have been corrected.",
        "The office is closed on public holidays.",
        "Printed copies are available on request at the front desk.",
        "Backups of the registry are taken every night.",
        "The committee meets on the first Monday of each month.",
        "Spelling follows the conventions of the original submission.",
        "Questions about access should be sent to the registrar.",
    };

    class Rng
    {
      public:
        explicit Rng(std::uint64_t seed): _engine(seed) {}

        /// Uniform enough for generation and, unlike the standard distributions, identical everywhere.
        std::size_t below(std::size_t n) { return static_cast<std::size_t>(_engine() % n); }

      private:
        std::mt19937_64 _engine;
    };

    std::set<std::string> filler_vocabulary()
    {
        std::set<std::string> vocabulary;
        for (auto sentence: filler_sentences)
            for (auto& term: text::terms(sentence))
                vocabulary.insert(std::move(term));
        for (auto& term: text::terms("registry entry rumor has it that points to the verified successor of this archive note"))
            vocabulary.insert(std::move(term));
        return vocabulary;
    }

    class WordSource
    {
      public:
        explicit WordSource(Rng& rng): _rng(rng), _reserved(filler_vocabulary()) {}

        std::string next()
        {
            for (int tries = 0; tries < 10'000; ++tries)
            {
                std::string word;
                for (int s = 0; s < 3; ++s)
                {
                    word.push_back(consonants[_rng.below(consonants.size())]);
                    word.push_back(vowels[_rng.below(vowels.size())]);
                }
                if (!_reserved.contains(word) && _used.insert(word).second)
                    return word;
            }
            throw GenerationError("word space exhausted");
        }

        static std::size_t capacity()
        {
            auto const syllables = consonants.size() * vowels.size();
            return syllables * syllables * syllables;
        }

      private:
        Rng& _rng;
        std::set<std::string> _reserved;
        std::set<std::string> _used;
    };
} // namespace

SyntheticWorld generate_world(WorldParams const& params)
{
    if (params.n_tasks < 1)
        throw PreconditionError("n_tasks must be >= 1");
    if (params.n_pages < 1)
        throw PreconditionError("n_pages must be >= 1");
    if (params.depth_min < 1 || params.depth_max > 6 || params.depth_min > params.depth_max)
        throw PreconditionError(fmt::format("depth range [{}, {}] must lie within [1, 6]", params.depth_min, params.depth_max));

    auto const worst_case_keys = static_cast<std::size_t>(params.n_tasks) * static_cast<std::size_t>(2 * params.depth_max + 1);
    if (worst_case_keys > WordSource::capacity() / 4)
        throw GenerationError(fmt::format("{} chains exceed the key space", params.n_tasks));

    Rng rng(params.seed);
    WordSource words(rng);
    SyntheticWorld world;
    world.params = params;

    auto filler = [&] { return std::string(filler_sentences[rng.below(filler_sentences.size())]); };

    std::vector<FixturePage> key_pages;
    for (int t = 0; t < params.n_tasks; ++t)
    {
        auto const depth = params.depth_min + static_cast<int>(rng.below(static_cast<std::size_t>(params.depth_max - params.depth_min + 1)));
        std::vector<std::string> chain;
        for (int i = 0; i <= depth; ++i)
            chain.push_back(words.next());

        for (int i = 0; i < depth; ++i)
        {
            auto const& key = chain[static_cast<std::size_t>(i)];
            auto const& next = chain[static_cast<std::size_t>(i) + 1];
            auto const decoy = words.next();
            world.successor[key] = next;
            world.rumor[key] = decoy;
            key_pages.push_back({ "",
                                  fmt::format("https://registry.example/entry/{}", key),
                                  fmt::format("Registry entry {}. {} Rumor has it that {} points to {}. {} The verified successor of this entry is {}.",
                                              key,
                                              filler(),
                                              key,
                                              decoy,
                                              filler(),
                                              next) });
        }

        Task task;
        task.id = fmt::format("syn-{:02}", t + 1);
        task.query = fmt::format("Starting from registry entry '{}', follow the successor links for {} hops. What value do you reach?",
                                 chain.front(),
                                 depth);
        task.instruction = "Reply with the value only.";
        task.gold_answer = chain.back();
        task.meta = { { "benchmark", "synthetic" }, { "depth", std::to_string(depth) }, { "start", chain.front() } };
        world.tasks.push_back(std::move(task));
    }

    if (key_pages.size() > static_cast<std::size_t>(params.n_pages))
        throw GenerationError(fmt::format("{} tasks need {} entry pages but only {} pages are allowed",
                                          params.n_tasks,
                                          key_pages.size(),
                                          params.n_pages));

    world.pages = std::move(key_pages);
    for (int n = 1; world.pages.size() < static_cast<std::size_t>(params.n_pages); ++n)
    {
        // Every fourth note spans more than one 512-token chunk.
        auto const sentences = n % 4 == 0 ? 70 + rng.below(30) : 3 + rng.below(6);
        std::string body = fmt::format("Archive note {}.", n);
        for (std::size_t s = 0; s < sentences; ++s)
            body += " " + filler();
        world.pages.push_back({ "", fmt::format("https://registry.example/notes/{}", n), std::move(body) });
    }

    for (std::size_t i = world.pages.size(); i > 1; --i)
        std::swap(world.pages[i - 1], world.pages[rng.below(i)]);
    for (std::size_t i = 0; i < world.pages.size(); ++i)
        world.pages[i].id = fmt::format("page-{:03}", i + 1);
    return world;
}

std::optional<std::string> resolve_chain(std::map<std::string, std::string> const& successor, std::string const& start, int depth)
{
    auto current = start;
    for (int i = 0; i < depth; ++i)
    {
        auto it = successor.find(current);
        if (it == successor.end())
            return std::nullopt;
        current = it->second;
    }
    return current;
}

void save_tasks(std::vector<Task> const& tasks, std::filesystem::path const& path)
{
    std::ofstream out(path);
    if (!out)
        throw Error(fmt::format("cannot write '{}'", path.string()));
    out << json(tasks).dump(2) << '\n';
}

void write_world(SyntheticWorld const& world, std::filesystem::path const& directory)
{
    std::filesystem::create_directories(directory);
    std::ofstream corpus(directory / "corpus.json");
    if (!corpus)
        throw Error(fmt::format("cannot write '{}'", (directory / "corpus.json").string()));
    corpus << json(world.pages).dump(2) << '\n';
    save_tasks(world.tasks, directory / "tasks.json");
}

std::vector<Task> load_tasks(std::filesystem::path const& path)
{
    std::ifstream in(path);
    if (!in)
        throw LoadError(fmt::format("cannot read tasks file '{}'", path.string()));
    std::vector<Task> tasks;
    try
    {
        tasks = json::parse(in).get<std::vector<Task>>();
    }
    catch (json::exception const& e)
    {
        throw LoadError(fmt::format("malformed tasks file '{}': {}", path.string(), e.what()));
    }
    try
    {
        validate_batch(tasks);
    }
    catch (PreconditionError const& e)
    {
        throw LoadError(fmt::format("invalid tasks file '{}': {}", path.string(), e.what()));
    }
    return tasks;
}

} // namespace kestrel
