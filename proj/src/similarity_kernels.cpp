// SPDX-License-Identifier: Apache-2.0
#include <kestrel/errors.hpp>
#include <kestrel/similarity_kernels.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#if defined(_OPENMP)
    #include <omp.h>
#endif

namespace kestrel::kernels
{

namespace
{
    void check_shapes(std::span<float const> query, std::span<float const> matrix, std::size_t dim, std::span<float> out)
    {
        if (dim == 0 || query.size() != dim)
            throw PreconditionError("query length must equal the embedding dimension");
        if (matrix.size() % dim != 0 || matrix.size() / dim != out.size())
            throw PreconditionError("score buffer does not match the matrix row count");
    }

    float norm_of(float const* v, std::size_t dim)
    {
        float sum = 0.0f;
        for (std::size_t i = 0; i < dim; ++i)
            sum += v[i] * v[i];
        return std::sqrt(sum);
    }

    inline float row_score(float const* q, float q_norm, float const* row, std::size_t dim)
    {
        float dot = 0.0f;
        float row_sq = 0.0f;
        for (std::size_t i = 0; i < dim; ++i)
        {
            dot += q[i] * row[i];
            row_sq += row[i] * row[i];
        }
        if (q_norm == 0.0f || row_sq == 0.0f)
            return 0.0f;
        return dot / (q_norm * std::sqrt(row_sq));
    }
} // namespace

void cosine_scores_serial(std::span<float const> query, std::span<float const> matrix, std::size_t dim, std::span<float> out)
{
    check_shapes(query, matrix, dim, out);
    auto const q_norm = norm_of(query.data(), dim);
    for (std::size_t r = 0; r < out.size(); ++r)
        out[r] = row_score(query.data(), q_norm, matrix.data() + r * dim, dim);
}

void cosine_scores_parallel(std::span<float const> query, std::span<float const> matrix, std::size_t dim, std::span<float> out)
{
    check_shapes(query, matrix, dim, out);
    auto const q_norm = norm_of(query.data(), dim);
    auto const rows = static_cast<std::ptrdiff_t>(out.size());
    float const* q = query.data();
    float const* m = matrix.data();
    float* o = out.data();

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < rows; ++r)
        o[r] = row_score(q, q_norm, m + static_cast<std::size_t>(r) * dim, dim);
}

std::vector<std::size_t> top_k(std::span<float const> scores, std::size_t k, std::span<std::size_t const> rank_key)
{
    if (rank_key.size() != scores.size())
        throw PreconditionError("rank key length must equal the score count");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t { 0 });
    auto const better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b])
            return scores[a] > scores[b];
        return rank_key[a] < rank_key[b];
    };
    k = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);
    order.resize(k);
    return order;
}

int max_threads()
{
#if defined(_OPENMP)
    return omp_get_max_threads();
#else
    return 1;
#endif
}

} // namespace kestrel::kernels
