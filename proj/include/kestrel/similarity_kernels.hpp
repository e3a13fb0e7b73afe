// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

/// Brute-force cosine scoring over a row-major matrix of embeddings.
///
/// The serial versions are the reference implementation; the parallel versions split rows
/// across OpenMP threads and must produce bit-identical scores (each row is reduced by one
/// thread in the same order).
namespace kestrel::kernels
{

/// out[i] = cos(query, row i). Rows or queries with zero norm score 0.
void cosine_scores_serial(std::span<float const> query,
                          std::span<float const> matrix,
                          std::size_t dim,
                          std::span<float> out);

void cosine_scores_parallel(std::span<float const> query,
                            std::span<float const> matrix,
                            std::size_t dim,
                            std::span<float> out);

/// Row indices of the `k` best scores, best first. Ties go to the row with the smaller `rank_key`.
std::vector<std::size_t> top_k(std::span<float const> scores, std::size_t k, std::span<std::size_t const> rank_key);

/// Number of threads the parallel kernel would use (1 when built without OpenMP).
int max_threads();

} // namespace kestrel::kernels
