// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace kestrel::text
{

/// Lowercased runs of ASCII alphanumerics; everything else separates terms.
std::vector<std::string> terms(std::string_view input);

std::vector<std::string> whitespace_tokens(std::string_view input);

std::size_t count_tokens(std::string_view input);

/// Keeps the text up to the end of the `max_tokens`-th whitespace token, original spacing intact.
std::string truncate_tokens(std::string_view input, std::size_t max_tokens);

/// Splits at sentence terminators followed by whitespace, and at newlines.
std::vector<std::string> sentences(std::string_view input);

std::string trim(std::string_view input);
std::string to_lower(std::string_view input);
bool contains_icase(std::string_view haystack, std::string_view needle);
std::string join(std::vector<std::string> const& parts, std::string_view separator);

} // namespace kestrel::text
