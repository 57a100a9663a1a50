#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace bag::text {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
std::string to_upper(std::string_view s);
std::vector<std::string> split_lines(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
bool starts_with_ci(std::string_view s, std::string_view prefix);

/// Casefold, delete punctuation, collapse whitespace. Idempotent.
std::string normalize_answer(std::string_view s);

/// Token-boundary containment after normalize_answer on both sides.
/// An empty needle never matches.
bool contains_normalized(std::string_view haystack, std::string_view needle);

std::size_t word_count(std::string_view s);

}  // namespace bag::text
