#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace bag {

/// Lower-case hex SHA-256 (64 characters).
std::string sha256_hex(std::string_view data);

/// Selection hash used for intent sampling. Defined as FNV-1a 64 over the
/// eight little-endian bytes of `seed` followed by the UTF-8 bytes of `key`,
/// passed through the splitmix64 finalizer. Independent of host byte order.
std::uint64_t hash64(std::uint64_t seed, std::string_view key);

inline constexpr std::string_view kHash64Description =
    "fnv1a64(le64(seed) || utf8(question_id)) then splitmix64 finalizer";

}  // namespace bag
