// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace promptevo
{

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view data);
std::string sha256_hex(std::span<const std::uint8_t> data);

/// Incremental SHA-256 over several fields; each field is length-prefixed so
/// ("ab","c") and ("a","bc") hash differently.
class ContentHasher
{
  public:
    ContentHasher();
    ~ContentHasher();
    ContentHasher(const ContentHasher&) = delete;
    ContentHasher& operator=(const ContentHasher&) = delete;

    ContentHasher& field(std::string_view value);
    ContentHasher& field(std::uint64_t value);
    ContentHasher& field(double value);
    std::string hex_digest();

  private:
    void* _ctx;
};

std::uint64_t fnv1a64(std::string_view data);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::string base64_decode(std::string_view text);

} // namespace promptevo
