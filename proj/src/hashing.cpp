// SPDX-License-Identifier: Apache-2.0
#include <promptevo/error.hpp>
#include <promptevo/hashing.hpp>

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <vector>

namespace promptevo
{

namespace
{

std::string to_hex(const unsigned char* digest, unsigned int length)
{
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(length * 2);
    for (unsigned int i = 0; i < length; ++i)
    {
        out.push_back(digits[digest[i] >> 4]);
        out.push_back(digits[digest[i] & 0x0f]);
    }
    return out;
}

EVP_MD_CTX* ctx_of(void* p)
{
    return static_cast<EVP_MD_CTX*>(p);
}

} // namespace

std::string sha256_hex(std::string_view data)
{
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest {};
    unsigned int length = 0;
    if (EVP_Digest(data.data(), data.size(), digest.data(), &length, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 digest failed");
    return to_hex(digest.data(), length);
}

std::string sha256_hex(std::span<const std::uint8_t> data)
{
    return sha256_hex(std::string_view(reinterpret_cast<const char*>(data.data()), data.size()));
}

ContentHasher::ContentHasher(): _ctx(EVP_MD_CTX_new())
{
    if (_ctx == nullptr || EVP_DigestInit_ex(ctx_of(_ctx), EVP_sha256(), nullptr) != 1)
        throw Error("sha256 init failed");
}

ContentHasher::~ContentHasher()
{
    EVP_MD_CTX_free(ctx_of(_ctx));
}

ContentHasher& ContentHasher::field(std::string_view value)
{
    field(static_cast<std::uint64_t>(value.size()));
    EVP_DigestUpdate(ctx_of(_ctx), value.data(), value.size());
    return *this;
}

ContentHasher& ContentHasher::field(std::uint64_t value)
{
    std::array<unsigned char, 8> bytes {};
    for (int i = 0; i < 8; ++i)
        bytes[i] = static_cast<unsigned char>(value >> (8 * (7 - i)));
    EVP_DigestUpdate(ctx_of(_ctx), bytes.data(), bytes.size());
    return *this;
}

ContentHasher& ContentHasher::field(double value)
{
    return field(std::bit_cast<std::uint64_t>(value));
}

std::string ContentHasher::hex_digest()
{
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest {};
    unsigned int length = 0;
    EVP_DigestFinal_ex(ctx_of(_ctx), digest.data(), &length);
    return to_hex(digest.data(), length);
}

std::uint64_t fnv1a64(std::string_view data)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c: data)
    {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string base64_encode(std::span<const std::uint8_t> bytes)
{
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int written =
        EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(written));
    return out;
}

std::string base64_decode(std::string_view text)
{
    if (text.size() % 4 != 0)
        throw ParseError("base64 length is not a multiple of 4");
    std::string out(3 * (text.size() / 4), '\0');
    const int written = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                        reinterpret_cast<const unsigned char*>(text.data()),
                                        static_cast<int>(text.size()));
    if (written < 0)
        throw ParseError("invalid base64");
    // EVP_DecodeBlock counts padding bytes as output.
    std::size_t size = static_cast<std::size_t>(written);
    if (!text.empty() && text.back() == '=')
        --size;
    if (text.size() >= 2 && text[text.size() - 2] == '=')
        --size;
    out.resize(size);
    return out;
}

} // namespace promptevo
