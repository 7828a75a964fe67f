#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include <openssl/evp.h>

namespace celestine::digest {

using Sha256 = std::array<std::uint8_t, 32>;

inline Sha256 sha256(const void* bytes, std::size_t len) {
    Sha256 out{};
    unsigned int out_len = 0;
    if (EVP_Digest(bytes, len, out.data(), &out_len, EVP_sha256(), nullptr) != 1 ||
        out_len != out.size())
        throw std::runtime_error("sha256 digest failed");
    return out;
}

inline Sha256 sha256(std::string_view text) { return sha256(text.data(), text.size()); }

inline std::string hex(const Sha256& d) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    s.reserve(64);
    for (std::uint8_t b : d) {
        s.push_back(digits[b >> 4]);
        s.push_back(digits[b & 0xf]);
    }
    return s;
}

}  // namespace celestine::digest
