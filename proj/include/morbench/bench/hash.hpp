#pragma once

#include "morbench/core.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <memory>
#include <string>

namespace morbench::bench {

/// Incremental SHA-256 (OpenSSL EVP), hex-encoded.
class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1)
            throw Error("SHA-256 initialization failed");
    }

    Sha256& update(const void* data, std::size_t len) {
        if (EVP_DigestUpdate(ctx_.get(), data, len) != 1) throw Error("SHA-256 update failed");
        return *this;
    }
    Sha256& update(const std::string& s) { return update(s.data(), s.size()); }

    std::string hex() {
        std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx_.get(), md.data(), &len) != 1) throw Error("SHA-256 final failed");
        static constexpr char digits[] = "0123456789abcdef";
        std::string out;
        out.reserve(2 * len);
        for (unsigned int i = 0; i < len; ++i) {
            out.push_back(digits[md[i] >> 4]);
            out.push_back(digits[md[i] & 0xF]);
        }
        return out;
    }

private:
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string sha256_hex(const std::string& s) { return Sha256().update(s).hex(); }

inline std::string file_sha256(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open for hashing: " + path);
    Sha256 h;
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return h.hex();
}

}  // namespace morbench::bench
