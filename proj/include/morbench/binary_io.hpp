#pragma once

// Little-endian binary helpers shared by the snapshot, basis and model files.

#include "morbench/core.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>

namespace morbench::io {

static_assert(std::endian::native == std::endian::little,
              "artifact files are written in native order and must be little-endian");

using Magic = std::array<char, 8>;

/// Pads `tag` with NUL bytes to eight characters ("MORROB1" -> "MORROB1\0").
inline Magic make_magic(std::string_view tag) {
    Magic m{};
    require(tag.size() <= m.size(), "magic tag longer than 8 bytes");
    std::memcpy(m.data(), tag.data(), tag.size());
    return m;
}

class Writer {
public:
    explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) throw ValidationError("cannot open for writing: " + path);
    }

    void magic(std::string_view tag) {
        auto m = make_magic(tag);
        out_.write(m.data(), static_cast<std::streamsize>(m.size()));
    }
    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void f64(double v) { raw(&v, sizeof v); }
    void f64s(const double* data, std::size_t count) { raw(data, count * sizeof(double)); }

    void close() {
        out_.flush();
        if (!out_) throw ValidationError("write failed: " + path_);
        out_.close();
    }

private:
    void raw(const void* p, std::size_t bytes) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(bytes));
    }

    std::string path_;
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) throw ValidationError("cannot open for reading: " + path);
    }

    void expect_magic(std::string_view tag) {
        Magic got{};
        raw(got.data(), got.size());
        if (got != make_magic(tag))
            throw ValidationError(concat(path_, ": bad magic, expected ", tag));
    }
    std::uint64_t u64() {
        std::uint64_t v;
        raw(&v, sizeof v);
        return v;
    }
    double f64() {
        double v;
        raw(&v, sizeof v);
        return v;
    }
    void f64s(double* data, std::size_t count) { raw(data, count * sizeof(double)); }

    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

private:
    void raw(void* p, std::size_t bytes) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(bytes));
        if (!in_) throw ValidationError(path_ + ": truncated file");
    }

    std::string path_;
    std::ifstream in_;
};

}  // namespace morbench::io
