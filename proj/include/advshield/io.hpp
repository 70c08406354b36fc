#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "advshield/errors.hpp"

// Little-endian binary helpers for the container formats. Host is assumed
// little-endian; enforced at build time for the supported targets.

namespace advshield::io {

class Writer {
public:
    void u8(std::uint8_t v) { put(&v, 1); }
    void u16(std::uint16_t v) { put(&v, 2); }
    void u32(std::uint32_t v) { put(&v, 4); }
    void u64(std::uint64_t v) { put(&v, 8); }
    void i32(std::int32_t v) { put(&v, 4); }
    void f32(float v) { put(&v, 4); }
    void f64(double v) { put(&v, 8); }
    void magic(const char m[4]) { put(m, 4); }
    void bytes(const void* p, std::size_t n) { put(p, n); }
    void f32s(const std::vector<float>& v) { put(v.data(), v.size() * 4); }
    void f64s(const std::vector<double>& v) { put(v.data(), v.size() * 8); }

    // Complete temp file then atomic rename.
    void save(const std::string& path) const {
        std::filesystem::path p(path);
        if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
        std::string tmp = path + ".tmp";
        {
            std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
            if (!f) throw DataFormatError("cannot open for writing: " + tmp);
            f.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
            if (!f) throw DataFormatError("write failed: " + tmp);
        }
        std::filesystem::rename(tmp, path);
    }

    const std::vector<char>& buffer() const { return buf_; }

private:
    void put(const void* p, std::size_t n) {
        const char* c = static_cast<const char*>(p);
        buf_.insert(buf_.end(), c, c + n);
    }
    std::vector<char> buf_;
};

class Reader {
public:
    explicit Reader(const std::string& path) : path_(path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw DataFormatError("cannot open: " + path);
        buf_.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    }

    void expect_magic(const char m[4], const char* what) {
        char got[4];
        get(got, 4);
        if (std::memcmp(got, m, 4) != 0)
            throw DataFormatError(std::string(what) + ": bad magic in " + path_);
    }

    std::uint8_t u8() { std::uint8_t v; get(&v, 1); return v; }
    std::uint16_t u16() { std::uint16_t v; get(&v, 2); return v; }
    std::uint32_t u32() { std::uint32_t v; get(&v, 4); return v; }
    std::uint64_t u64() { std::uint64_t v; get(&v, 8); return v; }
    std::int32_t i32() { std::int32_t v; get(&v, 4); return v; }
    float f32() { float v; get(&v, 4); return v; }
    double f64() { double v; get(&v, 8); return v; }
    void f32s(std::vector<float>& v, std::size_t n) { v.resize(n); get(v.data(), n * 4); }
    void f64s(std::vector<double>& v, std::size_t n) { v.resize(n); get(v.data(), n * 8); }

    bool at_end() const { return pos_ == buf_.size(); }
    const std::string& path() const { return path_; }

private:
    void get(void* p, std::size_t n) {
        if (pos_ + n > buf_.size())
            throw DataFormatError("truncated file: " + path_);
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }
    std::string path_;
    std::vector<char> buf_;
    std::size_t pos_ = 0;
};

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataFormatError("cannot open: " + path);
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) throw DataFormatError("cannot open for writing: " + tmp);
        f << content;
    }
    std::filesystem::rename(tmp, path);
}

} // namespace advshield::io
