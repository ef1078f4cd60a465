#pragma once

// Little-endian binary readers/writers shared by the on-disk formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "langfield/errors.hpp"

namespace langfield::detail {

template <typename T>
T to_little_endian(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
        unsigned char bytes[sizeof(T)];
        std::memcpy(bytes, &v, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) {
            std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
        }
        std::memcpy(&v, bytes, sizeof(T));
    }
    return v;
}

class BinaryWriter {
public:
    void magic(std::string_view m) { buf_.insert(buf_.end(), m.begin(), m.end()); }

    template <typename T>
    void put(T v) {
        v = to_little_endian(v);
        const auto* p = reinterpret_cast<const char*>(&v);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }

    template <typename T>
    void put_all(std::span<const T> values) {
        for (const T& v : values) {
            put(v);
        }
    }

    const std::vector<char>& bytes() const { return buf_; }

    void write_file(const std::filesystem::path& path) const {
        if (path.has_parent_path()) {
            std::filesystem::create_directories(path.parent_path());
        }
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("cannot open for writing: " + path.string());
        }
        out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!out) {
            throw std::runtime_error("write failed: " + path.string());
        }
    }

private:
    std::vector<char> buf_;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::filesystem::path& path) : what_(path.string()) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw FormatError("cannot open " + what_);
        }
        buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    void expect_magic(std::string_view m) {
        if (remaining() < m.size() || std::string_view(buf_.data() + pos_, m.size()) != m) {
            throw FormatError(what_ + ": bad magic, expected \"" + std::string(m) + "\"");
        }
        pos_ += m.size();
    }

    template <typename T>
    T get() {
        if (remaining() < sizeof(T)) {
            throw FormatError(what_ + ": truncated file at byte " + std::to_string(pos_));
        }
        T v;
        std::memcpy(&v, buf_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return to_little_endian(v);
    }

    template <typename T>
    void get_all(std::span<T> out) {
        if (remaining() / sizeof(T) < out.size()) {
            throw FormatError(what_ + ": truncated file at byte " + std::to_string(pos_));
        }
        for (T& v : out) {
            v = get<T>();
        }
    }

    std::size_t remaining() const { return buf_.size() - pos_; }
    const std::string& name() const { return what_; }

private:
    std::string what_;
    std::vector<char> buf_;
    std::size_t pos_ = 0;
};

} // namespace langfield::detail
