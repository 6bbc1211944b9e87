#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "eqemu/error.hpp"

// Little-endian byte buffers with a trailing CRC32. Both on-disk formats
// (trajectory sets and checkpoints) are built on these.
namespace eqemu::binio {

std::uint32_t crc32(std::span<const std::byte> bytes);

class Writer {
public:
    template <typename T>
        requires std::is_arithmetic_v<T>
    void put(T value) {
        static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
        const auto* p = reinterpret_cast<const std::byte*>(&value);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    void put_array(std::span<const T> values) {
        const auto* p = reinterpret_cast<const std::byte*>(values.data());
        bytes_.insert(bytes_.end(), p, p + values.size_bytes());
    }

    void put_raw(std::string_view text) {
        const auto* p = reinterpret_cast<const std::byte*>(text.data());
        bytes_.insert(bytes_.end(), p, p + text.size());
    }

    /// u32 length prefix followed by the bytes.
    void put_string(std::string_view text) {
        put(static_cast<std::uint32_t>(text.size()));
        put_raw(text);
    }

    /// Appends CRC32 of everything written so far.
    void seal() { put(crc32(bytes_)); }

    const std::vector<std::byte>& bytes() const { return bytes_; }

    /// Writes via a temporary file and rename so readers never see a partial file.
    void write_file(const std::filesystem::path& path) const;

private:
    std::vector<std::byte> bytes_;
};

class Reader {
public:
    explicit Reader(std::vector<std::byte> bytes, std::string context)
        : bytes_(std::move(bytes)), context_(std::move(context)) {}

    static Reader from_file(const std::filesystem::path& path);

    /// Checks and strips the trailing CRC32.
    void verify_checksum();

    template <typename T>
        requires std::is_arithmetic_v<T>
    T get() {
        require(sizeof(T));
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    template <typename T>
        requires std::is_arithmetic_v<T>
    void get_array(std::span<T> out) {
        require(out.size_bytes());
        std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
        pos_ += out.size_bytes();
    }

    std::string get_raw(std::size_t n) {
        require(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::string get_string(std::size_t max_len = 1u << 24) {
        const auto len = get<std::uint32_t>();
        if (len > max_len) throw format_error(context_ + ": string length " + std::to_string(len) + " is implausible");
        return get_raw(len);
    }

    std::size_t remaining() const { return end_ - pos_; }
    std::size_t position() const { return pos_; }
    const std::string& context() const { return context_; }

    void expect_end() const {
        if (pos_ != end_)
            throw format_error(context_ + ": " + std::to_string(end_ - pos_) + " trailing bytes after payload");
    }

private:
    void require(std::size_t n) const {
        if (n > end_ - pos_)
            throw format_error(context_ + ": truncated (need " + std::to_string(n) + " bytes at offset " +
                               std::to_string(pos_) + ", have " + std::to_string(end_ - pos_) + ")");
    }

    std::vector<std::byte> bytes_;
    std::string context_;
    std::size_t pos_ = 0;
    std::size_t end_ = bytes_.size();
};

}  // namespace eqemu::binio
