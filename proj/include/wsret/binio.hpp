#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace wsret {

/// Little-endian append-only byte buffer.
class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f32(float v);
    void bytes(std::span<const std::uint8_t> b) { buf_.insert(buf_.end(), b.begin(), b.end()); }
    void str(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    /// u16 length prefix + UTF-8 bytes.
    void short_string(std::string_view s);

    const std::vector<std::uint8_t>& data() const { return buf_; }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian reader. Running past the end throws
/// Error with the message given at construction (e.g. "corrupt file").
class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> data, std::string truncated_message)
        : data_(data), msg_(std::move(truncated_message)) {}

    std::uint8_t u8();
    std::uint16_t u16();
    std::uint32_t u32();
    std::uint64_t u64();
    float f32();
    std::span<const std::uint8_t> bytes(std::size_t n);
    std::string short_string();

    std::size_t remaining() const { return data_.size() - pos_; }
    std::size_t position() const { return pos_; }

private:
    void need(std::size_t n) const;

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
    std::string msg_;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

/// Writes to a sibling temp file then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

}  // namespace wsret
