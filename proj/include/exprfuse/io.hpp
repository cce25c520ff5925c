#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace exprfuse {

// Writes `contents` to a sibling temporary file, then renames it over
// `path`, so readers never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::span<const unsigned char> contents);
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// Throws DataError when the file cannot be opened.
std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);
std::string read_file_text(const std::filesystem::path& path);

// Little-endian encoder for the binary formats.
class ByteWriter {
   public:
    void bytes(std::span<const unsigned char> data) { out_.insert(out_.end(), data.begin(), data.end()); }
    void text(std::string_view s);
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void f64(double v);

    const std::vector<unsigned char>& data() const { return out_; }
    std::vector<unsigned char> take() { return std::move(out_); }

   private:
    std::vector<unsigned char> out_;
};

// Little-endian decoder. Reading past the end throws the error type chosen
// by the caller through `fail`.
class ByteReader {
   public:
    using FailFn = void (*)(const std::string&);

    ByteReader(std::span<const unsigned char> data, FailFn fail) : data_(data), fail_(fail) {}

    std::span<const unsigned char> bytes(std::size_t n);
    std::string text(std::size_t n);
    std::uint32_t u32();
    std::uint64_t u64();
    double f64();

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

   private:
    std::span<const unsigned char> data_;
    FailFn fail_;
    std::size_t pos_ = 0;
};

std::uint32_t crc32(std::span<const unsigned char> data);

}  // namespace exprfuse
