#pragma once

// Little-endian binary streams for cached stage artifacts.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

namespace pidskit {

class BinaryWriter {
public:
    explicit BinaryWriter(const std::filesystem::path& path);

    void u8(std::uint8_t v) { raw(&v, 1); }
    void u32(std::uint32_t v);
    void u64(std::uint64_t v);
    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void str(std::string_view s);
    void magic(std::string_view tag) { raw(tag.data(), tag.size()); }

    void close();

private:
    void raw(const void* p, std::size_t n);

    std::filesystem::path path_;
    std::ofstream out_;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::filesystem::path& path);

    std::uint8_t u8();
    std::uint32_t u32();
    std::uint64_t u64();
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str();
    // Throws DataError unless the next bytes equal `tag`.
    void expect_magic(std::string_view tag);

private:
    void raw(void* p, std::size_t n);

    std::filesystem::path path_;
    std::ifstream in_;
};

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);

}  // namespace pidskit
