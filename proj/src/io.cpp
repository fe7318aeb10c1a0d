#include "pidskit/io.hpp"

#include <sstream>

#include "pidskit/errors.hpp"

namespace pidskit {

BinaryWriter::BinaryWriter(const std::filesystem::path& path)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw PipelineError("cannot open for writing: " + path.string());
}

void BinaryWriter::raw(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw PipelineError("write failed: " + path_.string());
}

void BinaryWriter::u32(std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    raw(b, 4);
}

void BinaryWriter::u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    raw(b, 8);
}

void BinaryWriter::str(std::string_view s) {
    u64(s.size());
    raw(s.data(), s.size());
}

void BinaryWriter::close() {
    out_.flush();
    if (!out_) throw PipelineError("flush failed: " + path_.string());
    out_.close();
}

BinaryReader::BinaryReader(const std::filesystem::path& path)
    : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw DataError("cannot open: " + path.string());
}

void BinaryReader::raw(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
        throw DataError("truncated file: " + path_.string());
}

std::uint8_t BinaryReader::u8() {
    std::uint8_t v;
    raw(&v, 1);
    return v;
}

std::uint32_t BinaryReader::u32() {
    unsigned char b[4];
    raw(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t BinaryReader::u64() {
    unsigned char b[8];
    raw(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

std::string BinaryReader::str() {
    const auto n = u64();
    if (n > (1ull << 32)) throw DataError("corrupt string length in " + path_.string());
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
}

void BinaryReader::expect_magic(std::string_view tag) {
    std::string got(tag.size(), '\0');
    raw(got.data(), got.size());
    if (got != tag) throw DataError("bad magic in " + path_.string() + ": expected " + std::string(tag));
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw PipelineError("cannot open for writing: " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw PipelineError("write failed: " + path.string());
}

}  // namespace pidskit
