// SPDX-License-Identifier: Apache-2.0
// Little-endian byte buffers shared by the binary file formats.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cmega/featio.hpp"

namespace cmega::detail {

class ByteWriter {
public:
    void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
    void f32(double v) { f32(static_cast<float>(v)); }
    void bytes(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }

    const std::vector<std::uint8_t>& buffer() const { return bytes_; }
    void save(const std::filesystem::path& path) const;

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    ByteReader(std::vector<std::uint8_t> bytes, std::string source)
        : bytes_(std::move(bytes)), source_(std::move(source)) {}

    static ByteReader open(const std::filesystem::path& path);

    void expect_magic(std::string_view m);
    std::uint32_t expect_version(std::uint32_t supported);
    std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    /// Reads a finite f32 widened to double; NaN/Inf raise FormatError::non_finite.
    double f32();
    std::span<const std::uint8_t> bytes(std::size_t n);
    std::string str();

    std::size_t remaining() const { return bytes_.size() - pos_; }
    void expect_end();

    [[noreturn]] void fail(FormatErrorCode code, const std::string& what) const;

private:
    std::uint64_t get(int n);
    void need(std::size_t n);

    std::vector<std::uint8_t> bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

}  // namespace cmega::detail
