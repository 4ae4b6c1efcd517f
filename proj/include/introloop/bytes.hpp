/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>

namespace introloop {

using Address = std::uint64_t;

// Half-open byte interval [start, start + length) of the flat physical space.
struct ByteRange {
    std::uint64_t start = 0;
    std::uint64_t length = 0;

    std::uint64_t end() const noexcept { return start + length; }
    bool empty() const noexcept { return length == 0; }
    bool contains(std::uint64_t addr) const noexcept { return addr >= start && addr < end(); }
    bool within(std::uint64_t size) const noexcept { return start <= size && length <= size - start; }
    bool intersects(const ByteRange& o) const noexcept {
        return start < o.end() && o.start < end();
    }

    friend bool operator==(const ByteRange&, const ByteRange&) = default;
};

std::string to_string(const ByteRange& r);
std::string hex(std::uint64_t value);

// Little-endian field codecs. Memory images are always little-endian.
inline std::uint32_t load_u32(std::span<const std::uint8_t> bytes, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | bytes[off + static_cast<std::size_t>(i)];
    return v;
}

inline std::uint64_t load_u64(std::span<const std::uint8_t> bytes, std::size_t off) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | bytes[off + static_cast<std::size_t>(i)];
    return v;
}

inline void store_u32(std::span<std::uint8_t> bytes, std::size_t off, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes[off + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v >> (8 * i));
}

inline void store_u64(std::span<std::uint8_t> bytes, std::size_t off, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes[off + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v >> (8 * i));
}

}  // namespace introloop
