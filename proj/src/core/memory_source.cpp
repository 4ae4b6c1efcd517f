/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "introloop/memory_source.hpp"

#include <algorithm>
#include <array>

#include "introloop/error.hpp"

namespace introloop {

void MemorySource::check_range(std::uint64_t offset, std::uint64_t length) const {
    if (!ByteRange{offset, length}.within(size())) {
        throw Error(ErrorCode::OutOfRange,
                    "read " + to_string(ByteRange{offset, length}) + " outside " + hex(size()) + "-byte source");
    }
}

std::vector<std::uint8_t> MemorySource::read(ByteRange range) const {
    check_range(range.start, range.length);
    std::vector<std::uint8_t> out(range.length);
    read(range.start, out);
    return out;
}

std::uint32_t MemorySource::read_u32(std::uint64_t offset) const {
    std::array<std::uint8_t, 4> b{};
    read(offset, b);
    return load_u32(b, 0);
}

std::uint64_t MemorySource::read_u64(std::uint64_t offset) const {
    std::array<std::uint8_t, 8> b{};
    read(offset, b);
    return load_u64(b, 0);
}

BufferSource::BufferSource(std::vector<std::uint8_t> bytes, std::string description,
                           std::optional<std::uint64_t> step)
    : bytes_(std::move(bytes)), description_(std::move(description)), step_(step) {}

void BufferSource::read(std::uint64_t offset, std::span<std::uint8_t> out) const {
    check_range(offset, out.size());
    std::copy_n(bytes_.begin() + static_cast<std::ptrdiff_t>(offset), out.size(), out.begin());
}

}  // namespace introloop
