/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "introloop/bytes.hpp"

namespace introloop {

// Readable byte space of known size: a live guest, an opened dump, or an
// in-memory image. Reads outside [0, size()) throw Error(OutOfRange).
class MemorySource {
public:
    virtual ~MemorySource() = default;

    virtual std::uint64_t size() const = 0;
    virtual void read(std::uint64_t offset, std::span<std::uint8_t> out) const = 0;
    virtual std::string describe() const = 0;

    // Guest step the most recent read observed, when the source is live or
    // was captured from a live guest.
    virtual std::optional<std::uint64_t> step() const { return std::nullopt; }

    std::vector<std::uint8_t> read(ByteRange range) const;
    std::uint32_t read_u32(std::uint64_t offset) const;
    std::uint64_t read_u64(std::uint64_t offset) const;

protected:
    void check_range(std::uint64_t offset, std::uint64_t length) const;
};

class BufferSource final : public MemorySource {
public:
    using MemorySource::read;

    explicit BufferSource(std::vector<std::uint8_t> bytes, std::string description = "buffer",
                          std::optional<std::uint64_t> step = std::nullopt);

    std::uint64_t size() const override { return bytes_.size(); }
    void read(std::uint64_t offset, std::span<std::uint8_t> out) const override;
    std::string describe() const override { return description_; }
    std::optional<std::uint64_t> step() const override { return step_; }

    std::span<const std::uint8_t> bytes() const { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
    std::string description_;
    std::optional<std::uint64_t> step_;
};

}  // namespace introloop
