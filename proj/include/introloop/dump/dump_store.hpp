/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include <json.hpp>

#include "introloop/bytes.hpp"
#include "introloop/memory_source.hpp"

namespace introloop::dump {

namespace fs = std::filesystem;

struct BackupRange {
    std::uint64_t start = 0;
    std::uint64_t length = 0;
    fs::path backup_path;

    ByteRange range() const { return {start, length}; }
};

struct Checkpoint {
    std::uint32_t id = 0;
    std::vector<BackupRange> ranges;
    std::uint64_t source_step = 0;
};

/// A dynamic dump: one raw base image that is overwritten in place by range
/// updates, plus the chain of checkpoints whose backup files hold the bytes
/// each update replaced. Checkpoint 0 is the initial full dump.
///
/// The manifest lives next to the base image as `<base>.manifest.json`.
struct DumpManifest {
    fs::path base_path;
    std::uint64_t memory_size = 0;
    std::vector<Checkpoint> checkpoints;
    std::uint64_t created_at_step = 0;

    fs::path manifest_path() const { return manifest_path_for(base_path); }
    std::uint32_t latest() const { return checkpoints.back().id; }
    const Checkpoint& checkpoint(std::uint32_t id) const;

    void save() const;
    static DumpManifest load(const fs::path& base_or_manifest);
    static fs::path manifest_path_for(const fs::path& base);
};

void to_json(nlohmann::json& j, const DumpManifest& m);
void from_json(const nlohmann::json& j, DumpManifest& m);

// Byte counters for the acquisition/storage cost of an operation.
struct IoStats {
    std::uint64_t bytes_read_from_source = 0;
    std::uint64_t bytes_written_to_disk = 0;
};

// Writes a step-atomic snapshot of the whole source to `path` (raw, headerless:
// file offset == physical address) and a manifest holding checkpoint 0.
DumpManifest dump_full(const MemorySource& source, const fs::path& path, IoStats* stats = nullptr);

// Refreshes `range` of the base image from the source, saving the bytes it
// replaces to `<base>.ckpt<N>.<start>-<end>.bak`, and appends checkpoint N.
Checkpoint dump_update_range(DumpManifest& manifest, ByteRange range, const MemorySource& source,
                             IoStats* stats = nullptr);

// Same as dump_update_range, additionally reporting the changed sub-ranges
// between the previous head and the new checkpoint within `range`.
struct RangeUpdate {
    Checkpoint checkpoint;
    std::vector<ByteRange> changes;
};
RangeUpdate dump_update_range_with_diff(DumpManifest& manifest, ByteRange range, const MemorySource& source,
                                        IoStats* stats = nullptr, std::uint64_t granularity = 8);

// Bytes of `range` as they were at checkpoint `checkpoint_id`.
std::vector<std::uint8_t> reconstruct(const DumpManifest& manifest, std::uint32_t checkpoint_id, ByteRange range);

/// Maximal contiguous sub-ranges of `range` whose bytes differ between two
/// checkpoints, at `granularity`-byte resolution: a unit (aligned to absolute
/// addresses) is reported whole when any byte in it differs. The default of 8
/// reports each changed machine word / link field exactly once.
std::vector<ByteRange> diff_checkpoints(const DumpManifest& manifest, std::uint32_t id_a, std::uint32_t id_b,
                                        ByteRange range, std::uint64_t granularity = 8);

// The comparison kernel behind diff_checkpoints; `a` and `b` both cover `range`.
std::vector<ByteRange> diff_bytes(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, ByteRange range,
                                  std::uint64_t granularity = 8);

// Read-only source over the base image (the latest checkpoint).
std::unique_ptr<MemorySource> open_dump(const DumpManifest& manifest);
std::unique_ptr<MemorySource> open_dump(const fs::path& path);

// In-memory source holding the full image as of an older checkpoint.
std::unique_ptr<MemorySource> open_checkpoint(const DumpManifest& manifest, std::uint32_t checkpoint_id);

// Deletes the base image, its manifest and every backup file.
void remove_dump(const DumpManifest& manifest);

}  // namespace introloop::dump
