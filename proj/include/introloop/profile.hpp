/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "introloop/bytes.hpp"

namespace introloop {

using Tag = std::array<std::uint8_t, 4>;

Tag make_tag(std::string_view ascii);
std::string tag_to_string(const Tag& tag);

enum class ProcessState : std::uint32_t { Init = 0, Running = 1, Terminated = 2 };

std::string_view to_string(ProcessState state);

// Byte offsets of the fields inside a process object.
struct ProcessLayout {
    std::uint32_t pid = 4;
    std::uint32_t state = 8;
    std::uint32_t ticks = 12;
    std::uint32_t name = 16;
    std::uint32_t name_length = 16;
    std::uint32_t track_flink = 32;
    std::uint32_t track_blink = 40;
    std::uint32_t sched_flink = 48;
    std::uint32_t sched_blink = 56;
};

// Byte offsets inside the kernel debug block that anchors both list heads.
struct DebugBlockLayout {
    std::uint32_t tracking_head = 8;
    std::uint32_t sched_head = 16;
    std::uint32_t size = 64;
};

/// Layout description that every writer (the simulated kernel) and every
/// reader (carving, list walking, blocking) obeys. Profiles are plain data
/// and round-trip through JSON, so alternative layouts can be exercised
/// without touching code.
///
/// The tag always sits at offset 0 of both process objects and the debug
/// block. List head sentinels are object-sized nodes without a tag whose
/// link fields sit at the same offsets as in a process object.
struct KernelProfile {
    std::uint32_t version = 1;
    Tag proc_tag = make_tag("PROC");
    std::uint32_t object_size = 64;
    std::uint32_t alignment = 64;
    ByteRange pool_region;
    ProcessLayout fields;
    Tag kdb_tag = make_tag("SIMK");
    ByteRange kdb_scan_region;
    DebugBlockLayout kdb;

    /// Default layout for a memory of `memory_size` bytes: the kernel image
    /// window is the second sixteenth of memory and the object pool spans
    /// [size/4, size/2), a quarter of memory.
    static KernelProfile standard(std::uint64_t memory_size);

    /// Throws Error(InvalidConfig) unless every offset fits inside an object
    /// and both regions fit inside `memory_size`.
    void validate(std::uint64_t memory_size) const;

    std::uint64_t max_objects(std::uint64_t memory_size) const { return memory_size / object_size; }
};

void to_json(nlohmann::json& j, const KernelProfile& p);
void from_json(const nlohmann::json& j, KernelProfile& p);

KernelProfile load_profile(const std::filesystem::path& path);

}  // namespace introloop
