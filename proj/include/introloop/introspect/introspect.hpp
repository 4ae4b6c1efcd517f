/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "introloop/bytes.hpp"
#include "introloop/memory_source.hpp"
#include "introloop/profile.hpp"

namespace introloop::introspect {

struct KernelInfo {
    Address kdb_address = 0;
    Address tracking_head = 0;
    Address sched_head = 0;

    friend bool operator==(const KernelInfo&, const KernelInfo&) = default;
};

// Fields parsed from one process object. Parsing never follows links.
struct ParsedObject {
    Address address = 0;
    bool tag_valid = false;
    std::uint32_t pid = 0;
    std::uint32_t state = 0;
    std::uint32_t ticks = 0;
    std::string name;
    Address track_flink = 0, track_blink = 0, sched_flink = 0, sched_blink = 0;

    friend bool operator==(const ParsedObject&, const ParsedObject&) = default;
};

enum class Classification { Active, Hidden, Residue, UnscheduledAnomaly, CorruptEntry };

std::string_view to_string(Classification c);

/// Total over the flag lattice. `tag_valid` is false only for list members
/// whose object carries no process tag; scan hits always carry one.
///
///   (scan, track, sched)  (*,1,1) ACTIVE   (*,0,1) HIDDEN
///                         (1,0,0) RESIDUE  (*,1,0) UNSCHEDULED_ANOMALY
Classification classify(bool found_by_scan, bool in_tracking, bool in_sched, bool tag_valid = true);

struct ProcessRecord {
    Address address = 0;
    std::uint32_t pid = 0;
    std::string name;
    std::uint32_t state = 0;
    std::uint32_t ticks = 0;
    bool found_by_scan = false;
    bool in_tracking = false;
    bool in_sched = false;
    bool tag_valid = true;
    Classification classification = Classification::Active;
    std::string annotation;
};

struct CrossViewReport {
    KernelInfo kernel;
    std::vector<ProcessRecord> records;  // ordered by address
    std::string source;
    std::optional<std::uint64_t> source_step;
    // Walk failures on adversarial link graphs; the partial walk is kept.
    std::vector<std::string> walk_errors;

    std::vector<const ProcessRecord*> with(Classification c) const;
    const ProcessRecord* find(Address address) const;
};

void to_json(nlohmann::json& j, const KernelInfo& k);
void to_json(nlohmann::json& j, const ProcessRecord& r);
void to_json(nlohmann::json& j, const CrossViewReport& r);

// Finds the kernel debug block by tag at alignment stride inside
// kdb_scan_region. Throws KernelDebugBlockNotFound or CorruptDebugBlock.
KernelInfo locate_kernel(const MemorySource& source, const KernelProfile& profile);

ParsedObject parse_object(const MemorySource& source, Address address, const KernelProfile& profile);

// Every aligned pool offset whose first bytes equal proc_tag, by address.
std::vector<ParsedObject> scan_processes(const MemorySource& source, const KernelProfile& profile);

// Node addresses reachable from `head` through the link at `flink_offset`,
// excluding the sentinel. Throws CycleDetected or DanglingLink.
std::vector<Address> walk_list(const MemorySource& source, Address head, std::uint32_t flink_offset,
                               const KernelProfile& profile);

CrossViewReport cross_view(const MemorySource& source, const KernelProfile& profile);

// Fixed-width text table, one row per record, ordered by address.
std::string render_report(const CrossViewReport& report);

}  // namespace introloop::introspect
