/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "introloop/introspect/introspect.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <unordered_set>

#include "introloop/error.hpp"

namespace introloop::introspect {

namespace {

constexpr std::uint64_t kScanChunk = 1 << 20;

bool tag_at(std::span<const std::uint8_t> bytes, std::size_t off, const Tag& tag) {
    return std::equal(tag.begin(), tag.end(), bytes.begin() + static_cast<std::ptrdiff_t>(off));
}

std::string decode_name(std::span<const std::uint8_t> raw) {
    std::string out;
    for (std::uint8_t c : raw) {
        if (c == 0) break;
        if (c >= 0x20 && c < 0x7f) {
            out.push_back(static_cast<char>(c));
        } else {
            out += "\xEF\xBF\xBD";  // U+FFFD
        }
    }
    return out;
}

ParsedObject parse_bytes(std::span<const std::uint8_t> obj, Address address, const KernelProfile& p) {
    const auto& f = p.fields;
    ParsedObject o;
    o.address = address;
    o.tag_valid = tag_at(obj, 0, p.proc_tag);
    o.pid = load_u32(obj, f.pid);
    o.state = load_u32(obj, f.state);
    o.ticks = load_u32(obj, f.ticks);
    o.name = decode_name(obj.subspan(f.name, f.name_length));
    o.track_flink = load_u64(obj, f.track_flink);
    o.track_blink = load_u64(obj, f.track_blink);
    o.sched_flink = load_u64(obj, f.sched_flink);
    o.sched_blink = load_u64(obj, f.sched_blink);
    return o;
}

struct WalkResult {
    std::vector<Address> nodes;
    std::optional<Error> error;
};

WalkResult walk(const MemorySource& source, Address head, std::uint32_t flink_offset, const KernelProfile& profile) {
    const std::uint64_t size = source.size();
    const std::uint64_t node_span = std::max<std::uint64_t>(profile.object_size, flink_offset + 8ull);
    if (head > size || size - head < node_span) {
        throw Error(ErrorCode::OutOfRange, "list head " + hex(head) + " outside memory");
    }
    const std::uint64_t max_hops = size / profile.object_size;
    WalkResult r;
    std::unordered_set<Address> seen;
    Address cur = head;
    for (;;) {
        const Address next = source.read_u64(cur + flink_offset);
        if (next == head) break;
        if (next > size || size - next < node_span) {
            r.error.emplace(ErrorCode::DanglingLink, "link at " + hex(cur + flink_offset) + " points to " + hex(next) +
                                                         ", outside memory");
            break;
        }
        if (!seen.insert(next).second || r.nodes.size() >= max_hops) {
            r.error.emplace(ErrorCode::CycleDetected, "list from " + hex(head) + " revisits " + hex(next) +
                                                          " without returning to its head");
            break;
        }
        r.nodes.push_back(next);
        cur = next;
    }
    return r;
}

}  // namespace

std::string_view to_string(Classification c) {
    switch (c) {
    case Classification::Active: return "ACTIVE";
    case Classification::Hidden: return "HIDDEN";
    case Classification::Residue: return "RESIDUE";
    case Classification::UnscheduledAnomaly: return "UNSCHEDULED_ANOMALY";
    case Classification::CorruptEntry: return "CORRUPT_ENTRY";
    }
    return "UNKNOWN";
}

Classification classify(bool found_by_scan, bool in_tracking, bool in_sched, bool tag_valid) {
    if (!tag_valid) return Classification::CorruptEntry;
    if (in_tracking && in_sched) return Classification::Active;
    if (in_sched) return Classification::Hidden;
    if (in_tracking) return Classification::UnscheduledAnomaly;
    if (found_by_scan) return Classification::Residue;
    // No flag set: the record could not have been produced. Keep totality.
    return Classification::CorruptEntry;
}

std::vector<const ProcessRecord*> CrossViewReport::with(Classification c) const {
    std::vector<const ProcessRecord*> out;
    for (const auto& r : records) {
        if (r.classification == c) out.push_back(&r);
    }
    return out;
}

const ProcessRecord* CrossViewReport::find(Address address) const {
    auto it = std::lower_bound(records.begin(), records.end(), address,
                               [](const ProcessRecord& r, Address a) { return r.address < a; });
    return it != records.end() && it->address == address ? &*it : nullptr;
}

KernelInfo locate_kernel(const MemorySource& source, const KernelProfile& profile) {
    const ByteRange region = profile.kdb_scan_region;
    if (!region.within(source.size())) {
        throw Error(ErrorCode::KernelDebugBlockNotFound, "kdb_scan_region lies outside the source");
    }
    const auto bytes = source.read(region);
    const std::uint64_t size = source.size();
    std::optional<Error> corrupt;
    for (std::uint64_t off = 0; off + profile.kdb.size <= region.length; off += profile.alignment) {
        if (!tag_at(bytes, off, profile.kdb_tag)) continue;
        KernelInfo k;
        k.kdb_address = region.start + off;
        k.tracking_head = load_u64(bytes, off + profile.kdb.tracking_head);
        k.sched_head = load_u64(bytes, off + profile.kdb.sched_head);
        auto in_bounds = [&](Address a) { return a <= size && size - a >= profile.object_size; };
        if (in_bounds(k.tracking_head) && in_bounds(k.sched_head)) return k;
        if (!corrupt) {
            corrupt.emplace(ErrorCode::CorruptDebugBlock,
                            "debug block at " + hex(k.kdb_address) + " has list heads outside memory");
        }
    }
    if (corrupt) throw *corrupt;
    throw Error(ErrorCode::KernelDebugBlockNotFound,
                "no '" + tag_to_string(profile.kdb_tag) + "' debug block in " + to_string(region) + " of " +
                    source.describe());
}

ParsedObject parse_object(const MemorySource& source, Address address, const KernelProfile& profile) {
    const auto obj = source.read(ByteRange{address, profile.object_size});
    return parse_bytes(obj, address, profile);
}

std::vector<ParsedObject> scan_processes(const MemorySource& source, const KernelProfile& profile) {
    std::vector<ParsedObject> out;
    const ByteRange pool = profile.pool_region;
    if (!pool.within(source.size())) return out;
    const std::uint64_t align = profile.alignment;
    const std::uint64_t chunk = std::max(align, kScanChunk / align * align);

    // Chunks start on alignment boundaries and always hold whole objects
    // (object_size <= alignment).
    std::vector<std::uint8_t> buf;
    for (std::uint64_t base = pool.start; base + profile.object_size <= pool.end(); base += chunk) {
        const std::uint64_t len = std::min(chunk, pool.end() - base);
        buf.resize(len);
        source.read(base, buf);
        for (std::uint64_t off = 0; off + profile.object_size <= len; off += align) {
            if (!tag_at(buf, off, profile.proc_tag)) continue;
            out.push_back(parse_bytes(std::span(buf).subspan(off, profile.object_size), base + off, profile));
        }
    }
    return out;
}

std::vector<Address> walk_list(const MemorySource& source, Address head, std::uint32_t flink_offset,
                               const KernelProfile& profile) {
    auto r = walk(source, head, flink_offset, profile);
    if (r.error) throw *r.error;
    return std::move(r.nodes);
}

CrossViewReport cross_view(const MemorySource& source, const KernelProfile& profile) {
    CrossViewReport report;
    report.kernel = locate_kernel(source, profile);
    report.source = source.describe();
    report.source_step = source.step();

    std::map<Address, ProcessRecord> records;
    std::map<Address, ParsedObject> parsed;
    auto adopt = [&](const ParsedObject& o) {
        ProcessRecord r;
        r.address = o.address;
        r.pid = o.pid;
        r.name = o.name;
        r.state = o.state;
        r.ticks = o.ticks;
        r.tag_valid = o.tag_valid;
        parsed.emplace(o.address, o);
        return records.emplace(o.address, std::move(r)).first;
    };

    for (const auto& o : scan_processes(source, profile)) adopt(o)->second.found_by_scan = true;

    auto visit = [&](Address head, std::uint32_t flink_offset, const char* list, bool ProcessRecord::*flag) {
        auto w = walk(source, head, flink_offset, profile);
        if (w.error) report.walk_errors.push_back(std::string(list) + ": " + w.error->what());
        for (Address node : w.nodes) {
            ParsedObject now = parse_object(source, node, profile);
            auto it = records.find(node);
            if (it == records.end()) {
                it = adopt(now);
            } else if (parsed.at(node) != now) {
                // Scan-time fields win; the record keeps what the scan saw.
                it->second.annotation = std::string("fields changed between scan and ") + list + " walk";
            }
            it->second.*flag = true;
        }
    };
    visit(report.kernel.tracking_head, profile.fields.track_flink, "tracking", &ProcessRecord::in_tracking);
    visit(report.kernel.sched_head, profile.fields.sched_flink, "sched", &ProcessRecord::in_sched);

    report.records.reserve(records.size());
    for (auto& [addr, r] : records) {
        r.classification = classify(r.found_by_scan, r.in_tracking, r.in_sched, r.tag_valid);
        report.records.push_back(std::move(r));
    }
    return report;
}

std::string render_report(const CrossViewReport& report) {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof(line), "%-18s %8s  %-16s %-10s %-5s %-5s %-5s %s\n", "Address", "PID", "Name", "State",
                  "Scan", "Track", "Sched", "Class");
    out << line;
    auto yes = [](bool b) { return b ? "yes" : "no"; };
    for (const auto& r : report.records) {
        const std::string_view state = r.state <= 2 ? to_string(static_cast<ProcessState>(r.state)) : "?";
        std::snprintf(line, sizeof(line), "%-18s %8u  %-16s %-10.*s %-5s %-5s %-5s %.*s\n", hex(r.address).c_str(),
                      r.pid, r.name.c_str(), static_cast<int>(state.size()), state.data(), yes(r.found_by_scan),
                      yes(r.in_tracking), yes(r.in_sched), static_cast<int>(to_string(r.classification).size()),
                      to_string(r.classification).data());
        out << line;
    }
    return out.str();
}

void to_json(nlohmann::json& j, const KernelInfo& k) {
    j = {{"kdb_address", k.kdb_address}, {"tracking_head", k.tracking_head}, {"sched_head", k.sched_head}};
}

void to_json(nlohmann::json& j, const ProcessRecord& r) {
    j = {{"address", r.address},
         {"address_hex", hex(r.address)},
         {"pid", r.pid},
         {"name", r.name},
         {"state", r.state <= 2 ? std::string(to_string(static_cast<ProcessState>(r.state))) : std::string("?")},
         {"ticks", r.ticks},
         {"found_by_scan", r.found_by_scan},
         {"in_tracking", r.in_tracking},
         {"in_sched", r.in_sched},
         {"classification", to_string(r.classification)}};
    if (!r.annotation.empty()) j["annotation"] = r.annotation;
}

void to_json(nlohmann::json& j, const CrossViewReport& r) {
    nlohmann::json counts = nlohmann::json::object();
    for (auto c : {Classification::Active, Classification::Hidden, Classification::Residue,
                   Classification::UnscheduledAnomaly, Classification::CorruptEntry}) {
        counts[std::string(to_string(c))] = r.with(c).size();
    }
    j = {{"source", r.source},
         {"source_step", r.source_step ? nlohmann::json(*r.source_step) : nlohmann::json(nullptr)},
         {"kernel", r.kernel},
         {"records", r.records},
         {"counts", counts},
         {"walk_errors", r.walk_errors}};
}

}  // namespace introloop::introspect
