/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "introloop/profile.hpp"

#include <fstream>

#include "introloop/error.hpp"

namespace introloop {

using nlohmann::json;

Tag make_tag(std::string_view ascii) {
    if (ascii.size() != 4) {
        throw Error(ErrorCode::InvalidConfig, "tag must be exactly 4 bytes: '" + std::string(ascii) + "'");
    }
    Tag t{};
    for (std::size_t i = 0; i < 4; ++i) t[i] = static_cast<std::uint8_t>(ascii[i]);
    return t;
}

std::string tag_to_string(const Tag& tag) {
    return std::string(tag.begin(), tag.end());
}

std::string_view to_string(ProcessState state) {
    switch (state) {
    case ProcessState::Init: return "INIT";
    case ProcessState::Running: return "RUNNING";
    case ProcessState::Terminated: return "TERMINATED";
    }
    return "UNKNOWN";
}

KernelProfile KernelProfile::standard(std::uint64_t memory_size) {
    KernelProfile p;
    p.kdb_scan_region = {memory_size / 16, memory_size / 16};
    p.pool_region = {memory_size / 4, memory_size / 4};
    return p;
}

void KernelProfile::validate(std::uint64_t memory_size) const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, "profile: " + what); };
    if (object_size < 8 || alignment == 0) fail("object_size and alignment must be positive");
    if (alignment < object_size) fail("alignment smaller than object_size lets objects overlap");
    auto fits = [&](std::uint32_t off, std::uint32_t len, std::uint32_t limit) {
        return off >= 4 && static_cast<std::uint64_t>(off) + len <= limit;
    };
    if (!fits(fields.pid, 4, object_size) || !fits(fields.state, 4, object_size) ||
        !fits(fields.ticks, 4, object_size) || !fits(fields.name, fields.name_length, object_size) ||
        !fits(fields.track_flink, 8, object_size) || !fits(fields.track_blink, 8, object_size) ||
        !fits(fields.sched_flink, 8, object_size) || !fits(fields.sched_blink, 8, object_size)) {
        fail("process field offsets exceed object_size or overlap the tag");
    }
    if (!fits(kdb.tracking_head, 8, kdb.size) || !fits(kdb.sched_head, 8, kdb.size)) {
        fail("debug block offsets exceed its size");
    }
    if (pool_region.empty() || !pool_region.within(memory_size)) fail("pool_region outside memory");
    if (kdb_scan_region.empty() || !kdb_scan_region.within(memory_size)) fail("kdb_scan_region outside memory");
    if (pool_region.start % alignment != 0 || kdb_scan_region.start % alignment != 0) {
        fail("regions must start on an alignment boundary");
    }
    if (pool_region.intersects(kdb_scan_region)) fail("pool_region and kdb_scan_region overlap");
}

namespace {

json region_json(const ByteRange& r) { return json{{"start", r.start}, {"length", r.length}}; }

ByteRange region_from(const json& j) {
    return {j.at("start").get<std::uint64_t>(), j.at("length").get<std::uint64_t>()};
}

}  // namespace

void to_json(json& j, const KernelProfile& p) {
    j = json{
        {"version", p.version},
        {"proc_tag", tag_to_string(p.proc_tag)},
        {"object_size", p.object_size},
        {"alignment", p.alignment},
        {"pool_region", region_json(p.pool_region)},
        {"offsets",
         {{"pid", p.fields.pid},
          {"state", p.fields.state},
          {"ticks", p.fields.ticks},
          {"name", p.fields.name},
          {"name_length", p.fields.name_length},
          {"track_flink", p.fields.track_flink},
          {"track_blink", p.fields.track_blink},
          {"sched_flink", p.fields.sched_flink},
          {"sched_blink", p.fields.sched_blink}}},
        {"kdb_tag", tag_to_string(p.kdb_tag)},
        {"kdb_scan_region", region_json(p.kdb_scan_region)},
        {"kdb_offsets",
         {{"tracking_head", p.kdb.tracking_head}, {"sched_head", p.kdb.sched_head}, {"size", p.kdb.size}}},
    };
}

void from_json(const json& j, KernelProfile& p) {
    try {
        KernelProfile out;
        out.version = j.value("version", out.version);
        if (j.contains("proc_tag")) out.proc_tag = make_tag(j.at("proc_tag").get<std::string>());
        out.object_size = j.value("object_size", out.object_size);
        out.alignment = j.value("alignment", out.alignment);
        out.pool_region = region_from(j.at("pool_region"));
        if (j.contains("offsets")) {
            const auto& o = j.at("offsets");
            auto& f = out.fields;
            f.pid = o.value("pid", f.pid);
            f.state = o.value("state", f.state);
            f.ticks = o.value("ticks", f.ticks);
            f.name = o.value("name", f.name);
            f.name_length = o.value("name_length", f.name_length);
            f.track_flink = o.value("track_flink", f.track_flink);
            f.track_blink = o.value("track_blink", f.track_blink);
            f.sched_flink = o.value("sched_flink", f.sched_flink);
            f.sched_blink = o.value("sched_blink", f.sched_blink);
        }
        if (j.contains("kdb_tag")) out.kdb_tag = make_tag(j.at("kdb_tag").get<std::string>());
        out.kdb_scan_region = region_from(j.at("kdb_scan_region"));
        if (j.contains("kdb_offsets")) {
            const auto& o = j.at("kdb_offsets");
            out.kdb.tracking_head = o.value("tracking_head", out.kdb.tracking_head);
            out.kdb.sched_head = o.value("sched_head", out.kdb.sched_head);
            out.kdb.size = o.value("size", out.kdb.size);
        }
        p = out;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("profile JSON: ") + e.what());
    }
}

KernelProfile load_profile(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open profile " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, "profile " + path.string() + ": " + e.what());
    }
    return j.get<KernelProfile>();
}

}  // namespace introloop
