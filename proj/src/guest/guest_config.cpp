/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#include <fstream>

#include "introloop/error.hpp"
#include "introloop/guest/guest_machine.hpp"

namespace introloop::guest {

using nlohmann::json;

GuestConfig GuestConfig::standard(std::uint64_t memory_size, std::uint64_t seed) {
    GuestConfig c;
    c.memory_size = memory_size;
    c.seed = seed;
    c.profile = KernelProfile::standard(memory_size);
    c.boot_plan = {
        {2, PlanAction::Verb::Protected, {}, 0, {}},
        {5, PlanAction::Verb::Paged, {}, 0, {}},
        {8, PlanAction::Verb::KernelInit, {}, 0, {}},
    };
    return c;
}

void GuestConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
    if (memory_size == 0 || memory_size % 4096 != 0) {
        fail("memory_size must be a positive multiple of 4096, got " + std::to_string(memory_size));
    }
    profile.validate(memory_size);

    std::uint64_t last_step = 0;
    int protected_at = -1, paged_at = -1, init_at = -1;
    for (std::size_t i = 0; i < boot_plan.size(); ++i) {
        const auto& a = boot_plan[i];
        if (a.step <= last_step) fail("boot_plan steps must be strictly increasing and start at 1");
        last_step = a.step;
        const int idx = static_cast<int>(i);
        switch (a.verb) {
        case PlanAction::Verb::Protected:
            if (protected_at >= 0 || paged_at >= 0) fail("boot_plan: PROTECTED must occur once, before PAGED");
            protected_at = idx;
            break;
        case PlanAction::Verb::Paged:
            if (paged_at >= 0 || protected_at < 0) fail("boot_plan: PAGED must occur once, after PROTECTED");
            paged_at = idx;
            break;
        case PlanAction::Verb::KernelInit:
            if (init_at >= 0 || paged_at < 0) fail("boot_plan: kernel_init must occur once, after PAGED");
            init_at = idx;
            break;
        default:
            if (init_at < 0) fail("boot_plan: process actions require a preceding kernel_init");
            break;
        }
    }
}

namespace {

struct VerbName {
    std::string_view name;
    PlanAction::Verb verb;
    RootkitAction::Kind kind;
};

constexpr VerbName kVerbs[] = {
    {"protected", PlanAction::Verb::Protected, {}},
    {"paged", PlanAction::Verb::Paged, {}},
    {"kernel_init", PlanAction::Verb::KernelInit, {}},
    {"spawn", PlanAction::Verb::Spawn, {}},
    {"exit", PlanAction::Verb::Exit, {}},
    {"halt", PlanAction::Verb::Halt, {}},
    {"resume", PlanAction::Verb::Resume, {}},
    {"hide", PlanAction::Verb::Rootkit, RootkitAction::Kind::Hide},
    {"spawn_hidden", PlanAction::Verb::Rootkit, RootkitAction::Kind::SpawnHidden},
    {"terminate", PlanAction::Verb::Rootkit, RootkitAction::Kind::Terminate},
    {"reuse_slot", PlanAction::Verb::Rootkit, RootkitAction::Kind::ReuseSlot},
};

}  // namespace

void to_json(json& j, const PlanAction& a) {
    j = {{"step", a.step}};
    for (const auto& v : kVerbs) {
        if (v.verb == a.verb && (a.verb != PlanAction::Verb::Rootkit || v.kind == a.rootkit.kind)) {
            j["action"] = v.name;
            break;
        }
    }
    switch (a.verb) {
    case PlanAction::Verb::Spawn: j["name"] = a.name; break;
    case PlanAction::Verb::Exit: j["pid"] = a.pid; break;
    case PlanAction::Verb::Rootkit:
        switch (a.rootkit.kind) {
        case RootkitAction::Kind::Hide:
        case RootkitAction::Kind::Terminate: j["pid"] = a.rootkit.pid; break;
        case RootkitAction::Kind::SpawnHidden: j["name"] = a.rootkit.name; break;
        case RootkitAction::Kind::ReuseSlot: j["address"] = a.rootkit.address; break;
        }
        break;
    default: break;
    }
}

void from_json(const json& j, PlanAction& a) {
    try {
        PlanAction out;
        out.step = j.at("step").get<std::uint64_t>();
        const auto verb = j.at("action").get<std::string>();
        const VerbName* match = nullptr;
        for (const auto& v : kVerbs) {
            if (v.name == verb) match = &v;
        }
        if (!match) throw Error(ErrorCode::InvalidConfig, "boot_plan: unknown action '" + verb + "'");
        out.verb = match->verb;
        out.name = j.value("name", std::string{});
        out.pid = j.value("pid", 0u);
        if (out.verb == PlanAction::Verb::Rootkit) {
            out.rootkit.kind = match->kind;
            out.rootkit.pid = out.pid;
            out.rootkit.name = out.name;
            out.rootkit.address = j.value("address", std::uint64_t{0});
        }
        a = std::move(out);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("boot_plan entry: ") + e.what());
    }
}

void to_json(json& j, const GuestConfig& c) {
    j = {{"memory_size", c.memory_size}, {"seed", c.seed}, {"boot_plan", c.boot_plan}, {"profile", c.profile}};
}

void from_json(const json& j, GuestConfig& c) {
    try {
        GuestConfig out;
        out.memory_size = j.value("memory_size", out.memory_size);
        out.seed = j.value("seed", std::uint64_t{0});
        out.profile = j.contains("profile") ? j.at("profile").get<KernelProfile>()
                                            : KernelProfile::standard(out.memory_size);
        out.boot_plan = j.contains("boot_plan") ? j.at("boot_plan").get<std::vector<PlanAction>>()
                                                : GuestConfig::standard(out.memory_size).boot_plan;
        c = std::move(out);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, std::string("guest config: ") + e.what());
    }
}

namespace {

json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
    }
}

}  // namespace

GuestConfig load_config(const std::filesystem::path& path) {
    return read_json(path).get<GuestConfig>();
}

std::vector<PlanAction> load_boot_plan(const std::filesystem::path& path) {
    json j = read_json(path);
    if (j.is_object() && j.contains("boot_plan")) j = j.at("boot_plan");
    try {
        return j.get<std::vector<PlanAction>>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
    }
}

}  // namespace introloop::guest
