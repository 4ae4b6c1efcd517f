/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#include <doctest.h>

#include <fstream>
#include <thread>
#include <unordered_set>

#include "introloop/error.hpp"
#include "introloop/guest/guest_machine.hpp"
#include "support.hpp"

using namespace introloop;
using namespace introloop::guest;
using testsupport::boot;
using testsupport::small_config;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::IoFailure;
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (auto b : bytes) h = (h ^ b) * 1099511628211ull;
    return h;
}

std::vector<std::uint8_t> full(const GuestMachine& g) {
    std::vector<std::uint8_t> out(g.memory_size());
    g.read(0, out);
    return out;
}

}  // namespace

TEST_CASE("fresh machine") {
    GuestMachine g(GuestConfig::standard(64ull << 20, 7));
    CHECK(g.clock() == 0);
    CHECK(g.cpu().mode == CpuMode::Firmware);
    CHECK_FALSE(g.kernel_ready());
    const auto& pool = g.profile().pool_region;
    const auto bytes = g.mem_access(pool);
    CHECK(std::all_of(bytes.begin(), bytes.end(), [](auto b) { return b == 0; }));
    const auto low = g.mem_access({0, 4096});
    CHECK(std::all_of(low.begin(), low.end(), [](auto b) { return b == 0; }));
}

TEST_CASE("config validation") {
    auto c = GuestConfig::standard();
    c.memory_size = 1000;
    CHECK(code_of([&] { GuestMachine g(c); }) == ErrorCode::InvalidConfig);

    c = GuestConfig::standard(1 << 20);
    c.boot_plan[1].step = 2;  // not strictly increasing
    CHECK(code_of([&] { GuestMachine g(c); }) == ErrorCode::InvalidConfig);

    c = GuestConfig::standard(1 << 20);
    std::swap(c.boot_plan[0].verb, c.boot_plan[1].verb);  // PAGED before PROTECTED
    CHECK(code_of([&] { GuestMachine g(c); }) == ErrorCode::InvalidConfig);

    c = GuestConfig::standard(1 << 20);
    c.boot_plan.insert(c.boot_plan.begin() + 2, PlanAction{6, PlanAction::Verb::Spawn, "early", 0, {}});
    CHECK(code_of([&] { GuestMachine g(c); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("config json round-trip") {
    testsupport::TempDir dir("cfg");
    auto c = GuestConfig::standard(1 << 20, 3);
    c.boot_plan.push_back({10, PlanAction::Verb::Spawn, "svc", 0, {}});
    c.boot_plan.push_back({12, PlanAction::Verb::Rootkit, {}, 0, RootkitAction::hide(8)});
    c.boot_plan.push_back({13, PlanAction::Verb::Halt, {}, 0, {}});
    const nlohmann::json j = c;
    std::ofstream(dir / "c.json") << j.dump();
    const auto back = load_config(dir / "c.json");
    CHECK(nlohmann::json(back) == j);
    CHECK(back.boot_plan[4].rootkit.kind == RootkitAction::Kind::Hide);
    CHECK(back.boot_plan[4].rootkit.pid == 8);
}

TEST_CASE("boot event ordering") {
    GuestMachine g(small_config());
    const auto events = g.step(10);
    std::vector<GuestEvent::Kind> kinds;
    for (const auto& e : events) kinds.push_back(e.kind);
    REQUIRE(kinds.size() == 4);
    CHECK(kinds[0] == GuestEvent::Kind::ModeTransition);
    CHECK(events[0].new_mode == CpuMode::Protected);
    CHECK(events[1].old_mode == CpuMode::Protected);
    CHECK(events[1].new_mode == CpuMode::Paged);
    CHECK(kinds[2] == GuestEvent::Kind::KernelInitDone);
    CHECK(kinds[3] == GuestEvent::Kind::ProcSpawn);
    CHECK(events[3].pid == 4);
    CHECK(events[3].detail == "System");
    CHECK(events[2].step == testsupport::kStandardKernelInit);
    for (std::size_t i = 1; i < events.size(); ++i) CHECK(events[i - 1].step <= events[i].step);
    CHECK(g.cpu().step_of_last_transition == 5);
}

TEST_CASE("step rejects zero") {
    GuestMachine g(small_config());
    CHECK(code_of([&] { g.step(0); }) == ErrorCode::BadArguments);
}

TEST_CASE("determinism: byte-identical memory at every step") {
    auto c = small_config(11);
    c.boot_plan.push_back({9, PlanAction::Verb::Spawn, "a", 0, {}});
    c.boot_plan.push_back({10, PlanAction::Verb::Spawn, "b", 0, {}});
    c.boot_plan.push_back({12, PlanAction::Verb::Rootkit, {}, 0, RootkitAction::spawn_hidden("rk")});
    c.boot_plan.push_back({14, PlanAction::Verb::Exit, {}, 8, {}});
    GuestMachine a(c), b(c);
    for (int i = 0; i < 20; ++i) {
        a.step(1);
        b.step(1);
        if (i == 15) {
            a.inject(RootkitAction::hide(12));
            b.inject(RootkitAction::hide(12));
        }
        REQUIRE(fnv1a(full(a)) == fnv1a(full(b)));
    }
    // A different seed lays the kernel out elsewhere.
    GuestMachine s11(small_config(11)), s12(small_config(12));
    s11.step(10);
    s12.step(10);
    CHECK(fnv1a(full(s11)) != fnv1a(full(s12)));
}

TEST_CASE("scheduler advances ticks by exactly one per step") {
    GuestMachine g(small_config());
    boot(g);
    g.spawn("a");
    g.spawn("b");
    const auto& f = g.profile().fields;
    const auto before = g.ground_truth();
    REQUIRE(before.sched_order.size() == 3);
    std::vector<std::uint32_t> t0;
    for (auto a : before.sched_order) t0.push_back(g.snapshot().read_u32(a + f.ticks));
    g.step(100);
    const auto snap = g.snapshot();
    for (std::size_t i = 0; i < before.sched_order.size(); ++i) {
        CHECK(snap.read_u32(before.sched_order[i] + f.ticks) == t0[i] + 100);
    }
}

TEST_CASE("halted machine only advances the clock") {
    auto c = small_config();
    c.boot_plan.push_back({9, PlanAction::Verb::Halt, {}, 0, {}});
    c.boot_plan.push_back({30, PlanAction::Verb::Resume, {}, 0, {}});
    GuestMachine g(c);
    g.step(9);
    const auto m = full(g);
    g.step(10);
    CHECK(g.clock() == 19);
    CHECK(g.halted());
    CHECK(full(g) == m);
    g.step(11);
    CHECK_FALSE(g.halted());
    CHECK(full(g) != m);
}

TEST_CASE("HIDE unlinks from the tracking list only") {
    GuestMachine g(small_config());
    boot(g);
    const auto pid = g.spawn("victim");
    g.spawn("other");
    const auto before = full(g);
    const auto ev = g.inject(RootkitAction::hide(pid));
    CHECK(ev.kind == GuestEvent::Kind::RootkitAction);
    const auto truth = g.ground_truth();
    const auto* p = truth.find_pid(pid);
    REQUIRE(p != nullptr);
    CHECK(p->hidden);
    CHECK_FALSE(p->in_tracking);
    CHECK(p->in_sched);
    CHECK(truth.hidden_pids() == std::vector<std::uint32_t>{pid});
    CHECK(truth.lists_consistent);

    // Four 8-byte link fields change: the two neighbours and the target's own
    // tracking links, which now point at itself.
    const auto after = full(g);
    const auto& f = g.profile().fields;
    std::vector<Address> changed_words;
    for (Address a = 0; a < after.size(); a += 8) {
        if (!std::equal(before.begin() + a, before.begin() + a + 8, after.begin() + a)) changed_words.push_back(a);
    }
    CHECK(changed_words.size() == 4);
    CHECK(std::find(changed_words.begin(), changed_words.end(), p->address + f.track_flink) != changed_words.end());
    CHECK(std::find(changed_words.begin(), changed_words.end(), p->address + f.track_blink) != changed_words.end());
    CHECK(load_u64(after, p->address + f.track_flink) == p->address);
}

TEST_CASE("inject errors") {
    GuestMachine g(small_config());
    CHECK(code_of([&] { g.inject(RootkitAction::hide(4)); }) == ErrorCode::KernelNotReady);
    boot(g);
    CHECK(code_of([&] { g.inject(RootkitAction::hide(999)); }) == ErrorCode::NoSuchPid);
    const auto sys = g.ground_truth().processes[0].address;
    CHECK(code_of([&] { g.inject(RootkitAction::reuse_slot(sys)); }) == ErrorCode::NotTerminated);
    CHECK(code_of([&] { g.inject(RootkitAction::reuse_slot(sys + 64)); }) == ErrorCode::NoSuchPid);
    const auto pid = g.spawn("x");
    g.inject(RootkitAction::hide(pid));
    // Already off the tracking list.
    CHECK(code_of([&] { g.inject(RootkitAction::hide(pid)); }) == ErrorCode::NoSuchPid);
}

TEST_CASE("TERMINATE leaves residue until REUSE_SLOT") {
    GuestMachine g(small_config());
    boot(g);
    const auto pid = g.spawn("gone");
    g.step(3);
    const auto addr = g.ground_truth().find_pid(pid)->address;
    const auto& f = g.profile().fields;
    const auto obj_before = g.mem_access({addr, 64});
    g.inject(RootkitAction::terminate(pid));
    const auto obj_after = g.mem_access({addr, 64});
    CHECK(std::equal(obj_before.begin(), obj_before.begin() + 8, obj_after.begin()));  // tag, pid
    CHECK(std::equal(obj_before.begin() + f.name, obj_before.begin() + f.name + 16, obj_after.begin() + f.name));
    CHECK(load_u32(obj_after, f.state) == 2);

    auto truth = g.ground_truth();
    CHECK(truth.residue_addresses() == std::vector<Address>{addr});
    CHECK_FALSE(truth.find_pid(pid)->in_sched);
    const auto ticks = load_u32(obj_after, f.ticks);
    g.step(5);
    CHECK(load_u32(g.mem_access({addr, 64}), f.ticks) == ticks);

    g.inject(RootkitAction::reuse_slot(addr));
    const auto zero = g.mem_access({addr, 64});
    CHECK(std::all_of(zero.begin(), zero.end(), [](auto b) { return b == 0; }));
    CHECK(g.ground_truth().residue_addresses().empty());
}

TEST_CASE("SPAWN_HIDDEN is never tracked") {
    GuestMachine g(small_config());
    boot(g);
    const auto ev = g.inject(RootkitAction::spawn_hidden("rk"));
    const auto t = g.ground_truth();
    const auto* p = t.find_pid(ev.pid);
    REQUIRE(p);
    CHECK(p->hidden);
    CHECK(p->address == ev.address);
}

TEST_CASE("mem_access read-after-write and bounds") {
    GuestMachine g(small_config());
    const std::vector<std::uint8_t> w{1, 2, 3, 4, 5, 6, 7, 8};
    CHECK(g.mem_access({128, 8}, std::span<const std::uint8_t>(w)) == w);
    CHECK(g.mem_access({128, 8}) == w);
    CHECK(g.ground_truth().external_writes);
    CHECK(code_of([&] { g.mem_access({g.memory_size() - 4, 8}); }) == ErrorCode::OutOfRange);
    CHECK(code_of([&] { g.mem_access({0, 4}, std::span<const std::uint8_t>(w)); }) == ErrorCode::BadArguments);
}

TEST_CASE("ground truth agrees with memory bytes") {
    GuestMachine g(small_config(5));
    boot(g);
    for (int i = 0; i < 6; ++i) g.spawn("p" + std::to_string(i));
    g.inject(RootkitAction::hide(12));
    g.inject(RootkitAction::terminate(16));
    g.step(7);
    const auto t = g.ground_truth();
    const auto mem = full(g);
    const auto& f = g.profile().fields;
    for (const auto& p : t.processes) {
        // Re-serialize the descriptor through the profile.
        std::vector<std::uint8_t> expect(64, 0);
        std::copy_n("PROC", 4, expect.begin());
        store_u32(expect, f.pid, p.pid);
        store_u32(expect, f.state, static_cast<std::uint32_t>(p.state));
        store_u32(expect, f.ticks, p.ticks);
        std::copy(p.name.begin(), p.name.end(), expect.begin() + f.name);
        CHECK(std::equal(expect.begin(), expect.begin() + 32, mem.begin() + p.address));
    }
}

TEST_CASE("reads are step-atomic during a step burst") {
    GuestMachine g(small_config(3, 1 << 20));
    boot(g);
    for (int i = 0; i < 8; ++i) g.spawn("w" + std::to_string(i));

    std::unordered_set<std::uint64_t> per_step;
    std::vector<std::uint64_t> seen;
    std::atomic<bool> done{false};
    std::thread reader([&] {
        std::vector<std::uint8_t> buf(g.memory_size());
        while (!done) {
            g.read(0, buf);
            seen.push_back(fnv1a(buf));
        }
    });
    per_step.insert(fnv1a(full(g)));
    for (int i = 0; i < 200; ++i) {
        g.step(1);
        per_step.insert(fnv1a(full(g)));
    }
    done = true;
    reader.join();
    REQUIRE_FALSE(seen.empty());
    for (auto h : seen) CHECK(per_step.count(h) == 1);
}
