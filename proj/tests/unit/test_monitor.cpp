/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#include <doctest.h>

#include <thread>

#include "introloop/dump/dump_store.hpp"
#include "introloop/error.hpp"
#include "introloop/monitor/monitor.hpp"
#include "support.hpp"

using namespace introloop;
using namespace introloop::monitor;
using guest::GuestConfig;
using guest::GuestMachine;
using guest::PlanAction;
using guest::RootkitAction;
using introspect::Classification;
using testsupport::TempDir;

namespace {

using Kind = MonitorEvent::Kind;

std::vector<MonitorEvent> of_kind(const std::vector<MonitorEvent>& evs, Kind k) {
    std::vector<MonitorEvent> out;
    for (const auto& e : evs) {
        if (e.kind == k) out.push_back(e);
    }
    return out;
}

std::vector<MonitorEvent> all_events(const Monitor& m) { return m.events().since(0); }

WatchSpec pool_watch(GuestMachine& g, const fs::path& path, std::uint64_t period = 1) {
    return {g.profile().pool_region, period, dump::dump_full(guest::LiveSource(g), path)};
}

// The boot predicate replayed on an independent guest, one step at a time.
std::uint64_t oracle_trigger_step(const GuestConfig& c) {
    GuestMachine g(c);
    for (std::uint64_t s = 1; s < 100; ++s) {
        g.step(1);
        if (g.cpu().mode != guest::CpuMode::Paged) continue;
        const auto snap = g.snapshot();
        try {
            introspect::locate_kernel(snap, c.profile);
        } catch (const Error&) {
            continue;
        }
        for (const auto& o : introspect::scan_processes(snap, c.profile)) {
            if (o.name == "System") return s;
        }
    }
    return 0;
}

}  // namespace

TEST_CASE("boot dump holds exactly the System process") {
    TempDir dir("mon");
    const auto c = testsupport::small_config(5);
    GuestMachine g(c);
    Monitor m(g, c.profile);
    m.arm_boot_dump(dir / "boot.img");
    CHECK(m.boot_dump_armed());
    const auto res = m.run(12);
    const auto written = of_kind(res.events, Kind::BootDumpWritten);
    REQUIRE(written.size() == 1);
    CHECK_FALSE(written[0].late);
    CHECK(written[0].step == oracle_trigger_step(c));
    CHECK(written[0].step == testsupport::kStandardKernelInit);
    CHECK(m.boot_dump_step() == written[0].step);
    CHECK_FALSE(m.boot_dump_armed());

    const auto report = introspect::cross_view(*dump::open_dump(fs::path(dir / "boot.img")), c.profile);
    REQUIRE(report.records.size() == 1);
    CHECK(report.records[0].name == "System");
    CHECK(report.records[0].classification == Classification::Active);
}

TEST_CASE("boot trigger follows a delayed kernel init") {
    TempDir dir("mon");
    auto c = testsupport::small_config(6);
    c.boot_plan = {{3, PlanAction::Verb::Protected, {}, 0, {}},
                   {9, PlanAction::Verb::Paged, {}, 0, {}},
                   {17, PlanAction::Verb::KernelInit, {}, 0, {}},
                   {18, PlanAction::Verb::Spawn, "svc", 0, {}}};
    GuestMachine g(c);
    Monitor m(g, c.profile);
    m.arm_boot_dump(dir / "boot.img");
    m.run(25);
    CHECK(m.boot_dump_step() == oracle_trigger_step(c));
    CHECK(m.boot_dump_step() == 17);
}

TEST_CASE("arming after boot writes a late dump and reports AlreadyBooted") {
    TempDir dir("mon");
    GuestMachine g(testsupport::small_config());
    testsupport::boot(g);
    Monitor m(g, g.profile());
    try {
        m.arm_boot_dump(dir / "late.img");
        FAIL("expected AlreadyBooted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::AlreadyBooted);
    }
    CHECK(fs::exists(dir / "late.img"));
    const auto evs = all_events(m);
    REQUIRE(evs.size() == 1);
    CHECK(evs[0].kind == Kind::BootDumpWritten);
    CHECK(evs[0].late);
    CHECK_FALSE(m.boot_dump_armed());
}

TEST_CASE("idle guest: no RANGE_CHANGED") {
    TempDir dir("mon");
    auto c = testsupport::small_config();
    c.boot_plan.push_back({9, PlanAction::Verb::Halt, {}, 0, {}});
    GuestMachine g(c);
    g.step(9);
    Monitor m(g, c.profile);
    m.watch_range(pool_watch(g, dir / "w.img", 2));
    const auto res = m.run(20);
    CHECK(of_kind(res.events, Kind::RangeChanged).empty());
    CHECK(g.clock() == 29);
}

TEST_CASE("spawn between checkpoints: one RANGE_CHANGED covering the new object") {
    TempDir dir("mon");
    auto c = testsupport::small_config(4);
    c.boot_plan.push_back({9, PlanAction::Verb::Halt, {}, 0, {}});
    GuestMachine g(c);
    g.step(9);
    Monitor m(g, c.profile);
    const auto spec = pool_watch(g, dir / "w.img", 3);
    const auto shadow0 = g.mem_access(spec.range);
    m.watch_range(spec);
    m.run(3);
    const auto pid = g.spawn("newbie");
    const auto addr = g.ground_truth().find_pid(pid)->address;
    const auto shadow1 = g.mem_access(spec.range);
    const auto res = m.run(6);
    const auto changed = of_kind(res.events, Kind::RangeChanged);
    REQUIRE(changed.size() == 1);
    // Oracle: every byte that differs between the shadow copies is covered.
    for (std::uint64_t i = 0; i < shadow0.size(); ++i) {
        if (shadow0[i] != shadow1[i]) {
            const Address a = spec.range.start + i;
            CHECK(std::any_of(changed[0].changes.begin(), changed[0].changes.end(),
                              [&](const ByteRange& r) { return r.contains(a); }));
        }
    }
    CHECK(std::any_of(changed[0].changes.begin(), changed[0].changes.end(),
                      [&](const ByteRange& r) { return r.contains(addr); }));

    // The updated dump lists the new process without a new full dump.
    const auto report = introspect::cross_view(*dump::open_dump(m.watch(1).manifest), c.profile);
    const auto* rec = report.find(addr);
    REQUIRE(rec);
    CHECK(rec->pid == pid);
    CHECK(rec->classification == Classification::Active);
}

TEST_CASE("RANGE_CHANGED count equals periods with writes in range") {
    TempDir dir("mon");
    auto c = testsupport::small_config(8);
    c.boot_plan.push_back({9, PlanAction::Verb::Halt, {}, 0, {}});
    c.boot_plan.push_back({20, PlanAction::Verb::Resume, {}, 0, {}});
    c.boot_plan.push_back({26, PlanAction::Verb::Halt, {}, 0, {}});
    c.boot_plan.push_back({40, PlanAction::Verb::Spawn, "late", 0, {}});
    c.boot_plan.push_back({47, PlanAction::Verb::Resume, {}, 0, {}});
    c.boot_plan.push_back({50, PlanAction::Verb::Halt, {}, 0, {}});
    GuestMachine g(c);
    g.step(9);
    const std::uint64_t period = 4;

    // Oracle: replay the same plan and compare range bytes at period ends.
    std::uint64_t expected = 0;
    {
        GuestMachine o(c);
        o.step(9);
        auto prev = o.mem_access(c.profile.pool_region);
        for (int i = 0; i < 15; ++i) {
            o.step(period);
            auto now = o.mem_access(c.profile.pool_region);
            if (now != prev) ++expected;
            prev = std::move(now);
        }
    }
    Monitor m(g, c.profile);
    m.watch_range(pool_watch(g, dir / "w.img", period));
    const auto res = m.run(15 * period);
    CHECK(of_kind(res.events, Kind::RangeChanged).size() == expected);
    CHECK(expected >= 3);
}

TEST_CASE("watch validation") {
    TempDir dir("mon");
    GuestMachine g(testsupport::small_config());
    Monitor m(g, g.profile());
    auto spec = pool_watch(g, dir / "w.img");
    spec.period = 0;
    CHECK_THROWS_AS(m.watch_range(spec), Error);
    spec.period = 1;
    spec.range = {g.memory_size() - 64, 128};
    try {
        m.watch_range(spec);
        FAIL("expected OutOfRange");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::OutOfRange);
    }
}

TEST_CASE("clean run raises no findings") {
    TempDir dir("mon");
    auto c = testsupport::small_config(2);
    c.boot_plan.push_back({10, PlanAction::Verb::Spawn, "a", 0, {}});
    c.boot_plan.push_back({12, PlanAction::Verb::Spawn, "b", 0, {}});
    GuestMachine g(c);
    g.step(8);
    Monitor m(g, c.profile);
    m.watch_range(pool_watch(g, dir / "w.img", 2));
    const auto res = m.run(10);
    CHECK(of_kind(res.events, Kind::Finding).empty());
    CHECK(of_kind(res.events, Kind::Error).empty());
    CHECK_FALSE(of_kind(res.events, Kind::RangeChanged).empty());
}

TEST_CASE("AUTO_BLOCK: finding then block, next pass clean") {
    TempDir dir("mon");
    auto c = testsupport::small_config(3);
    c.boot_plan.push_back({9, PlanAction::Verb::Spawn, "svc", 0, {}});
    c.boot_plan.push_back({13, PlanAction::Verb::Rootkit, {}, 0, RootkitAction::hide(8)});
    GuestMachine g(c);
    g.step(9);
    Monitor m(g, c.profile, {ReactionMode::AutoBlock});
    m.watch_range(pool_watch(g, dir / "w.img", 2));
    const auto res = m.run(10);
    const auto findings = of_kind(res.events, Kind::Finding);
    const auto blocks = of_kind(res.events, Kind::BlockApplied);
    REQUIRE(findings.size() == 1);
    REQUIRE(blocks.size() == 1);
    CHECK(findings[0].finding->record.pid == 8);
    CHECK(findings[0].finding->classification == Classification::Hidden);
    CHECK(findings[0].finding->recommended_action == Decision::Block);
    CHECK(blocks[0].receipt->target_pid == 8);
    CHECK(findings[0].id < blocks[0].id);
    CHECK(blocks[0].step >= 13);
    CHECK(blocks[0].step <= 15);  // within one period of the HIDE
    CHECK(m.receipts().size() == 1);
    CHECK(m.findings()[0].status == Finding::Status::Blocked);

    const auto after = introspect::cross_view(*dump::open_dump(m.watch(1).manifest), c.profile);
    CHECK(after.with(Classification::Hidden).empty());
    CHECK(g.ground_truth().hidden_pids().empty());

    // Event ids increase and steps never decrease.
    const auto evs = all_events(m);
    for (std::size_t i = 1; i < evs.size(); ++i) {
        CHECK(evs[i].id == evs[i - 1].id + 1);
        CHECK(evs[i - 1].step <= evs[i].step);
    }
}

TEST_CASE("DEFER_TO_EVALUATOR: pending finding, guest keeps stepping, decision applies") {
    TempDir dir("mon");
    auto c = testsupport::small_config(7);
    GuestMachine g(c);
    g.step(8);
    Monitor m(g, c.profile, {ReactionMode::DeferToEvaluator});
    m.watch_range(pool_watch(g, dir / "w.img", 1));
    g.inject(RootkitAction::spawn_hidden("rk"));
    auto res = m.run(5);
    REQUIRE(of_kind(res.events, Kind::Finding).size() == 1);
    CHECK(of_kind(res.events, Kind::BlockApplied).empty());
    const auto before = g.clock();
    res = m.run(20);
    CHECK(g.clock() == before + 20);
    CHECK(of_kind(res.events, Kind::Finding).empty());  // not raised twice
    const auto pending = m.pending_findings();
    REQUIRE(pending.size() == 1);
    CHECK(g.ground_truth().hidden_pids().size() == 1);

    try {
        m.decide(999, Decision::Block);
        FAIL("expected UnknownFinding");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::UnknownFinding);
    }
    const auto receipt = m.decide(pending[0].id, Decision::Block);
    REQUIRE(receipt);
    CHECK(receipt->verified);
    CHECK(g.ground_truth().hidden_pids().empty());
    try {
        m.decide(pending[0].id, Decision::Observe);
        FAIL("expected FindingResolved");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::FindingResolved);
    }
    CHECK(m.pending_findings().empty());
}

TEST_CASE("OBSERVE decision leaves the guest alone") {
    TempDir dir("mon");
    GuestMachine g(testsupport::small_config(7));
    g.step(8);
    Monitor m(g, g.profile(), {ReactionMode::DeferToEvaluator});
    m.watch_range(pool_watch(g, dir / "w.img", 1));
    g.inject(RootkitAction::spawn_hidden("rk"));
    m.run(2);
    const auto id = m.pending_findings().at(0).id;
    const auto mem = g.mem_access({0, g.memory_size()});
    CHECK_FALSE(m.decide(id, Decision::Observe).has_value());
    CHECK(g.mem_access({0, g.memory_size()}) == mem);
    const auto evs = all_events(m);
    CHECK(evs.back().kind == Kind::FindingResolved);
    CHECK(evs.back().finding->status == Finding::Status::Observed);
}

TEST_CASE("component errors become ERROR events and the loop keeps going") {
    TempDir dir("mon");
    GuestMachine g(testsupport::small_config());
    g.step(9);
    Monitor m(g, g.profile());
    const auto spec = pool_watch(g, dir / "w.img", 1);
    m.watch_range(spec);
    fs::remove(spec.manifest.base_path);
    const auto res = m.run(5);
    CHECK(g.clock() == 14);
    const auto errors = of_kind(res.events, Kind::Error);
    CHECK(errors.size() == 5);
    CHECK(errors[0].error == ErrorCode::IoFailure);
}

TEST_CASE("acquisition economy") {
    TempDir dir("mon");
    GuestMachine g(testsupport::small_config());
    g.step(9);
    Monitor m(g, g.profile());
    const ByteRange small{g.profile().kdb_scan_region.start, 8192};
    m.watch_range({small, 1, dump::dump_full(guest::LiveSource(g), dir / "a.img")});
    m.watch_range(pool_watch(g, dir / "b.img", 1));
    m.run(1);
    CHECK(m.last_iteration_guest_reads() <= small.length + g.profile().pool_region.length);
}

TEST_CASE("event log: ids, since and long-poll") {
    EventLog log;
    CHECK(log.last_id() == 0);
    CHECK(log.append(MonitorEvent{}) == 1);
    CHECK(log.append(MonitorEvent{}) == 2);
    CHECK(log.since(0).size() == 2);
    CHECK(log.since(1).at(0).id == 2);
    CHECK(log.since(2).empty());

    std::thread producer([&] {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
        MonitorEvent e;
        e.kind = Kind::Error;
        e.message = "late";
        log.append(e);
    });
    const auto t0 = std::chrono::steady_clock::now();
    const auto got = log.since(2, std::chrono::milliseconds(5000));
    const auto waited = std::chrono::steady_clock::now() - t0;
    producer.join();
    REQUIRE(got.size() == 1);
    CHECK(got[0].message == "late");
    CHECK(waited < std::chrono::milliseconds(4000));

    const auto lines = log.to_json_lines();
    CHECK(std::count(lines.begin(), lines.end(), '\n') == 3);
    CHECK(nlohmann::json::parse(lines.substr(0, lines.find('\n'))).at("id") == 1);
}
