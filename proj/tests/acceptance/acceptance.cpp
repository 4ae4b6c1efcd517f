/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
// End-to-end checks on a 64 MiB guest. One PASS/FAIL line per criterion.
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "introloop/dump/dump_store.hpp"
#include "introloop/error.hpp"
#include "introloop/guest/guest_machine.hpp"
#include "introloop/introspect/introspect.hpp"
#include "introloop/monitor/monitor.hpp"
#include "introloop/reactor/blocker.hpp"
#include "support.hpp"

using namespace introloop;
using guest::GuestConfig;
using guest::GuestMachine;
using guest::RootkitAction;
using introspect::Classification;
using testsupport::TempDir;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kMemory = 64ull << 20;

// Collects the reason a criterion failed; empty means it held.
struct Verdict {
    std::ostringstream why;
    bool ok = true;

    void expect(bool cond, const std::string& what) {
        if (!cond && ok) {
            ok = false;
            why << what;
        }
    }
};

using Check = std::function<void(Verdict&)>;

// 1. Boot dump holds exactly System; one step earlier nothing is analyzable.
void boot_dump(Verdict& v) {
    TempDir dir("acc1");
    const auto c = GuestConfig::standard(kMemory, 101);
    GuestMachine g(c);
    monitor::Monitor m(g, c.profile);
    m.arm_boot_dump(dir / "boot.img");
    m.run(20);
    const auto trigger = m.boot_dump_step();
    v.expect(trigger.has_value(), "boot dump never written");
    if (!trigger) return;
    const auto r = introspect::cross_view(*dump::open_dump(fs::path(dir / "boot.img")), c.profile);
    v.expect(r.records.size() == 1, "boot dump has " + std::to_string(r.records.size()) + " records");
    if (r.records.size() == 1) {
        v.expect(r.records[0].name == "System", "record is not System");
        v.expect(r.records[0].classification == Classification::Active, "System is not ACTIVE");
    }

    GuestMachine early(c);
    early.step(*trigger - 1);
    const auto m0 = dump::dump_full(guest::LiveSource(early), dir / "early.img");
    try {
        introspect::cross_view(*dump::open_dump(m0), c.profile);
        v.expect(false, "dump at trigger-1 analyzed");
    } catch (const Error& e) {
        v.expect(e.code() == ErrorCode::KernelDebugBlockNotFound,
                 std::string("dump at trigger-1 raised ") + std::string(to_string(e.code())));
    }
}

// 2. A quarter-size watched range: bounded I/O per checkpoint, exact history.
void differential_economy(Verdict& v) {
    TempDir dir("acc2");
    GuestMachine g(GuestConfig::standard(kMemory, 202));
    testsupport::boot(g);
    const ByteRange range{kMemory / 4, kMemory / 4};
    guest::LiveSource live(g);
    auto m = dump::dump_full(live, dir / "d.img");
    const auto shadow0 = g.mem_access({0, kMemory});
    for (int i = 0; i < 4; ++i) {
        g.spawn("w" + std::to_string(i));
        g.step(5);
        dump::IoStats stats;
        const auto before = g.bytes_read();
        dump::dump_update_range(m, range, live, &stats);
        const auto read = g.bytes_read() - before;
        v.expect(stats.bytes_written_to_disk <= 2 * range.length + (64u << 10),
                 "checkpoint wrote " + std::to_string(stats.bytes_written_to_disk) + " bytes");
        v.expect(read <= range.length, "checkpoint read " + std::to_string(read) + " guest bytes");
        v.expect(stats.bytes_read_from_source <= range.length, "checkpoint read too much from the source");
    }
    v.expect(m.latest() >= 3, "fewer than 3 updates");
    v.expect(dump::reconstruct(m, 0, {0, kMemory}) == shadow0, "reconstruct(0) differs from the shadow copy");
}

// 3. A process spawned between checkpoints shows up in the updated dump.
void new_process_visibility(Verdict& v) {
    TempDir dir("acc3");
    GuestMachine g(GuestConfig::standard(kMemory, 303));
    testsupport::boot(g);
    g.spawn("before");
    guest::LiveSource live(g);
    auto m = dump::dump_full(live, dir / "s.img");
    g.step(2);
    const auto pid = g.spawn("newcomer");
    g.step(2);
    const auto before = g.bytes_read();
    dump::dump_update_range(m, g.profile().pool_region, live);
    v.expect(g.bytes_read() - before <= g.profile().pool_region.length, "update re-read more than the range");
    bool found = false;
    for (const auto& o : introspect::scan_processes(*dump::open_dump(m), g.profile())) {
        found = found || (o.pid == pid && o.name == "newcomer");
    }
    v.expect(found, "new pid missing from the updated dump");
}

// Random mix of live, hidden, terminated and reused processes.
void random_scenario(GuestMachine& g, std::mt19937_64& rng) {
    testsupport::boot(g);
    std::vector<std::uint32_t> pids;
    const int n = 5 + static_cast<int>(rng() % 20);
    for (int i = 0; i < n; ++i) {
        switch (rng() % 6) {
        case 0:
            pids.push_back(g.inject(RootkitAction::spawn_hidden("rk" + std::to_string(i))).pid);
            break;
        case 1:
        case 2: {
            const auto live = g.ground_truth().live_pids();
            const auto pid = live[rng() % live.size()];
            if (pid == 4) break;
            try {
                if (rng() % 2) {
                    g.inject(RootkitAction::hide(pid));
                } else {
                    g.inject(RootkitAction::terminate(pid));
                }
            } catch (const Error&) {
                // already hidden
            }
            break;
        }
        case 3: {
            const auto res = g.ground_truth().residue_addresses();
            if (!res.empty()) g.inject(RootkitAction::reuse_slot(res[rng() % res.size()]));
            break;
        }
        default:
            pids.push_back(g.spawn("p" + std::to_string(i)));
        }
        g.step(1 + rng() % 3);
    }
}

// 4. HIDDEN and RESIDUE equal the ground truth on 20+ seeded scenarios.
void detection_exactness(Verdict& v) {
    TempDir dir("acc4");
    std::size_t hidden_total = 0, residue_total = 0;
    for (std::uint64_t seed = 1; seed <= 24; ++seed) {
        GuestMachine g(GuestConfig::standard(kMemory, 4000 + seed));
        std::mt19937_64 rng(seed);
        random_scenario(g, rng);
        const auto m = dump::dump_full(guest::LiveSource(g), dir / "x.img");
        const auto r = introspect::cross_view(*dump::open_dump(m), g.profile());
        dump::remove_dump(m);
        const auto truth = g.ground_truth();
        const auto hidden = testsupport::pids_of(r, Classification::Hidden);
        const auto residue = testsupport::addresses_of(r, Classification::Residue);
        v.expect(hidden == testsupport::truth_hidden(truth), "hidden set differs for seed " + std::to_string(seed));
        v.expect(residue == testsupport::truth_residue(truth), "residue set differs for seed " + std::to_string(seed));
        for (const auto* rec : r.with(Classification::Residue)) {
            v.expect(rec->found_by_scan && !rec->in_tracking && !rec->in_sched, "residue seen by a walk");
        }
        v.expect(r.with(Classification::UnscheduledAnomaly).empty() && r.with(Classification::CorruptEntry).empty(),
                 "unexpected anomaly for seed " + std::to_string(seed));
        hidden_total += hidden.size();
        residue_total += residue.size();
    }
    v.expect(hidden_total > 0 && residue_total > 0, "scenarios produced no hidden or no residue processes");
}

// 5. Blocking removes the target from both walks, freezes it, touches 32 bytes.
void block_effectiveness(Verdict& v) {
    TempDir dir("acc5");
    GuestMachine g(GuestConfig::standard(kMemory, 505));
    testsupport::boot(g);
    for (int i = 0; i < 5; ++i) g.spawn("p" + std::to_string(i));
    g.inject(RootkitAction::hide(12));
    for (int i = 0; i < 3; ++i) g.spawn("q" + std::to_string(i));
    g.step(4);
    const auto& p = g.profile();
    const auto& f = p.fields;
    guest::LiveSource live(g);
    const auto k = introspect::locate_kernel(live, p);
    const Address target = g.ground_truth().find_pid(12)->address;

    auto m = dump::dump_full(live, dir / "b.img");
    const auto before = g.mem_access({0, kMemory});
    reactor::block_process(g, p, k, target);
    dump::dump_update_range(m, {0, kMemory}, live);
    // The dump diff reports whole 8-byte words: the four rewritten links.
    const auto d = dump::diff_checkpoints(m, 0, 1, {0, kMemory});
    std::uint64_t changed = 0;
    for (const auto& r : d) changed += r.length;
    v.expect(changed == 32, "block changed " + std::to_string(changed) + " bytes");
    const auto now = g.mem_access({0, kMemory});
    for (std::uint64_t i = 0; i < kMemory; ++i) {
        if (before[i] != now[i] &&
            std::none_of(d.begin(), d.end(), [&](const ByteRange& r) { return r.contains(i); })) {
            v.expect(false, "byte change outside the reported words");
            break;
        }
    }

    const auto snap = g.snapshot();
    const auto track = introspect::walk_list(snap, k.tracking_head, f.track_flink, p);
    const auto sched = introspect::walk_list(snap, k.sched_head, f.sched_flink, p);
    v.expect(std::find(track.begin(), track.end(), target) == track.end(), "target still in the tracking walk");
    v.expect(std::find(sched.begin(), sched.end(), target) == sched.end(), "target still in the scheduling walk");
    v.expect(reactor::list_is_well_formed(snap, k.tracking_head, f.track_flink, f.track_blink, p) &&
                 reactor::list_is_well_formed(snap, k.sched_head, f.sched_flink, f.sched_blink, p),
             "flink/blink duality broken");

    std::map<Address, std::uint32_t> ticks;
    for (const auto a : sched) ticks[a] = snap.read_u32(a + f.ticks);
    ticks[target] = snap.read_u32(target + f.ticks);
    g.step(100);
    const auto after = g.snapshot();
    for (const auto& [a, t] : ticks) {
        const auto now = after.read_u32(a + f.ticks);
        v.expect(now == (a == target ? t : t + 100), "ticks off at " + std::to_string(a));
    }
}

// 6. AUTO_BLOCK converges after staggered HIDEs; errors never stop the loop.
void closed_loop(Verdict& v) {
    TempDir dir("acc6");
    auto c = GuestConfig::standard(kMemory, 606);
    using guest::PlanAction;
    for (std::uint64_t s = 9; s < 15; ++s) c.boot_plan.push_back({s, PlanAction::Verb::Spawn, "svc" + std::to_string(s), 0, {}});
    const std::uint64_t hides[] = {18, 27, 41};
    const std::uint32_t pids[] = {8, 16, 24};
    for (int i = 0; i < 3; ++i) c.boot_plan.push_back({hides[i], PlanAction::Verb::Rootkit, {}, 0, RootkitAction::hide(pids[i])});
    GuestMachine g(c);
    g.step(15);
    const std::uint64_t period = 5;
    monitor::Monitor m(g, c.profile, {monitor::ReactionMode::AutoBlock});
    const auto wid = m.watch_range({c.profile.pool_region, period, dump::dump_full(guest::LiveSource(g), dir / "w.img")});
    // A second watch whose dump is gone: every refresh fails.
    auto broken = dump::dump_full(BufferSource(std::vector<std::uint8_t>(kMemory, 0)), dir / "gone.img");
    fs::remove(broken.base_path);
    m.watch_range({{0, 4096}, period, broken});

    const auto res = m.run(hides[2] + period - g.clock());
    v.expect(g.clock() == hides[2] + period, "loop stopped early");
    std::size_t blocks = 0, errors = 0;
    for (const auto& e : res.events) {
        blocks += e.kind == monitor::MonitorEvent::Kind::BlockApplied;
        errors += e.kind == monitor::MonitorEvent::Kind::Error;
    }
    v.expect(blocks == 3, "applied " + std::to_string(blocks) + " blocks");
    v.expect(errors > 0, "the broken watch raised no ERROR events");
    // Guest state one period after the last HIDE, through a fresh dump.
    const auto end = dump::dump_full(guest::LiveSource(g), dir / "end.img");
    v.expect(introspect::cross_view(*dump::open_dump(end), c.profile).with(Classification::Hidden).empty(),
             "HIDDEN left one period after the last injection");
    const auto later = m.run(10);
    v.expect(g.clock() == hides[2] + period + 10, "loop halted after errors");
    for (const auto& e : later.events) {
        v.expect(e.kind != monitor::MonitorEvent::Kind::Finding, "a later pass raised a new finding");
    }
    const auto r = introspect::cross_view(*dump::open_dump(m.watch(wid).manifest), c.profile);
    v.expect(r.with(Classification::Hidden).empty(), "HIDDEN left in the watched dump");
}

// 7. scan_processes equals a byte-level scan on 100 images.
void scan_oracle(Verdict& v) {
    const auto profile = KernelProfile::standard(kMemory);
    const auto& pool = profile.pool_region;
    std::mt19937_64 rng(707);
    std::vector<std::uint8_t> image(kMemory, 0);
    std::size_t hits = 0;
    for (int i = 0; i < 100; ++i) {
        if (i < 30) {
            // Guest-produced images.
            GuestMachine g(GuestConfig::standard(kMemory, 7000 + i));
            std::mt19937_64 srng(i);
            random_scenario(g, srng);
            image = g.mem_access({0, kMemory});
        } else {
            std::fill(image.begin(), image.end(), 0);
            // Random fill of the pool and its surroundings.
            for (Address a = pool.start - 4096; a + 8 <= pool.end() + 4096; a += 8) store_u64(image, a, rng());
            if (i >= 60) {
                // Tags planted on and off the grid, at the edges and straddling them.
                const int n = 1 + static_cast<int>(rng() % 200);
                for (int t = 0; t < n; ++t) {
                    Address a = pool.start - 64 + rng() % (pool.length + 128);
                    if (rng() % 2) a -= a % profile.alignment;
                    if (t == 0) a = pool.end() - 2;
                    if (t == 1) a = pool.end() - profile.object_size + profile.alignment;
                    if (t == 2) a = pool.start;
                    for (int b = 0; b < 4 && a + b < image.size(); ++b) image[a + b] = profile.proc_tag[b];
                }
            }
        }
        const auto expected = testsupport::brute_force_scan(image, profile);
        std::vector<Address> got;
        for (const auto& o : introspect::scan_processes(BufferSource(image), profile)) got.push_back(o.address);
        v.expect(got == expected, "scan differs on image " + std::to_string(i));
        hits += expected.size();
    }
    v.expect(hits > 0, "no image contained an object");
}

}  // namespace

int main() {
    const std::pair<const char*, Check> criteria[] = {
        {"boot dump correctness", boot_dump},
        {"differential economy", differential_economy},
        {"new process visibility", new_process_visibility},
        {"detection exactness", detection_exactness},
        {"block effectiveness and minimality", block_effectiveness},
        {"closed-loop convergence", closed_loop},
        {"scan oracle equivalence", scan_oracle},
    };
    int failed = 0;
    int n = 0;
    for (const auto& [name, check] : criteria) {
        ++n;
        Verdict v;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            check(v);
        } catch (const std::exception& e) {
            v.expect(false, std::string("exception: ") + e.what());
        }
        const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
        std::cout << (v.ok ? "PASS" : "FAIL") << " criterion " << n << ": " << name << " (" << ms.count() << " ms)";
        if (!v.ok) std::cout << ": " << v.why.str();
        std::cout << std::endl;
        failed += !v.ok;
    }
    return failed == 0 ? 0 : 1;
}
