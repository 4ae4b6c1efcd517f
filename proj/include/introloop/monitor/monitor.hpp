/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "introloop/dump/dump_store.hpp"
#include "introloop/error.hpp"
#include "introloop/guest/guest_machine.hpp"
#include "introloop/introspect/introspect.hpp"
#include "introloop/reactor/blocker.hpp"

namespace introloop::monitor {

namespace fs = std::filesystem;

enum class ReactionMode { AutoBlock, DeferToEvaluator };
enum class Decision { Block, Observe };

std::string_view to_string(ReactionMode m);
std::string_view to_string(Decision d);
std::optional<ReactionMode> parse_reaction_mode(std::string_view s);
std::optional<Decision> parse_decision(std::string_view s);

struct ReactionPolicy {
    ReactionMode mode = ReactionMode::AutoBlock;
};

using WatchId = std::uint32_t;

struct WatchSpec {
    ByteRange range;
    std::uint64_t period = 1;  // guest steps between checkpoints
    dump::DumpManifest manifest;
};

struct Finding {
    enum class Status { Pending, Blocked, Observed, Failed };

    std::uint64_t id = 0;
    introspect::ProcessRecord record;
    introspect::Classification classification = introspect::Classification::Hidden;
    introspect::KernelInfo kernel;
    WatchId watch = 0;
    std::uint32_t checkpoint_id = 0;
    Decision recommended_action = Decision::Observe;
    Status status = Status::Pending;
};

std::string_view to_string(Finding::Status s);

struct MonitorEvent {
    enum class Kind { BootDumpWritten, RangeChanged, Finding, BlockApplied, FindingResolved, Error };

    std::uint64_t id = 0;
    std::uint64_t step = 0;
    Kind kind = Kind::Error;

    fs::path path;              // BootDumpWritten
    bool late = false;          // BootDumpWritten after kernel init
    WatchId watch = 0;          // RangeChanged
    std::uint32_t checkpoint_id = 0;
    std::vector<ByteRange> changes;
    std::optional<Finding> finding;              // Finding, FindingResolved
    std::optional<reactor::BlockReceipt> receipt;  // BlockApplied
    std::optional<ErrorCode> error;              // Error
    std::string message;
};

std::string_view to_string(MonitorEvent::Kind k);
void to_json(nlohmann::json& j, const Finding& f);
void to_json(nlohmann::json& j, const MonitorEvent& e);

// Append-only, multi-consumer event stream with ids starting at 1.
class EventLog {
public:
    std::uint64_t append(MonitorEvent e);

    // Events with id > `after`; waits up to `wait` for the first one.
    std::vector<MonitorEvent> since(std::uint64_t after,
                                    std::chrono::milliseconds wait = std::chrono::milliseconds(0)) const;
    std::uint64_t last_id() const;

    // One JSON document per line.
    std::string to_json_lines(std::uint64_t after = 0) const;

private:
    mutable std::mutex mu_;
    mutable std::condition_variable cv_;
    std::vector<MonitorEvent> events_;
};

struct RunResult {
    std::vector<guest::GuestEvent> guest_events;
    std::vector<MonitorEvent> events;
};

/// Closed-loop controller. Each loop iteration advances the guest by one
/// step, then (1) probes for the earliest analyzable boot state when a boot
/// dump is armed, (2) refreshes every watch whose period elapsed, and (3) on
/// a change, analyzes the updated dump and reacts according to the policy.
///
/// Component failures become ERROR events; the loop never stops on them.
/// The monitor is externally synchronized: one caller at a time. Only the
/// event log may be read concurrently.
class Monitor {
public:
    Monitor(guest::GuestMachine& guest, KernelProfile profile, ReactionPolicy policy = {});

    // Throws AlreadyBooted once the kernel is up, after writing an immediate
    // dump flagged `late`.
    void arm_boot_dump(const fs::path& path);
    bool boot_dump_armed() const { return boot_dump_path_.has_value(); }
    std::optional<std::uint64_t> boot_dump_step() const { return boot_dump_step_; }

    WatchId watch_range(WatchSpec spec);
    const WatchSpec& watch(WatchId id) const;
    std::vector<WatchId> watch_ids() const;

    RunResult run(std::uint64_t steps);

    // Applies an evaluator decision at the current loop boundary. Throws
    // UnknownFinding / FindingResolved, or the block error.
    std::optional<reactor::BlockReceipt> decide(std::uint64_t finding_id, Decision decision);

    std::vector<Finding> findings() const;
    std::vector<Finding> pending_findings() const;
    const std::vector<reactor::BlockReceipt>& receipts() const { return receipts_; }

    const EventLog& events() const { return log_; }
    ReactionPolicy policy() const { return policy_; }
    void set_policy(ReactionPolicy p) { policy_ = p; }
    const KernelProfile& profile() const { return profile_; }
    guest::GuestMachine& guest() { return guest_; }

    // Guest bytes read by the most recent iteration.
    std::uint64_t last_iteration_guest_reads() const { return last_iteration_reads_; }

private:
    struct Watch {
        WatchSpec spec;
        std::uint64_t next_due = 0;
    };

    void iterate(RunResult& out);
    void probe_boot_dump(RunResult& out);
    void refresh_watch(WatchId id, Watch& w, RunResult& out);
    void analyze(WatchId id, const Watch& w, RunResult& out);
    void raise_finding(Finding f, RunResult& out);
    std::optional<reactor::BlockReceipt> apply_block(Finding& f, RunResult& out);
    void emit(MonitorEvent e, RunResult* out);
    void emit_error(const std::string& where, const std::exception& e, RunResult* out);

    guest::GuestMachine& guest_;
    KernelProfile profile_;
    ReactionPolicy policy_;
    EventLog log_;

    std::optional<fs::path> boot_dump_path_;
    std::optional<std::uint64_t> boot_dump_step_;

    std::map<WatchId, Watch> watches_;
    WatchId next_watch_ = 1;

    std::map<std::uint64_t, Finding> findings_;
    std::map<std::pair<Address, std::uint32_t>, std::uint64_t> open_keys_;  // (address, pid) -> finding id
    std::uint64_t next_finding_ = 1;
    std::vector<reactor::BlockReceipt> receipts_;
    std::uint64_t last_iteration_reads_ = 0;
};

}  // namespace introloop::monitor
