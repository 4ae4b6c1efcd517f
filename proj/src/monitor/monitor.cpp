/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "introloop/monitor/monitor.hpp"

#include <algorithm>
#include <sstream>

namespace introloop::monitor {

using introspect::Classification;

std::string_view to_string(ReactionMode m) {
    return m == ReactionMode::AutoBlock ? "auto" : "defer";
}

std::string_view to_string(Decision d) {
    return d == Decision::Block ? "BLOCK" : "OBSERVE";
}

std::optional<ReactionMode> parse_reaction_mode(std::string_view s) {
    if (s == "auto" || s == "AUTO_BLOCK") return ReactionMode::AutoBlock;
    if (s == "defer" || s == "DEFER_TO_EVALUATOR") return ReactionMode::DeferToEvaluator;
    return std::nullopt;
}

std::optional<Decision> parse_decision(std::string_view s) {
    if (s == "BLOCK" || s == "block") return Decision::Block;
    if (s == "OBSERVE" || s == "observe") return Decision::Observe;
    return std::nullopt;
}

std::string_view to_string(Finding::Status s) {
    switch (s) {
    case Finding::Status::Pending: return "PENDING";
    case Finding::Status::Blocked: return "BLOCKED";
    case Finding::Status::Observed: return "OBSERVED";
    case Finding::Status::Failed: return "FAILED";
    }
    return "UNKNOWN";
}

std::string_view to_string(MonitorEvent::Kind k) {
    switch (k) {
    case MonitorEvent::Kind::BootDumpWritten: return "BOOT_DUMP_WRITTEN";
    case MonitorEvent::Kind::RangeChanged: return "RANGE_CHANGED";
    case MonitorEvent::Kind::Finding: return "FINDING";
    case MonitorEvent::Kind::BlockApplied: return "BLOCK_APPLIED";
    case MonitorEvent::Kind::FindingResolved: return "FINDING_RESOLVED";
    case MonitorEvent::Kind::Error: return "ERROR";
    }
    return "UNKNOWN";
}

void to_json(nlohmann::json& j, const Finding& f) {
    j = {{"id", f.id},
         {"record", f.record},
         {"classification", to_string(f.classification)},
         {"watch", f.watch},
         {"checkpoint_id", f.checkpoint_id},
         {"recommended_action", to_string(f.recommended_action)},
         {"status", to_string(f.status)}};
}

void to_json(nlohmann::json& j, const MonitorEvent& e) {
    j = {{"id", e.id}, {"step", e.step}, {"kind", to_string(e.kind)}};
    switch (e.kind) {
    case MonitorEvent::Kind::BootDumpWritten:
        j["path"] = e.path.string();
        j["late"] = e.late;
        break;
    case MonitorEvent::Kind::RangeChanged: {
        nlohmann::json changes = nlohmann::json::array();
        for (const auto& r : e.changes) changes.push_back({{"start", r.start}, {"length", r.length}});
        j["watch"] = e.watch;
        j["checkpoint_id"] = e.checkpoint_id;
        j["changes"] = changes;
        break;
    }
    case MonitorEvent::Kind::Finding:
    case MonitorEvent::Kind::FindingResolved:
        j["finding"] = *e.finding;
        break;
    case MonitorEvent::Kind::BlockApplied:
        j["receipt"] = *e.receipt;
        if (e.finding) j["finding_id"] = e.finding->id;
        break;
    case MonitorEvent::Kind::Error:
        j["code"] = e.error ? std::string(to_string(*e.error)) : std::string("Internal");
        break;
    }
    if (!e.message.empty()) j["message"] = e.message;
}

// ---------------------------------------------------------------------------
// EventLog

std::uint64_t EventLog::append(MonitorEvent e) {
    std::uint64_t id;
    {
        std::lock_guard lock(mu_);
        id = events_.size() + 1;
        e.id = id;
        events_.push_back(std::move(e));
    }
    cv_.notify_all();
    return id;
}

std::vector<MonitorEvent> EventLog::since(std::uint64_t after, std::chrono::milliseconds wait) const {
    std::unique_lock lock(mu_);
    if (wait.count() > 0) {
        cv_.wait_for(lock, wait, [&] { return events_.size() > after; });
    }
    if (after >= events_.size()) return {};
    return {events_.begin() + static_cast<std::ptrdiff_t>(after), events_.end()};
}

std::uint64_t EventLog::last_id() const {
    std::lock_guard lock(mu_);
    return events_.size();
}

std::string EventLog::to_json_lines(std::uint64_t after) const {
    std::ostringstream out;
    for (const auto& e : since(after)) out << nlohmann::json(e).dump() << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Monitor

Monitor::Monitor(guest::GuestMachine& guest, KernelProfile profile, ReactionPolicy policy)
    : guest_(guest), profile_(std::move(profile)), policy_(policy) {}

void Monitor::arm_boot_dump(const fs::path& path) {
    if (guest_.kernel_ready()) {
        guest::LiveSource live(guest_);
        auto m = dump::dump_full(live, path);
        MonitorEvent e;
        e.step = m.created_at_step;
        e.kind = MonitorEvent::Kind::BootDumpWritten;
        e.path = path;
        e.late = true;
        e.message = "armed after kernel init; dumped immediately";
        emit(std::move(e), nullptr);
        throw Error(ErrorCode::AlreadyBooted,
                    "kernel already running at step " + std::to_string(m.created_at_step) +
                        "; wrote an immediate dump to " + path.string());
    }
    boot_dump_path_ = path;
    boot_dump_step_.reset();
}

WatchId Monitor::watch_range(WatchSpec spec) {
    if (spec.period == 0) throw Error(ErrorCode::BadArguments, "watch period must be at least 1");
    if (spec.range.empty() || !spec.range.within(guest_.memory_size()) ||
        !spec.range.within(spec.manifest.memory_size)) {
        throw Error(ErrorCode::OutOfRange, "watch range " + to_string(spec.range) + " outside memory");
    }
    const WatchId id = next_watch_++;
    const std::uint64_t due = guest_.clock() + spec.period;
    watches_.emplace(id, Watch{std::move(spec), due});
    return id;
}

const WatchSpec& Monitor::watch(WatchId id) const {
    auto it = watches_.find(id);
    if (it == watches_.end()) throw Error(ErrorCode::BadArguments, "no watch " + std::to_string(id));
    return it->second.spec;
}

std::vector<WatchId> Monitor::watch_ids() const {
    std::vector<WatchId> ids;
    for (const auto& [id, w] : watches_) ids.push_back(id);
    return ids;
}

RunResult Monitor::run(std::uint64_t steps) {
    RunResult out;
    for (std::uint64_t i = 0; i < steps; ++i) iterate(out);
    return out;
}

void Monitor::iterate(RunResult& out) {
    const std::uint64_t reads_before = guest_.bytes_read();
    auto events = guest_.step(1);
    out.guest_events.insert(out.guest_events.end(), events.begin(), events.end());

    if (boot_dump_path_) {
        try {
            probe_boot_dump(out);
        } catch (const std::exception& e) {
            emit_error("boot dump", e, &out);
        }
    }
    const std::uint64_t now = guest_.clock();
    for (auto& [id, w] : watches_) {
        if (now < w.next_due) continue;
        w.next_due = now + w.spec.period;
        try {
            refresh_watch(id, w, out);
        } catch (const std::exception& e) {
            emit_error("watch " + std::to_string(id), e, &out);
        }
    }
    last_iteration_reads_ = guest_.bytes_read() - reads_before;
}

void Monitor::probe_boot_dump(RunResult& out) {
    if (guest_.cpu().mode != guest::CpuMode::Paged) return;
    // Earliest analyzable state: the debug block resolves and the scan sees
    // the System process.
    guest::LiveSource live(guest_);
    try {
        introspect::locate_kernel(live, profile_);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::KernelDebugBlockNotFound || e.code() == ErrorCode::CorruptDebugBlock) return;
        throw;
    }
    const auto procs = introspect::scan_processes(live, profile_);
    const bool has_system =
        std::any_of(procs.begin(), procs.end(), [](const auto& p) { return p.name == "System"; });
    if (!has_system) return;

    const fs::path path = *boot_dump_path_;
    auto m = dump::dump_full(live, path);
    boot_dump_path_.reset();
    boot_dump_step_ = m.created_at_step;
    MonitorEvent e;
    e.step = m.created_at_step;
    e.kind = MonitorEvent::Kind::BootDumpWritten;
    e.path = path;
    emit(std::move(e), &out);
}

void Monitor::refresh_watch(WatchId id, Watch& w, RunResult& out) {
    guest::LiveSource live(guest_);
    auto update = dump::dump_update_range_with_diff(w.spec.manifest, w.spec.range, live);
    if (update.changes.empty()) return;

    MonitorEvent e;
    e.step = update.checkpoint.source_step;
    e.kind = MonitorEvent::Kind::RangeChanged;
    e.watch = id;
    e.checkpoint_id = update.checkpoint.id;
    e.changes = std::move(update.changes);
    emit(std::move(e), &out);

    analyze(id, w, out);
}

void Monitor::analyze(WatchId id, const Watch& w, RunResult& out) {
    auto source = dump::open_dump(w.spec.manifest);
    const auto report = introspect::cross_view(*source, profile_);
    for (const auto& r : report.records) {
        const bool suspicious = r.classification == Classification::Hidden ||
                                r.classification == Classification::UnscheduledAnomaly ||
                                r.classification == Classification::CorruptEntry;
        if (!suspicious) continue;
        if (open_keys_.count({r.address, r.pid}) != 0) continue;
        Finding f;
        f.record = r;
        f.classification = r.classification;
        f.kernel = report.kernel;
        f.watch = id;
        f.checkpoint_id = w.spec.manifest.latest();
        f.recommended_action = r.classification == Classification::Hidden ? Decision::Block : Decision::Observe;
        raise_finding(std::move(f), out);
    }
}

void Monitor::raise_finding(Finding f, RunResult& out) {
    f.id = next_finding_++;
    open_keys_[{f.record.address, f.record.pid}] = f.id;
    auto& stored = findings_.emplace(f.id, std::move(f)).first->second;

    MonitorEvent e;
    e.step = guest_.clock();
    e.kind = MonitorEvent::Kind::Finding;
    e.finding = stored;
    emit(std::move(e), &out);

    if (policy_.mode != ReactionMode::AutoBlock) return;
    if (stored.recommended_action == Decision::Block) {
        try {
            apply_block(stored, out);
        } catch (const std::exception& ex) {
            emit_error("auto block", ex, &out);
        }
    } else {
        stored.status = Finding::Status::Observed;
        MonitorEvent r;
        r.step = guest_.clock();
        r.kind = MonitorEvent::Kind::FindingResolved;
        r.finding = stored;
        emit(std::move(r), &out);
    }
}

std::optional<reactor::BlockReceipt> Monitor::apply_block(Finding& f, RunResult& out) {
    try {
        auto receipt = reactor::block_process(guest_, profile_, f.kernel, f.record.address);
        f.status = Finding::Status::Blocked;
        open_keys_.erase({f.record.address, f.record.pid});
        receipts_.push_back(receipt);
        MonitorEvent e;
        e.step = receipt.step_applied;
        e.kind = MonitorEvent::Kind::BlockApplied;
        e.receipt = receipt;
        e.finding = f;
        emit(std::move(e), &out);
        return receipt;
    } catch (...) {
        f.status = Finding::Status::Failed;
        open_keys_.erase({f.record.address, f.record.pid});
        throw;
    }
}

std::optional<reactor::BlockReceipt> Monitor::decide(std::uint64_t finding_id, Decision decision) {
    auto it = findings_.find(finding_id);
    if (it == findings_.end()) throw Error(ErrorCode::UnknownFinding, "no finding " + std::to_string(finding_id));
    Finding& f = it->second;
    if (f.status != Finding::Status::Pending) {
        throw Error(ErrorCode::FindingResolved,
                    "finding " + std::to_string(finding_id) + " already " + std::string(to_string(f.status)));
    }
    RunResult scratch;
    if (decision == Decision::Block) {
        try {
            return apply_block(f, scratch);
        } catch (const std::exception& e) {
            emit_error("decision " + std::to_string(finding_id), e, nullptr);
            throw;
        }
    }
    f.status = Finding::Status::Observed;
    MonitorEvent e;
    e.step = guest_.clock();
    e.kind = MonitorEvent::Kind::FindingResolved;
    e.finding = f;
    emit(std::move(e), nullptr);
    return std::nullopt;
}

std::vector<Finding> Monitor::findings() const {
    std::vector<Finding> out;
    for (const auto& [id, f] : findings_) out.push_back(f);
    return out;
}

std::vector<Finding> Monitor::pending_findings() const {
    std::vector<Finding> out;
    for (const auto& [id, f] : findings_) {
        if (f.status == Finding::Status::Pending) out.push_back(f);
    }
    return out;
}

void Monitor::emit(MonitorEvent e, RunResult* out) {
    e.id = log_.append(e);
    if (out) out->events.push_back(std::move(e));
}

void Monitor::emit_error(const std::string& where, const std::exception& ex, RunResult* out) {
    MonitorEvent e;
    e.step = guest_.clock();
    e.kind = MonitorEvent::Kind::Error;
    if (const auto* err = dynamic_cast<const Error*>(&ex)) e.error = err->code();
    e.message = where + ": " + ex.what();
    emit(std::move(e), out);
}

}  // namespace introloop::monitor
