/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "introloop/guest/guest_machine.hpp"

#include <algorithm>
#include <array>
#include <mutex>
#include <unordered_set>

#include "introloop/error.hpp"

namespace introloop::guest {

namespace {

constexpr std::uint64_t kFirmwareMax = 64 * 1024;

std::uint64_t round_up(std::uint64_t v, std::uint64_t a) { return (v + a - 1) / a * a; }

ByteRange firmware_region(std::uint64_t memory_size) {
    std::uint64_t len = std::min(kFirmwareMax, memory_size / 16);
    return {memory_size - len, len};
}

}  // namespace

std::string_view to_string(CpuMode mode) {
    switch (mode) {
    case CpuMode::Firmware: return "FIRMWARE";
    case CpuMode::Protected: return "PROTECTED";
    case CpuMode::Paged: return "PAGED";
    }
    return "UNKNOWN";
}

std::string_view to_string(RootkitAction::Kind kind) {
    switch (kind) {
    case RootkitAction::Kind::Hide: return "HIDE";
    case RootkitAction::Kind::SpawnHidden: return "SPAWN_HIDDEN";
    case RootkitAction::Kind::Terminate: return "TERMINATE";
    case RootkitAction::Kind::ReuseSlot: return "REUSE_SLOT";
    }
    return "UNKNOWN";
}

std::string_view to_string(GuestEvent::Kind kind) {
    switch (kind) {
    case GuestEvent::Kind::ModeTransition: return "MODE_TRANSITION";
    case GuestEvent::Kind::KernelInitDone: return "KERNEL_INIT_DONE";
    case GuestEvent::Kind::ProcSpawn: return "PROC_SPAWN";
    case GuestEvent::Kind::ProcExit: return "PROC_EXIT";
    case GuestEvent::Kind::RootkitAction: return "ROOTKIT_ACTION";
    case GuestEvent::Kind::Halted: return "HALTED";
    case GuestEvent::Kind::Resumed: return "RESUMED";
    case GuestEvent::Kind::ActionRejected: return "ACTION_REJECTED";
    }
    return "UNKNOWN";
}

// ---------------------------------------------------------------------------
// GroundTruth

const ProcessTruth* GroundTruth::find_pid(std::uint32_t pid) const {
    for (const auto& p : processes) {
        if (p.pid == pid) return &p;
    }
    return nullptr;
}

const ProcessTruth* GroundTruth::find_address(Address address) const {
    const ProcessTruth* found = nullptr;
    for (const auto& p : processes) {
        if (p.address == address && !p.reused) found = &p;
    }
    return found;
}

std::vector<std::uint32_t> GroundTruth::live_pids() const {
    std::vector<std::uint32_t> out;
    for (const auto& p : processes) {
        if (!p.terminated) out.push_back(p.pid);
    }
    return out;
}

std::vector<std::uint32_t> GroundTruth::hidden_pids() const {
    std::vector<std::uint32_t> out;
    for (const auto& p : processes) {
        if (p.hidden) out.push_back(p.pid);
    }
    return out;
}

std::vector<Address> GroundTruth::residue_addresses() const {
    std::vector<Address> out;
    for (const auto& p : processes) {
        if (p.terminated && !p.reused) out.push_back(p.address);
    }
    std::sort(out.begin(), out.end());
    return out;
}

void to_json(nlohmann::json& j, const GroundTruth& g) {
    nlohmann::json procs = nlohmann::json::array();
    for (const auto& p : g.processes) {
        procs.push_back({{"pid", p.pid},
                         {"name", p.name},
                         {"address", p.address},
                         {"state", to_string(p.state)},
                         {"ticks", p.ticks},
                         {"terminated", p.terminated},
                         {"reused", p.reused},
                         {"in_tracking", p.in_tracking},
                         {"in_sched", p.in_sched},
                         {"hidden", p.hidden}});
    }
    j = {{"step", g.step},
         {"cpu_mode", to_string(g.cpu.mode)},
         {"kernel_ready", g.kernel_ready},
         {"halted", g.halted},
         {"kdb_address", g.kdb_address},
         {"tracking_head", g.tracking_head},
         {"sched_head", g.sched_head},
         {"processes", procs},
         {"tracking_order", g.tracking_order},
         {"sched_order", g.sched_order},
         {"lists_consistent", g.lists_consistent},
         {"external_writes", g.external_writes}};
}

void to_json(nlohmann::json& j, const GuestEvent& e) {
    j = {{"step", e.step}, {"kind", to_string(e.kind)}};
    switch (e.kind) {
    case GuestEvent::Kind::ModeTransition:
        j["old_mode"] = to_string(e.old_mode);
        j["new_mode"] = to_string(e.new_mode);
        break;
    case GuestEvent::Kind::ProcSpawn:
    case GuestEvent::Kind::ProcExit:
        j["pid"] = e.pid;
        j["address"] = e.address;
        break;
    case GuestEvent::Kind::RootkitAction:
        j["action"] = to_string(e.action->kind);
        j["pid"] = e.pid;
        j["address"] = e.address;
        break;
    default:
        break;
    }
    if (!e.detail.empty()) j["detail"] = e.detail;
}

// ---------------------------------------------------------------------------
// MemoryView

void MemoryView::read(std::uint64_t offset, std::span<std::uint8_t> out) const {
    check_range(offset, out.size());
    std::copy_n(memory_.begin() + static_cast<std::ptrdiff_t>(offset), out.size(), out.begin());
    read_counter_ += out.size();
}

void MemoryView::write(std::uint64_t offset, std::span<const std::uint8_t> bytes) {
    if (!ByteRange{offset, bytes.size()}.within(memory_.size())) {
        throw Error(ErrorCode::OutOfRange, "write " + to_string(ByteRange{offset, bytes.size()}) + " outside memory");
    }
    std::copy(bytes.begin(), bytes.end(), memory_.begin() + static_cast<std::ptrdiff_t>(offset));
    wrote_ = true;
}

void MemoryView::write_u64(std::uint64_t offset, std::uint64_t value) {
    std::array<std::uint8_t, 8> b{};
    store_u64(b, 0, value);
    write(offset, b);
}

// ---------------------------------------------------------------------------
// GuestMachine

GuestMachine::GuestMachine(GuestConfig config) : config_(std::move(config)) {
    config_.validate();
    memory_.assign(config_.memory_size, 0);
    rng_.seed(config_.seed);

    // Firmware shadow: a short header followed by seed-derived bytes at the
    // top of memory. Everything else starts zeroed.
    ByteRange fw = firmware_region(config_.memory_size);
    std::mt19937_64 fw_rng(config_.seed ^ 0x46524d57ull);
    for (std::uint64_t i = 0; i < fw.length; ++i) {
        memory_[fw.start + i] = static_cast<std::uint8_t>(fw_rng() & 0xff);
    }
    static constexpr std::string_view kHeader = "FWIMAGE0";
    std::copy_n(kHeader.begin(), std::min<std::uint64_t>(kHeader.size(), fw.length),
                memory_.begin() + static_cast<std::ptrdiff_t>(fw.start));
}

std::vector<GuestEvent> GuestMachine::step(std::uint64_t n) {
    if (n == 0) throw Error(ErrorCode::BadArguments, "step count must be at least 1");
    std::vector<GuestEvent> events;
    for (std::uint64_t i = 0; i < n; ++i) {
        auto batch = step_once();
        events.insert(events.end(), std::make_move_iterator(batch.begin()), std::make_move_iterator(batch.end()));
    }
    return events;
}

std::vector<GuestEvent> GuestMachine::step_once() {
    std::unique_lock lock(gate_);
    std::vector<GuestEvent> out;
    ++clock_;
    const auto& plan = config_.boot_plan;
    while (plan_cursor_ < plan.size() && plan[plan_cursor_].step <= clock_) {
        apply_plan_action(plan[plan_cursor_], out);
        ++plan_cursor_;
    }
    schedule();
    return out;
}

void GuestMachine::apply_plan_action(const PlanAction& a, std::vector<GuestEvent>& out) {
    auto rejected = [&](const std::string& why) {
        GuestEvent e;
        e.step = clock_;
        e.kind = GuestEvent::Kind::ActionRejected;
        e.detail = why;
        out.push_back(std::move(e));
    };
    try {
        switch (a.verb) {
        case PlanAction::Verb::Protected: set_mode(CpuMode::Protected, out); break;
        case PlanAction::Verb::Paged: set_mode(CpuMode::Paged, out); break;
        case PlanAction::Verb::KernelInit: kernel_init(out); break;
        case PlanAction::Verb::Spawn: {
            ensure_kernel_ready();
            const auto& p = create_process(a.name, true);
            out.push_back({clock_, GuestEvent::Kind::ProcSpawn, cpu_.mode, cpu_.mode, p.pid, p.address, {}, p.name});
            break;
        }
        case PlanAction::Verb::Exit: {
            GuestEvent e = apply_rootkit(RootkitAction::terminate(a.pid));
            e.kind = GuestEvent::Kind::ProcExit;
            e.action.reset();
            out.push_back(std::move(e));
            break;
        }
        case PlanAction::Verb::Halt:
            halted_ = true;
            out.push_back({clock_, GuestEvent::Kind::Halted, cpu_.mode, cpu_.mode, 0, 0, {}, {}});
            break;
        case PlanAction::Verb::Resume:
            halted_ = false;
            out.push_back({clock_, GuestEvent::Kind::Resumed, cpu_.mode, cpu_.mode, 0, 0, {}, {}});
            break;
        case PlanAction::Verb::Rootkit: out.push_back(apply_rootkit(a.rootkit)); break;
        }
    } catch (const Error& e) {
        rejected(std::string(to_string(e.code())) + ": " + e.what());
    }
}

void GuestMachine::set_mode(CpuMode mode, std::vector<GuestEvent>& out) {
    if (static_cast<int>(mode) <= static_cast<int>(cpu_.mode)) {
        throw Error(ErrorCode::InvalidConfig, "cpu mode can only move forward");
    }
    out.push_back({clock_, GuestEvent::Kind::ModeTransition, cpu_.mode, mode, 0, 0, {}, {}});
    cpu_.mode = mode;
    cpu_.step_of_last_transition = clock_;
}

void GuestMachine::kernel_init(std::vector<GuestEvent>& out) {
    if (cpu_.mode != CpuMode::Paged) throw Error(ErrorCode::KernelNotReady, "kernel init requires PAGED mode");
    if (kernel_ready_) throw Error(ErrorCode::AlreadyBooted, "kernel already initialized");
    const auto& prof = config_.profile;
    const std::uint64_t align = prof.alignment;
    const std::uint64_t kdb_span = round_up(prof.kdb.size, align);
    const std::uint64_t need = kdb_span + 2 * align;
    const auto& region = prof.kdb_scan_region;
    if (region.length < need) throw Error(ErrorCode::InvalidConfig, "kdb_scan_region too small for the kernel block");
    const std::uint64_t positions = (region.length - need) / align + 1;

    kdb_address_ = region.start + (rng_() % positions) * align;
    tracking_head_ = kdb_address_ + kdb_span;
    sched_head_ = tracking_head_ + align;

    std::copy(prof.kdb_tag.begin(), prof.kdb_tag.end(), memory_.begin() + static_cast<std::ptrdiff_t>(kdb_address_));
    put_u64(kdb_address_ + prof.kdb.tracking_head, tracking_head_);
    put_u64(kdb_address_ + prof.kdb.sched_head, sched_head_);
    for (Address head : {tracking_head_, sched_head_}) {
        put_u64(head + prof.fields.track_flink, head);
        put_u64(head + prof.fields.track_blink, head);
        put_u64(head + prof.fields.sched_flink, head);
        put_u64(head + prof.fields.sched_blink, head);
    }
    kernel_ready_ = true;
    out.push_back({clock_, GuestEvent::Kind::KernelInitDone, cpu_.mode, cpu_.mode, 0, kdb_address_, {}, {}});

    const auto& system = create_process("System", true);
    out.push_back({clock_, GuestEvent::Kind::ProcSpawn, cpu_.mode, cpu_.mode, system.pid, system.address, {}, system.name});
}

void GuestMachine::schedule() {
    if (!kernel_ready_ || halted_ || cpu_.mode != CpuMode::Paged) return;
    const auto& f = config_.profile.fields;
    for (Address node : walk(sched_head_, f.sched_flink)) {
        Address at = node + f.ticks;
        std::uint32_t ticks = load_u32(memory_, at) + 1;
        put_u32(at, ticks);
        if (auto it = occupied_.find(node); it != occupied_.end()) processes_[it->second].ticks = ticks;
    }
}

GuestEvent GuestMachine::inject(const RootkitAction& action) {
    std::unique_lock lock(gate_);
    return apply_rootkit(action);
}

std::uint32_t GuestMachine::spawn(const std::string& name) {
    std::unique_lock lock(gate_);
    ensure_kernel_ready();
    return create_process(name, true).pid;
}

GuestEvent GuestMachine::apply_rootkit(const RootkitAction& action) {
    ensure_kernel_ready();
    const auto& f = config_.profile.fields;
    GuestEvent ev{clock_, GuestEvent::Kind::RootkitAction, cpu_.mode, cpu_.mode, action.pid, 0, action, {}};

    switch (action.kind) {
    case RootkitAction::Kind::Hide: {
        Process* p = live_process(action.pid);
        if (!p) throw Error(ErrorCode::NoSuchPid, "no live process with pid " + std::to_string(action.pid));
        if (!list_contains(tracking_head_, f.track_flink, p->address)) {
            throw Error(ErrorCode::NoSuchPid, "pid " + std::to_string(action.pid) + " is not on the tracking list");
        }
        unlink(p->address, f.track_flink, f.track_blink, true);
        ev.address = p->address;
        break;
    }
    case RootkitAction::Kind::SpawnHidden: {
        const auto& p = create_process(action.name.empty() ? "hidden" : action.name, false);
        ev.pid = p.pid;
        ev.address = p.address;
        break;
    }
    case RootkitAction::Kind::Terminate: {
        Process* p = live_process(action.pid);
        if (!p) throw Error(ErrorCode::NoSuchPid, "no live process with pid " + std::to_string(action.pid));
        if (list_contains(tracking_head_, f.track_flink, p->address)) {
            unlink(p->address, f.track_flink, f.track_blink, false);
        }
        if (list_contains(sched_head_, f.sched_flink, p->address)) {
            unlink(p->address, f.sched_flink, f.sched_blink, false);
        }
        p->state = ProcessState::Terminated;
        p->terminated = true;
        put_u32(p->address + f.state, static_cast<std::uint32_t>(ProcessState::Terminated));
        ev.address = p->address;
        break;
    }
    case RootkitAction::Kind::ReuseSlot: {
        auto it = occupied_.find(action.address);
        if (it == occupied_.end()) {
            throw Error(ErrorCode::NoSuchPid, "no process object at " + hex(action.address));
        }
        Process& p = processes_[it->second];
        if (!p.terminated) throw Error(ErrorCode::NotTerminated, "object at " + hex(action.address) + " is live");
        std::fill_n(memory_.begin() + static_cast<std::ptrdiff_t>(p.address), config_.profile.object_size, 0);
        p.reused = true;
        occupied_.erase(it);
        ev.pid = p.pid;
        ev.address = p.address;
        break;
    }
    }
    return ev;
}

GuestMachine::Process& GuestMachine::create_process(const std::string& name, bool tracked) {
    const auto& prof = config_.profile;
    const auto& f = prof.fields;
    Address at = allocate_slot();
    Process p{next_pid_, name.substr(0, f.name_length), at, ProcessState::Running};
    next_pid_ += 4;

    std::fill_n(memory_.begin() + static_cast<std::ptrdiff_t>(at), prof.object_size, 0);
    write_object(p);
    for (std::uint32_t off : {f.track_flink, f.track_blink, f.sched_flink, f.sched_blink}) put_u64(at + off, at);
    if (tracked) insert_tail(tracking_head_, at, f.track_flink, f.track_blink);
    insert_tail(sched_head_, at, f.sched_flink, f.sched_blink);

    processes_.push_back(std::move(p));
    occupied_[at] = processes_.size() - 1;
    return processes_.back();
}

GuestMachine::Process* GuestMachine::live_process(std::uint32_t pid) {
    for (auto& p : processes_) {
        if (p.pid == pid && !p.terminated) return &p;
    }
    return nullptr;
}

Address GuestMachine::peek_next_slot() const {
    std::unique_lock lock(gate_);
    return draw_slot();
}

Address GuestMachine::draw_slot() const {
    if (!next_slot_) {
        const auto& prof = config_.profile;
        const std::uint64_t slots = (prof.pool_region.length - prof.object_size) / prof.alignment + 1;
        if (occupied_.size() >= slots) throw Error(ErrorCode::OutOfRange, "process pool exhausted");
        Address at = 0;
        do {
            at = prof.pool_region.start + (rng_() % slots) * prof.alignment;
        } while (occupied_.count(at) != 0);
        next_slot_ = at;
    }
    return *next_slot_;
}

Address GuestMachine::allocate_slot() {
    Address at = draw_slot();
    next_slot_.reset();
    return at;
}

void GuestMachine::write_object(const Process& p) {
    const auto& prof = config_.profile;
    const auto& f = prof.fields;
    std::copy(prof.proc_tag.begin(), prof.proc_tag.end(), memory_.begin() + static_cast<std::ptrdiff_t>(p.address));
    put_u32(p.address + f.pid, p.pid);
    put_u32(p.address + f.state, static_cast<std::uint32_t>(p.state));
    put_u32(p.address + f.ticks, p.ticks);
    std::copy(p.name.begin(), p.name.end(), memory_.begin() + static_cast<std::ptrdiff_t>(p.address + f.name));
}

void GuestMachine::insert_tail(Address head, Address node, std::uint32_t flink_off, std::uint32_t blink_off) {
    Address last = u64(head + blink_off);
    put_u64(node + flink_off, head);
    put_u64(node + blink_off, last);
    put_u64(last + flink_off, node);
    put_u64(head + blink_off, node);
}

void GuestMachine::unlink(Address node, std::uint32_t flink_off, std::uint32_t blink_off, bool self_link) {
    Address next = u64(node + flink_off);
    Address prev = u64(node + blink_off);
    put_u64(prev + flink_off, next);
    put_u64(next + blink_off, prev);
    if (self_link) {
        put_u64(node + flink_off, node);
        put_u64(node + blink_off, node);
    }
}

std::vector<Address> GuestMachine::walk(Address head, std::uint32_t flink_off, bool* consistent) const {
    std::vector<Address> nodes;
    std::unordered_set<Address> seen;
    const std::uint64_t object_size = config_.profile.object_size;
    const std::uint64_t limit = config_.memory_size / object_size + 1;
    Address cur = u64(head + flink_off);
    while (cur != head) {
        if (cur > config_.memory_size - object_size || !seen.insert(cur).second || nodes.size() >= limit) {
            if (consistent) *consistent = false;
            break;
        }
        nodes.push_back(cur);
        cur = u64(cur + flink_off);
    }
    return nodes;
}

bool GuestMachine::list_contains(Address head, std::uint32_t flink_off, Address node) const {
    auto nodes = walk(head, flink_off);
    return std::find(nodes.begin(), nodes.end(), node) != nodes.end();
}

std::uint64_t GuestMachine::u64(Address at) const {
    if (at > config_.memory_size - 8) throw Error(ErrorCode::OutOfRange, "kernel read at " + hex(at));
    return load_u64(memory_, at);
}

void GuestMachine::put_u64(Address at, std::uint64_t v) {
    if (at > config_.memory_size - 8) throw Error(ErrorCode::OutOfRange, "kernel write at " + hex(at));
    store_u64(memory_, at, v);
}

void GuestMachine::put_u32(Address at, std::uint32_t v) {
    if (at > config_.memory_size - 4) throw Error(ErrorCode::OutOfRange, "kernel write at " + hex(at));
    store_u32(memory_, at, v);
}

void GuestMachine::ensure_kernel_ready() const {
    if (!kernel_ready_) throw Error(ErrorCode::KernelNotReady, "kernel not initialized yet");
}

std::vector<std::uint8_t> GuestMachine::mem_access(ByteRange range,
                                                   std::optional<std::span<const std::uint8_t>> write_bytes) {
    if (!range.within(config_.memory_size)) {
        throw Error(ErrorCode::OutOfRange, "access " + to_string(range) + " outside memory");
    }
    if (write_bytes) {
        if (write_bytes->size() != range.length) {
            throw Error(ErrorCode::BadArguments, "write length does not match range length");
        }
        write(range.start, *write_bytes);
        return {write_bytes->begin(), write_bytes->end()};
    }
    std::vector<std::uint8_t> out(range.length);
    read(range.start, out);
    return out;
}

std::uint64_t GuestMachine::read(std::uint64_t offset, std::span<std::uint8_t> out) const {
    if (!ByteRange{offset, out.size()}.within(config_.memory_size)) {
        throw Error(ErrorCode::OutOfRange, "read " + to_string(ByteRange{offset, out.size()}) + " outside memory");
    }
    std::shared_lock lock(gate_);
    std::copy_n(memory_.begin() + static_cast<std::ptrdiff_t>(offset), out.size(), out.begin());
    bytes_read_ += out.size();
    return clock_;
}

void GuestMachine::write(std::uint64_t offset, std::span<const std::uint8_t> bytes) {
    if (!ByteRange{offset, bytes.size()}.within(config_.memory_size)) {
        throw Error(ErrorCode::OutOfRange, "write " + to_string(ByteRange{offset, bytes.size()}) + " outside memory");
    }
    std::unique_lock lock(gate_);
    std::copy(bytes.begin(), bytes.end(), memory_.begin() + static_cast<std::ptrdiff_t>(offset));
    external_writes_ = true;
}

void GuestMachine::transact(const std::function<void(MemoryView&)>& fn) {
    std::unique_lock lock(gate_);
    MemoryView view(memory_, clock_, bytes_read_);
    fn(view);
    if (view.wrote_) external_writes_ = true;
}

BufferSource GuestMachine::snapshot() const {
    std::shared_lock lock(gate_);
    bytes_read_ += memory_.size();
    return BufferSource(memory_, "live@" + std::to_string(clock_), clock_);
}

GroundTruth GuestMachine::ground_truth() const {
    std::shared_lock lock(gate_);
    GroundTruth g;
    g.step = clock_;
    g.cpu = cpu_;
    g.kernel_ready = kernel_ready_;
    g.halted = halted_;
    g.external_writes = external_writes_;
    if (kernel_ready_) {
        const auto& f = config_.profile.fields;
        g.kdb_address = kdb_address_;
        g.tracking_head = tracking_head_;
        g.sched_head = sched_head_;
        g.tracking_order = walk(tracking_head_, f.track_flink, &g.lists_consistent);
        g.sched_order = walk(sched_head_, f.sched_flink, &g.lists_consistent);
    }
    auto member = [](const std::vector<Address>& list, Address a) {
        return std::find(list.begin(), list.end(), a) != list.end();
    };
    for (const auto& p : processes_) {
        ProcessTruth t;
        t.pid = p.pid;
        t.name = p.name;
        t.address = p.address;
        t.state = p.state;
        t.ticks = p.ticks;
        t.terminated = p.terminated;
        t.reused = p.reused;
        t.in_tracking = !p.reused && member(g.tracking_order, p.address);
        t.in_sched = !p.reused && member(g.sched_order, p.address);
        t.hidden = !p.terminated && t.in_sched && !t.in_tracking;
        g.processes.push_back(std::move(t));
    }
    return g;
}

std::uint64_t GuestMachine::clock() const {
    std::shared_lock lock(gate_);
    return clock_;
}

CpuState GuestMachine::cpu() const {
    std::shared_lock lock(gate_);
    return cpu_;
}

bool GuestMachine::kernel_ready() const {
    std::shared_lock lock(gate_);
    return kernel_ready_;
}

bool GuestMachine::halted() const {
    std::shared_lock lock(gate_);
    return halted_;
}

// ---------------------------------------------------------------------------
// LiveSource

void LiveSource::read(std::uint64_t offset, std::span<std::uint8_t> out) const {
    check_range(offset, out.size());
    last_step_ = guest_.read(offset, out);
    has_read_ = true;
}

std::optional<std::uint64_t> LiveSource::step() const {
    if (has_read_) return last_step_.load();
    return guest_.clock();
}

}  // namespace introloop::guest
