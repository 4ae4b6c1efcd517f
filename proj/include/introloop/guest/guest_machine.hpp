/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "introloop/bytes.hpp"
#include "introloop/memory_source.hpp"
#include "introloop/profile.hpp"

namespace introloop::guest {

enum class CpuMode { Firmware, Protected, Paged };

std::string_view to_string(CpuMode mode);

struct CpuState {
    CpuMode mode = CpuMode::Firmware;
    std::uint64_t step_of_last_transition = 0;
};

// Memory manipulation a rootkit (or a test) can perform on the running kernel.
struct RootkitAction {
    enum class Kind { Hide, SpawnHidden, Terminate, ReuseSlot };

    Kind kind = Kind::Hide;
    std::uint32_t pid = 0;
    std::string name;
    Address address = 0;

    static RootkitAction hide(std::uint32_t pid) { return {Kind::Hide, pid, {}, 0}; }
    static RootkitAction spawn_hidden(std::string name) { return {Kind::SpawnHidden, 0, std::move(name), 0}; }
    static RootkitAction terminate(std::uint32_t pid) { return {Kind::Terminate, pid, {}, 0}; }
    static RootkitAction reuse_slot(Address address) { return {Kind::ReuseSlot, 0, {}, address}; }
};

std::string_view to_string(RootkitAction::Kind kind);

// One scripted entry of the boot/run timeline.
struct PlanAction {
    enum class Verb { Protected, Paged, KernelInit, Spawn, Exit, Halt, Resume, Rootkit };

    std::uint64_t step = 0;
    Verb verb = Verb::Protected;
    std::string name;             // Spawn
    std::uint32_t pid = 0;        // Exit
    RootkitAction rootkit;        // Rootkit
};

struct GuestConfig {
    std::uint64_t memory_size = 64ull << 20;
    std::uint64_t seed = 0;
    std::vector<PlanAction> boot_plan;
    KernelProfile profile;

    // PROTECTED at step 2, PAGED at 5, kernel init (debug block, list heads
    // and the System process, all in one step) at 8.
    static GuestConfig standard(std::uint64_t memory_size = 64ull << 20, std::uint64_t seed = 0);

    void validate() const;
};

void to_json(nlohmann::json& j, const GuestConfig& c);
void from_json(const nlohmann::json& j, GuestConfig& c);
void to_json(nlohmann::json& j, const PlanAction& a);
void from_json(const nlohmann::json& j, PlanAction& a);

GuestConfig load_config(const std::filesystem::path& path);
std::vector<PlanAction> load_boot_plan(const std::filesystem::path& path);

struct GuestEvent {
    enum class Kind { ModeTransition, KernelInitDone, ProcSpawn, ProcExit, RootkitAction, Halted, Resumed, ActionRejected };

    std::uint64_t step = 0;
    Kind kind = Kind::ModeTransition;
    CpuMode old_mode = CpuMode::Firmware;
    CpuMode new_mode = CpuMode::Firmware;
    std::uint32_t pid = 0;
    Address address = 0;
    std::optional<RootkitAction> action;
    std::string detail;
};

std::string_view to_string(GuestEvent::Kind kind);
void to_json(nlohmann::json& j, const GuestEvent& e);

struct ProcessTruth {
    std::uint32_t pid = 0;
    std::string name;
    Address address = 0;
    ProcessState state = ProcessState::Init;
    std::uint32_t ticks = 0;
    bool terminated = false;
    bool reused = false;   // slot zero-filled after termination
    bool in_tracking = false;
    bool in_sched = false;
    // Live, scheduled, and absent from the tracking list.
    bool hidden = false;
};

// Internal state of the simulator. Test oracle only: no introspection code
// path consumes it.
struct GroundTruth {
    std::uint64_t step = 0;
    CpuState cpu;
    bool kernel_ready = false;
    bool halted = false;
    Address kdb_address = 0;
    Address tracking_head = 0;
    Address sched_head = 0;
    std::vector<ProcessTruth> processes;  // creation order
    std::vector<Address> tracking_order;
    std::vector<Address> sched_order;
    bool lists_consistent = true;
    bool external_writes = false;  // memory modified through mem_access/transact

    const ProcessTruth* find_pid(std::uint32_t pid) const;
    const ProcessTruth* find_address(Address address) const;
    std::vector<std::uint32_t> live_pids() const;
    std::vector<std::uint32_t> hidden_pids() const;
    std::vector<Address> residue_addresses() const;  // terminated and not reused
};

void to_json(nlohmann::json& j, const GroundTruth& g);

// Exclusive read/write access to guest memory, handed out by
// GuestMachine::transact while the step gate is held.
class MemoryView final : public MemorySource {
public:
    using MemorySource::read;

    std::uint64_t size() const override { return memory_.size(); }
    void read(std::uint64_t offset, std::span<std::uint8_t> out) const override;
    std::string describe() const override { return "guest (exclusive)"; }
    std::optional<std::uint64_t> step() const override { return step_; }

    void write(std::uint64_t offset, std::span<const std::uint8_t> bytes);
    void write_u64(std::uint64_t offset, std::uint64_t value);

private:
    friend class GuestMachine;
    MemoryView(std::vector<std::uint8_t>& memory, std::uint64_t step, std::atomic<std::uint64_t>& read_counter)
        : memory_(memory), step_(step), read_counter_(read_counter) {}

    std::vector<std::uint8_t>& memory_;
    std::uint64_t step_;
    std::atomic<std::uint64_t>& read_counter_;
    bool wrote_ = false;
};

/// Deterministic stand-in for a guest VM: flat little-endian physical memory
/// hosting a miniature kernel with a tracking list and a scheduling list of
/// process objects, a scripted boot timeline and a toy round-robin scheduler.
///
/// One logical writer steps the machine. Reads, writes and transactions from
/// other threads are serialized against step boundaries, so every read
/// observes memory exactly as it was after some integer step.
class GuestMachine {
public:
    explicit GuestMachine(GuestConfig config);

    GuestMachine(const GuestMachine&) = delete;
    GuestMachine& operator=(const GuestMachine&) = delete;

    // Advances the clock by n >= 1 steps and returns what happened.
    std::vector<GuestEvent> step(std::uint64_t n = 1);

    GuestEvent inject(const RootkitAction& action);

    // Regular process creation outside the scripted plan. Returns its pid.
    std::uint32_t spawn(const std::string& name);

    // mem_access: read when `write_bytes` is empty, otherwise write and echo.
    std::vector<std::uint8_t> mem_access(ByteRange range,
                                         std::optional<std::span<const std::uint8_t>> write_bytes = std::nullopt);

    // Step-atomic read; returns the step the bytes belong to.
    std::uint64_t read(std::uint64_t offset, std::span<std::uint8_t> out) const;
    void write(std::uint64_t offset, std::span<const std::uint8_t> bytes);

    // Runs `fn` with exclusive access between two steps.
    void transact(const std::function<void(MemoryView&)>& fn);

    BufferSource snapshot() const;
    GroundTruth ground_truth() const;

    std::uint64_t clock() const;
    CpuState cpu() const;
    bool kernel_ready() const;
    bool halted() const;

    const KernelProfile& profile() const { return config_.profile; }
    const GuestConfig& config() const { return config_; }
    std::uint64_t memory_size() const { return config_.memory_size; }

    // Bytes handed out to readers since creation (acquisition accounting).
    std::uint64_t bytes_read() const { return bytes_read_.load(); }

    // Where the next process object will be allocated (test hook).
    Address peek_next_slot() const;

private:
    struct Process {
        std::uint32_t pid;
        std::string name;
        Address address;
        ProcessState state;
        std::uint32_t ticks = 0;
        bool terminated = false;
        bool reused = false;
    };

    std::vector<GuestEvent> step_once();
    void apply_plan_action(const PlanAction& a, std::vector<GuestEvent>& out);
    GuestEvent apply_rootkit(const RootkitAction& action);
    void set_mode(CpuMode mode, std::vector<GuestEvent>& out);
    void kernel_init(std::vector<GuestEvent>& out);
    void schedule();

    Process& create_process(const std::string& name, bool tracked);
    Process* live_process(std::uint32_t pid);
    Address allocate_slot();
    Address draw_slot() const;
    void write_object(const Process& p);
    void insert_tail(Address head, Address node, std::uint32_t flink_off, std::uint32_t blink_off);
    void unlink(Address node, std::uint32_t flink_off, std::uint32_t blink_off, bool self_link);
    std::vector<Address> walk(Address head, std::uint32_t flink_off, bool* consistent = nullptr) const;
    bool list_contains(Address head, std::uint32_t flink_off, Address node) const;

    std::uint64_t u64(Address at) const;
    void put_u64(Address at, std::uint64_t v);
    void put_u32(Address at, std::uint32_t v);
    void ensure_kernel_ready() const;

    GuestConfig config_;
    std::vector<std::uint8_t> memory_;
    CpuState cpu_;
    std::uint64_t clock_ = 0;
    bool kernel_ready_ = false;
    bool halted_ = false;
    bool external_writes_ = false;
    Address kdb_address_ = 0;
    Address tracking_head_ = 0;
    Address sched_head_ = 0;
    std::uint32_t next_pid_ = 4;
    std::vector<Process> processes_;
    std::map<Address, std::size_t> occupied_;  // slot -> index into processes_
    mutable std::mt19937_64 rng_;
    mutable std::optional<Address> next_slot_;
    std::size_t plan_cursor_ = 0;

    mutable std::shared_mutex gate_;
    mutable std::atomic<std::uint64_t> bytes_read_{0};
};

// Reads straight through to a live guest; every call is step-atomic on its own.
class LiveSource final : public MemorySource {
public:
    using MemorySource::read;

    explicit LiveSource(const GuestMachine& guest) : guest_(guest) {}

    std::uint64_t size() const override { return guest_.memory_size(); }
    void read(std::uint64_t offset, std::span<std::uint8_t> out) const override;
    std::string describe() const override { return "live"; }
    std::optional<std::uint64_t> step() const override;

private:
    const GuestMachine& guest_;
    mutable std::atomic<std::uint64_t> last_step_{0};
    mutable std::atomic<bool> has_read_{false};
};

}  // namespace introloop::guest
