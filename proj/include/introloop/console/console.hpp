/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "introloop/dump/dump_store.hpp"
#include "introloop/error.hpp"
#include "introloop/guest/guest_machine.hpp"
#include "introloop/introspect/introspect.hpp"
#include "introloop/monitor/monitor.hpp"

namespace introloop::console {

namespace fs = std::filesystem;

struct CommandResult {
    enum class Status { Ok, Error };

    Status status = Status::Ok;
    std::string text;
    nlohmann::json payload = nlohmann::json::object();
    std::optional<ErrorCode> code;
    std::uint64_t step = 0;

    bool ok() const { return status == Status::Ok; }
};

void to_json(nlohmann::json& j, const CommandResult& r);

struct Session {
    std::uint32_t id = 0;
    dump::DumpManifest manifest;
    std::uint64_t created_at_step = 0;
    bool open = false;
};

void to_json(nlohmann::json& j, const Session& s);

struct ConsoleOptions {
    fs::path scratch_dir;
    bool keep_temp = false;
};

// $HYBIS_SCRATCH when set, else <system temp>/introloop.
fs::path default_scratch_dir();

enum class ViewSource { Default, Live, Session };

std::optional<ViewSource> parse_view_source(std::string_view s);

/// The operator surface over one guest and its monitor. Verbs keep the
/// leading-dot syntax: `.pslist`, `.psblock 0x1a40`, ...
///
/// Every command runs under one lock, serialized with the monitor loop
/// (`.step`). Event reads bypass the lock so long-polls never block commands.
///
/// Without an open session each analysis command works on a temporary full
/// dump in the scratch directory that is removed afterwards.
class Console {
public:
    // A null guest/monitor is the detached state: every verb except `.help`
    // fails with GuestNotAttached.
    Console(guest::GuestMachine* guest, monitor::Monitor* monitor, ConsoleOptions options = {});
    ~Console();

    Console(const Console&) = delete;
    Console& operator=(const Console&) = delete;

    CommandResult dispatch(std::string_view line);

    // Typed entry points shared by the REPL and the HTTP API. They throw
    // Error; dispatch() turns that into an ERROR result.
    nlohmann::json state();
    introspect::CrossViewReport processes(ViewSource source = ViewSource::Default);
    nlohmann::json checkpoints();
    dump::DumpManifest dump_memory(std::optional<fs::path> path);
    dump::RangeUpdate dump_range_diff(ByteRange range);
    void set_boot_dump(const fs::path& path);
    reactor::BlockReceipt block(Address address, bool unlink_tracking = false);
    Session start_session(std::optional<fs::path> path);
    Session stop_session(bool discard = false);
    monitor::RunResult step(std::uint64_t n);
    guest::GuestEvent inject(const guest::RootkitAction& action);
    std::uint32_t spawn(const std::string& name);
    monitor::WatchId watch(ByteRange range, std::uint64_t period);
    std::optional<reactor::BlockReceipt> decide(std::uint64_t finding_id, monitor::Decision decision);
    std::vector<monitor::MonitorEvent> events(std::uint64_t since,
                                              std::chrono::milliseconds wait = std::chrono::milliseconds(0));
    std::vector<monitor::Finding> findings();

    bool attached() const { return guest_ != nullptr && monitor_ != nullptr; }
    std::uint64_t guest_step() const;
    std::optional<Session> session() const;
    const ConsoleOptions& options() const { return options_; }

    static std::string help();

private:
    CommandResult run_verb(const std::string& verb, const std::vector<std::string>& args);
    void require_attached() const;
    fs::path temp_path(std::string_view stem);
    fs::path scratch_path(std::string_view stem);

    guest::GuestMachine* guest_;
    monitor::Monitor* monitor_;
    ConsoleOptions options_;
    mutable std::recursive_mutex mu_;
    std::optional<Session> session_;
    std::uint32_t next_session_ = 1;
    std::uint64_t temp_counter_ = 0;
    std::vector<dump::DumpManifest> watch_dumps_;
};

// "0x1a40" (hex) or "6720" (decimal).
std::uint64_t parse_number(std::string_view s);

}  // namespace introloop::console
