/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "introloop/console/console.hpp"

#include <charconv>
#include <cstdlib>
#include <sstream>
#include <unistd.h>

namespace introloop::console {

using nlohmann::json;

namespace {

std::vector<std::string> tokenize(std::string_view line) {
    std::vector<std::string> out;
    std::istringstream in{std::string(line)};
    for (std::string tok; in >> tok;) out.push_back(tok);
    return out;
}

void expect_args(const std::vector<std::string>& args, std::size_t min, std::size_t max, std::string_view usage) {
    if (args.size() < min || args.size() > max) {
        throw Error(ErrorCode::BadArguments, "usage: " + std::string(usage));
    }
}

json checkpoint_json(const dump::Checkpoint& c) {
    json ranges = json::array();
    for (const auto& r : c.ranges) ranges.push_back({{"start", r.start}, {"length", r.length}});
    return {{"id", c.id}, {"source_step", c.source_step}, {"ranges", ranges}};
}

json ranges_json(const std::vector<ByteRange>& rs) {
    json out = json::array();
    for (const auto& r : rs) out.push_back({{"start", r.start}, {"length", r.length}});
    return out;
}

std::string receipt_text(const reactor::BlockReceipt& r) {
    std::ostringstream out;
    out << "blocked pid " << r.target_pid << " at " << hex(r.target_address) << " (step " << r.step_applied << ", "
        << r.prior_links.size() << " link writes" << (r.unlinked_tracking ? ", tracking list too" : "") << ")";
    return out.str();
}

}  // namespace

std::uint64_t parse_number(std::string_view s) {
    int base = 10;
    if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
        s.remove_prefix(2);
        base = 16;
    }
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
        throw Error(ErrorCode::BadArguments, "not a number: '" + std::string(s) + "'");
    }
    return v;
}

std::optional<ViewSource> parse_view_source(std::string_view s) {
    if (s.empty()) return ViewSource::Default;
    if (s == "live") return ViewSource::Live;
    if (s == "session") return ViewSource::Session;
    return std::nullopt;
}

fs::path default_scratch_dir() {
    if (const char* env = std::getenv("HYBIS_SCRATCH"); env != nullptr && *env != '\0') return env;
    return fs::temp_directory_path() / "introloop";
}

void to_json(json& j, const CommandResult& r) {
    j = {{"status", r.ok() ? "OK" : "ERROR"}, {"text", r.text}, {"payload", r.payload}, {"step", r.step}};
    if (r.code) j["code"] = to_string(*r.code);
}

void to_json(json& j, const Session& s) {
    j = {{"id", s.id},
         {"open", s.open},
         {"created_at_step", s.created_at_step},
         {"base_path", s.manifest.base_path.string()},
         {"manifest_path", s.manifest.manifest_path().string()},
         {"latest_checkpoint", s.manifest.checkpoints.empty() ? 0 : s.manifest.latest()}};
}

Console::Console(guest::GuestMachine* guest, monitor::Monitor* monitor, ConsoleOptions options)
    : guest_(guest), monitor_(monitor), options_(std::move(options)) {
    if (options_.scratch_dir.empty()) options_.scratch_dir = default_scratch_dir();
}

Console::~Console() {
    if (options_.keep_temp) return;
    for (const auto& m : watch_dumps_) {
        try {
            dump::remove_dump(m);
        } catch (const std::exception&) {
        }
    }
}

void Console::require_attached() const {
    if (!attached()) throw Error(ErrorCode::GuestNotAttached, "no guest attached");
}

std::uint64_t Console::guest_step() const { return guest_ ? guest_->clock() : 0; }

std::optional<Session> Console::session() const {
    std::lock_guard lock(mu_);
    return session_;
}

fs::path Console::scratch_path(std::string_view stem) {
    std::error_code ec;
    fs::create_directories(options_.scratch_dir, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "scratch dir " + options_.scratch_dir.string() + ": " + ec.message());
    return options_.scratch_dir / (std::string(stem) + ".img");
}

fs::path Console::temp_path(std::string_view stem) {
    return scratch_path(std::string(stem) + "-" + std::to_string(::getpid()) + "-" + std::to_string(++temp_counter_));
}

json Console::state() {
    std::lock_guard lock(mu_);
    require_attached();
    const auto cpu = guest_->cpu();
    json j = {{"step", guest_->clock()},
              {"cpu_mode", to_string(cpu.mode)},
              {"kernel_ready", guest_->kernel_ready()},
              {"halted", guest_->halted()},
              {"memory_size", guest_->memory_size()},
              {"policy", to_string(monitor_->policy().mode)},
              {"boot_dump_armed", monitor_->boot_dump_armed()},
              {"boot_dump_step", monitor_->boot_dump_step() ? json(*monitor_->boot_dump_step()) : json(nullptr)},
              {"last_event_id", monitor_->events().last_id()},
              {"pending_findings", monitor_->pending_findings().size()},
              {"session", session_ ? json(*session_) : json(nullptr)}};
    return j;
}

introspect::CrossViewReport Console::processes(ViewSource source) {
    std::lock_guard lock(mu_);
    require_attached();
    if (source == ViewSource::Default) source = session_ ? ViewSource::Session : ViewSource::Live;
    if (source == ViewSource::Session) {
        if (!session_) throw Error(ErrorCode::NoOpenSession, "no open session");
        auto src = dump::open_dump(session_->manifest);
        return introspect::cross_view(*src, monitor_->profile());
    }
    // Standalone: a temporary dump for this command only.
    guest::LiveSource live(*guest_);
    const auto manifest = dump::dump_full(live, temp_path("pslist"));
    std::optional<introspect::CrossViewReport> report;
    std::exception_ptr failure;
    try {
        auto src = dump::open_dump(manifest);
        report = introspect::cross_view(*src, monitor_->profile());
    } catch (...) {
        failure = std::current_exception();
    }
    if (!options_.keep_temp) dump::remove_dump(manifest);
    if (failure) std::rethrow_exception(failure);
    return std::move(*report);
}

json Console::checkpoints() {
    std::lock_guard lock(mu_);
    require_attached();
    json j = {{"step", guest_->clock()}, {"session", nullptr}, {"checkpoints", json::array()}};
    if (session_) {
        j["session"] = *session_;
        for (const auto& c : session_->manifest.checkpoints) j["checkpoints"].push_back(checkpoint_json(c));
    }
    json watches = json::array();
    for (auto id : monitor_->watch_ids()) {
        const auto& w = monitor_->watch(id);
        watches.push_back({{"id", id},
                           {"start", w.range.start},
                           {"length", w.range.length},
                           {"period", w.period},
                           {"base_path", w.manifest.base_path.string()}});
    }
    j["watches"] = watches;
    return j;
}

dump::DumpManifest Console::dump_memory(std::optional<fs::path> path) {
    std::lock_guard lock(mu_);
    require_attached();
    guest::LiveSource live(*guest_);
    return dump::dump_full(live, path ? *path : temp_path("dumpmem"));
}

dump::RangeUpdate Console::dump_range_diff(ByteRange range) {
    std::lock_guard lock(mu_);
    require_attached();
    if (!session_) throw Error(ErrorCode::NoOpenSession, ".dumprangediff needs an open session");
    guest::LiveSource live(*guest_);
    return dump::dump_update_range_with_diff(session_->manifest, range, live);
}

void Console::set_boot_dump(const fs::path& path) {
    std::lock_guard lock(mu_);
    require_attached();
    monitor_->arm_boot_dump(path);
}

reactor::BlockReceipt Console::block(Address address, bool unlink_tracking) {
    std::lock_guard lock(mu_);
    require_attached();
    guest::LiveSource live(*guest_);
    const auto kernel = introspect::locate_kernel(live, monitor_->profile());
    return reactor::block_process(*guest_, monitor_->profile(), kernel, address,
                                  reactor::BlockOptions{unlink_tracking});
}

Session Console::start_session(std::optional<fs::path> path) {
    std::lock_guard lock(mu_);
    require_attached();
    if (session_) {
        throw Error(ErrorCode::SessionAlreadyOpen, "session " + std::to_string(session_->id) + " is already open");
    }
    Session s;
    s.id = next_session_;
    guest::LiveSource live(*guest_);
    s.manifest = dump::dump_full(live, path ? *path : scratch_path("session-" + std::to_string(s.id)));
    s.created_at_step = s.manifest.created_at_step;
    s.open = true;
    ++next_session_;
    session_ = s;
    return s;
}

Session Console::stop_session(bool discard) {
    std::lock_guard lock(mu_);
    require_attached();
    if (!session_) throw Error(ErrorCode::NoOpenSession, "no open session");
    Session s = std::move(*session_);
    session_.reset();
    s.open = false;
    if (discard) dump::remove_dump(s.manifest);
    return s;
}

monitor::RunResult Console::step(std::uint64_t n) {
    std::lock_guard lock(mu_);
    require_attached();
    if (n == 0) throw Error(ErrorCode::BadArguments, "step count must be at least 1");
    return monitor_->run(n);
}

guest::GuestEvent Console::inject(const guest::RootkitAction& action) {
    std::lock_guard lock(mu_);
    require_attached();
    return guest_->inject(action);
}

std::uint32_t Console::spawn(const std::string& name) {
    std::lock_guard lock(mu_);
    require_attached();
    return guest_->spawn(name);
}

monitor::WatchId Console::watch(ByteRange range, std::uint64_t period) {
    std::lock_guard lock(mu_);
    require_attached();
    if (range.empty() || !range.within(guest_->memory_size())) {
        throw Error(ErrorCode::OutOfRange, "watch range " + to_string(range) + " outside memory");
    }
    if (period == 0) throw Error(ErrorCode::BadArguments, "watch period must be at least 1");
    guest::LiveSource live(*guest_);
    auto manifest = dump::dump_full(live, temp_path("watch"));
    watch_dumps_.push_back(manifest);
    return monitor_->watch_range(monitor::WatchSpec{range, period, std::move(manifest)});
}

std::optional<reactor::BlockReceipt> Console::decide(std::uint64_t finding_id, monitor::Decision decision) {
    std::lock_guard lock(mu_);
    require_attached();
    return monitor_->decide(finding_id, decision);
}

std::vector<monitor::MonitorEvent> Console::events(std::uint64_t since, std::chrono::milliseconds wait) {
    require_attached();
    return monitor_->events().since(since, wait);
}

std::vector<monitor::Finding> Console::findings() {
    std::lock_guard lock(mu_);
    require_attached();
    return monitor_->findings();
}

std::string Console::help() {
    return ".dumpmem [path]                   full dump of guest memory\n"
           ".dumprangediff <start> <length>   refresh a range of the session dump, list changes\n"
           ".setbootdump <path>               dump automatically once the kernel is analyzable\n"
           ".pslist [live|session]            cross-view process list\n"
           ".psblock <address> [tracking]     unlink a process from the scheduling list\n"
           ".startsess [path]                 open a session on a new full dump\n"
           ".stopsess [discard]               close the session\n"
           ".step [n]                         run the monitor loop for n guest steps\n"
           ".spawn <name>                     start a regular process\n"
           ".inject hide <pid> | spawn_hidden <name> | terminate <pid> | reuse_slot <address>\n"
           ".watch <start> <length> [period]  watch a range in the monitor loop\n"
           ".decide <finding> block|observe   answer a pending finding\n"
           ".findings                         list findings\n"
           ".events [since]                   monitor events after an id\n"
           ".state                            guest and session state\n"
           ".help                             this text\n";
}

CommandResult Console::dispatch(std::string_view line) {
    const auto tokens = tokenize(line);
    CommandResult result;
    if (tokens.empty()) {
        result.step = guest_step();
        return result;
    }
    try {
        const std::vector<std::string> args(tokens.begin() + 1, tokens.end());
        result = run_verb(tokens.front(), args);
    } catch (const Error& e) {
        result.status = CommandResult::Status::Error;
        result.code = e.code();
        result.text = std::string(to_string(e.code())) + ": " + e.what();
        result.payload = {{"code", to_string(e.code())}, {"message", e.what()}};
    } catch (const std::exception& e) {
        result.status = CommandResult::Status::Error;
        result.code = ErrorCode::IoFailure;
        result.text = std::string("IoFailure: ") + e.what();
        result.payload = {{"code", "IoFailure"}, {"message", e.what()}};
    }
    result.step = guest_step();
    return result;
}

CommandResult Console::run_verb(const std::string& verb, const std::vector<std::string>& args) {
    CommandResult r;
    if (verb == ".help") {
        r.text = help();
        return r;
    }
    require_attached();

    if (verb == ".dumpmem") {
        expect_args(args, 0, 1, ".dumpmem [path]");
        const auto m = dump_memory(args.empty() ? std::nullopt : std::optional<fs::path>(args[0]));
        r.payload = m;
        r.text = "wrote " + std::to_string(m.memory_size) + " bytes to " + m.base_path.string() + " (step " +
                 std::to_string(m.created_at_step) + ")";
    } else if (verb == ".dumprangediff") {
        expect_args(args, 2, 2, ".dumprangediff <start> <length>");
        const ByteRange range{parse_number(args[0]), parse_number(args[1])};
        const auto u = dump_range_diff(range);
        r.payload = {{"checkpoint", checkpoint_json(u.checkpoint)}, {"changes", ranges_json(u.changes)}};
        std::ostringstream out;
        out << "checkpoint " << u.checkpoint.id << " over " << to_string(range) << ": " << u.changes.size()
            << " changed range(s)";
        for (const auto& c : u.changes) out << "\n  " << to_string(c);
        r.text = out.str();
    } else if (verb == ".setbootdump") {
        expect_args(args, 1, 1, ".setbootdump <path>");
        set_boot_dump(args[0]);
        r.payload = {{"path", args[0]}};
        r.text = "boot dump armed: " + args[0];
    } else if (verb == ".pslist") {
        expect_args(args, 0, 1, ".pslist [live|session]");
        const auto src = parse_view_source(args.empty() ? "" : args[0]);
        if (!src) throw Error(ErrorCode::BadArguments, "usage: .pslist [live|session]");
        const auto report = processes(*src);
        r.payload = report;
        r.text = introspect::render_report(report);
        for (const auto& e : report.walk_errors) r.text += "warning: " + e + "\n";
    } else if (verb == ".psblock") {
        expect_args(args, 1, 2, ".psblock <address> [tracking]");
        if (args.size() == 2 && args[1] != "tracking") throw Error(ErrorCode::BadArguments, "usage: .psblock <address> [tracking]");
        const auto receipt = block(parse_number(args[0]), args.size() == 2);
        r.payload = receipt;
        r.text = receipt_text(receipt);
    } else if (verb == ".startsess") {
        expect_args(args, 0, 1, ".startsess [path]");
        const auto s = start_session(args.empty() ? std::nullopt : std::optional<fs::path>(args[0]));
        r.payload = s;
        r.text = "session " + std::to_string(s.id) + " open on " + s.manifest.base_path.string();
    } else if (verb == ".stopsess") {
        expect_args(args, 0, 1, ".stopsess [discard]");
        if (args.size() == 1 && args[0] != "discard") throw Error(ErrorCode::BadArguments, "usage: .stopsess [discard]");
        const auto s = stop_session(args.size() == 1);
        r.payload = s;
        r.text = "session " + std::to_string(s.id) + " closed";
    } else if (verb == ".step") {
        expect_args(args, 0, 1, ".step [n]");
        const auto res = step(args.empty() ? 1 : parse_number(args[0]));
        r.payload = {{"guest_events", res.guest_events}, {"events", res.events}};
        std::ostringstream out;
        out << "now at step " << guest_->clock();
        for (const auto& e : res.guest_events) out << "\n  guest: " << json(e).dump();
        for (const auto& e : res.events) out << "\n  monitor: " << json(e).dump();
        r.text = out.str();
    } else if (verb == ".spawn") {
        expect_args(args, 1, 1, ".spawn <name>");
        const auto pid = spawn(args[0]);
        r.payload = {{"pid", pid}};
        r.text = "spawned pid " + std::to_string(pid);
    } else if (verb == ".inject") {
        expect_args(args, 2, 2, ".inject hide <pid> | spawn_hidden <name> | terminate <pid> | reuse_slot <address>");
        guest::RootkitAction a;
        if (args[0] == "hide") {
            a = guest::RootkitAction::hide(static_cast<std::uint32_t>(parse_number(args[1])));
        } else if (args[0] == "spawn_hidden") {
            a = guest::RootkitAction::spawn_hidden(args[1]);
        } else if (args[0] == "terminate") {
            a = guest::RootkitAction::terminate(static_cast<std::uint32_t>(parse_number(args[1])));
        } else if (args[0] == "reuse_slot") {
            a = guest::RootkitAction::reuse_slot(parse_number(args[1]));
        } else {
            throw Error(ErrorCode::BadArguments, "unknown rootkit action '" + args[0] + "'");
        }
        const auto e = inject(a);
        r.payload = e;
        r.text = std::string(to_string(a.kind)) + " applied: pid " + std::to_string(e.pid) + " at " + hex(e.address);
    } else if (verb == ".watch") {
        expect_args(args, 2, 3, ".watch <start> <length> [period]");
        const ByteRange range{parse_number(args[0]), parse_number(args[1])};
        const auto id = watch(range, args.size() == 3 ? parse_number(args[2]) : 1);
        r.payload = {{"watch", id}};
        r.text = "watch " + std::to_string(id) + " on " + to_string(range);
    } else if (verb == ".decide") {
        expect_args(args, 2, 2, ".decide <finding> block|observe");
        const auto d = monitor::parse_decision(args[1]);
        if (!d) throw Error(ErrorCode::BadArguments, "decision must be block or observe");
        const auto receipt = decide(parse_number(args[0]), *d);
        r.payload = {{"finding_id", parse_number(args[0])}, {"action", to_string(*d)}};
        if (receipt) {
            r.payload["receipt"] = *receipt;
            r.text = receipt_text(*receipt);
        } else {
            r.text = "finding " + args[0] + " observed";
        }
    } else if (verb == ".findings") {
        expect_args(args, 0, 0, ".findings");
        const auto fs = findings();
        r.payload = {{"findings", fs}};
        std::ostringstream out;
        for (const auto& f : fs) {
            out << "#" << f.id << " " << to_string(f.classification) << " pid " << f.record.pid << " "
                << f.record.name << " at " << hex(f.record.address) << " -> " << to_string(f.status) << "\n";
        }
        r.text = out.str();
    } else if (verb == ".events") {
        expect_args(args, 0, 1, ".events [since]");
        const auto evs = events(args.empty() ? 0 : parse_number(args[0]));
        r.payload = {{"events", evs}};
        std::ostringstream out;
        for (const auto& e : evs) out << json(e).dump() << "\n";
        r.text = out.str();
    } else if (verb == ".state") {
        expect_args(args, 0, 0, ".state");
        r.payload = state();
        r.text = r.payload.dump(2);
    } else {
        throw Error(ErrorCode::UnknownCommand, "unknown command '" + verb + "' (try .help)");
    }
    return r;
}

}  // namespace introloop::console
