/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "introloop/console/service.hpp"

#include <algorithm>

#include <httplib.h>

namespace introloop::console {

using nlohmann::json;

namespace {

constexpr long kMaxWaitMs = 30000;

std::uint64_t json_number(const json& j, const char* key) {
    if (!j.contains(key)) throw Error(ErrorCode::BadArguments, std::string("missing field '") + key + "'");
    const auto& v = j.at(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return v.get<std::uint64_t>();
    if (v.is_string()) return parse_number(v.get<std::string>());
    throw Error(ErrorCode::BadArguments, std::string("field '") + key + "' must be a number or hex string");
}

std::string json_string(const json& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_string()) {
        throw Error(ErrorCode::BadArguments, std::string("missing string field '") + key + "'");
    }
    return j.at(key).get<std::string>();
}

std::optional<std::string> optional_string(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return json_string(j, key);
}

json parse_body(std::string_view body) {
    if (body.empty()) return json::object();
    json j = json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::BadArguments, "body must be a JSON object");
    return j;
}

json ranges_json(const std::vector<ByteRange>& rs) {
    json out = json::array();
    for (const auto& r : rs) out.push_back({{"start", r.start}, {"length", r.length}});
    return out;
}

json route(Console& c, std::string_view method, std::string_view path, const std::map<std::string, std::string>& query,
           std::string_view body) {
    auto q = [&](const char* key) -> std::optional<std::string> {
        auto it = query.find(key);
        return it == query.end() ? std::nullopt : std::optional(it->second);
    };

    if (method == "GET") {
        if (path == "/api/state") return c.state();
        if (path == "/api/processes") {
            const auto src = parse_view_source(q("source").value_or(""));
            if (!src) throw Error(ErrorCode::BadArguments, "source must be live or session");
            return c.processes(*src);
        }
        if (path == "/api/checkpoints") return c.checkpoints();
        if (path == "/api/events") {
            const std::uint64_t since = q("since") ? parse_number(*q("since")) : 0;
            const long wait = q("wait_ms") ? static_cast<long>(std::min<std::uint64_t>(parse_number(*q("wait_ms")), kMaxWaitMs)) : 0;
            const auto evs = c.events(since, std::chrono::milliseconds(wait));
            const std::uint64_t last = evs.empty() ? since : evs.back().id;
            return {{"events", evs}, {"last_id", last}};
        }
        if (path == "/api/findings") return {{"findings", c.findings()}};
    } else if (method == "POST") {
        const json b = parse_body(body);
        if (path == "/api/dump") {
            if (b.contains("range") && !b.at("range").is_null()) {
                const auto& r = b.at("range");
                if (!r.is_object()) throw Error(ErrorCode::BadArguments, "range must be {start, length}");
                const auto u = c.dump_range_diff({json_number(r, "start"), json_number(r, "length")});
                json ranges = json::array();
                for (const auto& br : u.checkpoint.ranges) ranges.push_back({{"start", br.start}, {"length", br.length}});
                return {{"checkpoint",
                         {{"id", u.checkpoint.id}, {"source_step", u.checkpoint.source_step}, {"ranges", ranges}}},
                        {"changes", ranges_json(u.changes)}};
            }
            const auto p = optional_string(b, "path");
            return {{"manifest", c.dump_memory(p ? std::optional<fs::path>(*p) : std::nullopt)}};
        }
        if (path == "/api/block") {
            const bool tracking = b.value("unlink_tracking", false);
            return c.block(json_number(b, "address"), tracking);
        }
        if (path == "/api/decision") {
            const auto d = monitor::parse_decision(json_string(b, "action"));
            if (!d) throw Error(ErrorCode::BadArguments, "action must be BLOCK or OBSERVE");
            const auto id = json_number(b, "finding_id");
            const auto receipt = c.decide(id, *d);
            json out = {{"finding_id", id}, {"action", to_string(*d)}};
            out["receipt"] = receipt ? json(*receipt) : json(nullptr);
            return out;
        }
        if (path == "/api/step") {
            const auto res = c.step(b.contains("n") ? json_number(b, "n") : 1);
            return {{"guest_events", res.guest_events}, {"events", res.events}};
        }
        if (path == "/api/session") {
            const auto action = json_string(b, "action");
            if (action == "start") {
                const auto p = optional_string(b, "path");
                return {{"session", c.start_session(p ? std::optional<fs::path>(*p) : std::nullopt)}};
            }
            if (action == "stop") return {{"session", c.stop_session(b.value("discard", false))}};
            throw Error(ErrorCode::BadArguments, "action must be start or stop");
        }
        if (path == "/api/inject") {
            const auto kind = json_string(b, "kind");
            guest::RootkitAction a;
            if (kind == "hide") {
                a = guest::RootkitAction::hide(static_cast<std::uint32_t>(json_number(b, "pid")));
            } else if (kind == "spawn_hidden") {
                a = guest::RootkitAction::spawn_hidden(json_string(b, "name"));
            } else if (kind == "terminate") {
                a = guest::RootkitAction::terminate(static_cast<std::uint32_t>(json_number(b, "pid")));
            } else if (kind == "reuse_slot") {
                a = guest::RootkitAction::reuse_slot(json_number(b, "address"));
            } else {
                throw Error(ErrorCode::BadArguments, "unknown rootkit action '" + kind + "'");
            }
            return {{"event", c.inject(a)}};
        }
        if (path == "/api/spawn") return {{"pid", c.spawn(json_string(b, "name"))}};
        if (path == "/api/bootdump") {
            const auto p = json_string(b, "path");
            c.set_boot_dump(p);
            return {{"path", p}};
        }
        if (path == "/api/watch") {
            const ByteRange range{json_number(b, "start"), json_number(b, "length")};
            return {{"watch", c.watch(range, b.contains("period") ? json_number(b, "period") : 1)}};
        }
    }
    throw Error(ErrorCode::UnknownCommand, std::string(method) + " " + std::string(path) + " is not an API endpoint");
}

}  // namespace

int http_status(ErrorCode code) {
    switch (code) {
    case ErrorCode::BadArguments:
    case ErrorCode::InvalidConfig:
    case ErrorCode::OutOfRange:
        return 400;
    case ErrorCode::UnknownCommand:
    case ErrorCode::UnknownFinding:
    case ErrorCode::NotAProcessObject:
    case ErrorCode::NoSuchPid:
        return 404;
    case ErrorCode::AlreadyUnlinked:
    case ErrorCode::FindingResolved:
    case ErrorCode::SessionAlreadyOpen:
    case ErrorCode::NoOpenSession:
    case ErrorCode::AlreadyBooted:
    case ErrorCode::NotTerminated:
        return 409;
    case ErrorCode::GuestNotAttached:
    case ErrorCode::KernelNotReady:
    case ErrorCode::KernelDebugBlockNotFound:
    case ErrorCode::CorruptDebugBlock:
        return 503;
    default:
        return 500;
    }
}

ApiResponse handle_api(Console* console, std::string_view method, std::string_view path,
                       const std::map<std::string, std::string>& query, std::string_view body) {
    ApiResponse r;
    try {
        if (console == nullptr || !console->attached()) throw Error(ErrorCode::GuestNotAttached, "no guest attached");
        r.body = route(*console, method, path, query, body);
    } catch (const Error& e) {
        r.status = http_status(e.code());
        r.body = {{"error", {{"code", to_string(e.code())}, {"message", e.what()}}}};
    } catch (const std::exception& e) {
        r.status = 500;
        r.body = {{"error", {{"code", "Internal"}, {"message", e.what()}}}};
    }
    r.body["step"] = console ? console->guest_step() : 0;
    return r;
}

std::pair<std::string, int> parse_listen(std::string_view spec) {
    const auto colon = spec.rfind(':');
    std::string host = "127.0.0.1";
    std::string_view port = spec;
    if (colon != std::string_view::npos) {
        if (colon > 0) host = std::string(spec.substr(0, colon));
        port = spec.substr(colon + 1);
    }
    const auto p = parse_number(port);
    if (p > 65535) throw Error(ErrorCode::BadArguments, "port out of range: " + std::string(port));
    return {host, static_cast<int>(p)};
}

HttpService::HttpService(Console* console, std::string static_dir)
    : console_(console), server_(std::make_unique<httplib::Server>()) {
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
        std::map<std::string, std::string> query;
        for (const auto& [k, v] : req.params) query[k] = v;
        const auto out = handle_api(console_, req.method, req.path, query, req.body);
        res.status = out.status;
        res.set_content(out.body.dump(), "application/json; charset=utf-8");
    };
    server_->Get(R"(/api/.*)", handler);
    server_->Post(R"(/api/.*)", handler);
    if (!static_dir.empty()) server_->set_mount_point("/", static_dir);
}

HttpService::~HttpService() { stop(); }

int HttpService::start(const std::string& host, int port) {
    port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw Error(ErrorCode::IoFailure, "cannot listen on " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port_;
}

void HttpService::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace introloop::console
