/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <thread>

#include <json.hpp>

#include "introloop/console/console.hpp"

namespace httplib {
class Server;
}

namespace introloop::console {

struct ApiResponse {
    int status = 200;
    nlohmann::json body;
};

int http_status(ErrorCode code);

/// JSON API under /api. Transport-free so it can be driven directly; every
/// body is an object carrying the current guest `step`.
///
///   GET  /api/state | /api/processes?source=live|session | /api/checkpoints
///        /api/events?since=<id>&wait_ms=<ms> | /api/findings
///   POST /api/dump {range?: {start, length}, path?}   /api/block {address}
///        /api/decision {finding_id, action}           /api/step {n}
///        /api/session {action: start|stop, path?, discard?}
///        /api/inject {kind, pid?, name?, address?}    /api/spawn {name}
///        /api/bootdump {path}   /api/watch {start, length, period?}
ApiResponse handle_api(Console* console, std::string_view method, std::string_view path,
                       const std::map<std::string, std::string>& query, std::string_view body);

// httplib front end for handle_api; optionally serves a static directory at /.
class HttpService {
public:
    explicit HttpService(Console* console, std::string static_dir = {});
    ~HttpService();

    HttpService(const HttpService&) = delete;
    HttpService& operator=(const HttpService&) = delete;

    // Binds and serves on a background thread. Port 0 picks a free port.
    int start(const std::string& host, int port);
    void stop();
    int port() const { return port_; }

private:
    Console* console_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    int port_ = 0;
};

// "127.0.0.1:8080" -> host, port. Throws BadArguments.
std::pair<std::string, int> parse_listen(std::string_view spec);

}  // namespace introloop::console
