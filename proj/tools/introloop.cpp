/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#include <csignal>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "introloop/console/console.hpp"
#include "introloop/console/service.hpp"

using namespace introloop;

int main(int argc, char** argv) {
    CLI::App app{"Closed-loop introspection console for a simulated guest"};
    std::uint64_t memory_mib = 64;
    std::uint64_t seed = 0;
    std::string profile_path, scenario_path, listen, scratch, static_dir, script_path;
    std::string policy = "auto";
    bool keep_temp = false;
    bool quiet = false;

    app.add_option("--memory", memory_mib, "Guest memory in MiB")->check(CLI::Range(1, 4096));
    app.add_option("--seed", seed, "Allocator seed");
    app.add_option("--profile", profile_path, "Kernel profile JSON")->check(CLI::ExistingFile);
    app.add_option("--scenario", scenario_path, "Boot plan JSON")->check(CLI::ExistingFile);
    app.add_option("--listen", listen, "Serve the HTTP API on addr:port");
    app.add_option("--policy", policy, "Reaction to hidden processes")->check(CLI::IsMember({"auto", "defer"}));
    app.add_flag("--keep-temp", keep_temp, "Keep temporary standalone dumps");
    app.add_option("--scratch", scratch, "Scratch directory (default $HYBIS_SCRATCH)");
    app.add_option("--static", static_dir, "Directory served at / next to the API")->check(CLI::ExistingDirectory);
    app.add_option("--script", script_path, "Run console commands from a file instead of stdin")
        ->check(CLI::ExistingFile);
    app.add_flag("-q,--quiet", quiet, "No prompt");
    CLI11_PARSE(app, argc, argv);

    try {
        auto config = guest::GuestConfig::standard(memory_mib << 20, seed);
        if (!profile_path.empty()) config.profile = load_profile(profile_path);
        if (!scenario_path.empty()) config.boot_plan = guest::load_boot_plan(scenario_path);

        guest::GuestMachine guest(config);
        monitor::Monitor monitor(guest, config.profile, {*monitor::parse_reaction_mode(policy)});
        console::ConsoleOptions opts;
        opts.keep_temp = keep_temp;
        if (!scratch.empty()) opts.scratch_dir = scratch;
        console::Console console(&guest, &monitor, opts);

        std::unique_ptr<console::HttpService> service;
        if (!listen.empty()) {
            const auto [host, port] = console::parse_listen(listen);
            service = std::make_unique<console::HttpService>(&console, static_dir);
            const int bound = service->start(host, port);
            std::cerr << "listening on http://" << host << ":" << bound << "/api\n";
        }

        std::ifstream script;
        std::istream* in = &std::cin;
        if (!script_path.empty()) {
            script.open(script_path);
            in = &script;
        }
        const bool interactive = in == &std::cin && !quiet;
        int status = 0;
        std::string line;
        while (true) {
            if (interactive) std::cout << "introloop[" << guest.clock() << "]> " << std::flush;
            if (!std::getline(*in, line)) break;
            if (line == "quit" || line == "exit") break;
            if (line.empty() || line[0] == '#') continue;
            const auto r = console.dispatch(line);
            if (!r.text.empty()) (r.ok() ? std::cout : std::cerr) << r.text << (r.text.back() == '\n' ? "" : "\n");
            if (!r.ok()) status = 1;
        }

        if (service && in == &std::cin) {
            // Input closed: keep serving until interrupted.
            sigset_t set;
            sigemptyset(&set);
            sigaddset(&set, SIGINT);
            sigaddset(&set, SIGTERM);
            pthread_sigmask(SIG_BLOCK, &set, nullptr);
            int sig = 0;
            sigwait(&set, &sig);
        }
        return script_path.empty() ? 0 : status;
    } catch (const Error& e) {
        std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
        return 2;
    }
}
