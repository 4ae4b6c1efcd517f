/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <unistd.h>
#include <vector>

#include "introloop/bytes.hpp"
#include "introloop/guest/guest_machine.hpp"
#include "introloop/introspect/introspect.hpp"
#include "introloop/profile.hpp"

namespace testsupport {

namespace fs = std::filesystem;
using namespace introloop;

class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("introloop-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

constexpr std::uint64_t kSmall = 4ull << 20;
constexpr std::uint64_t kStandardKernelInit = 8;

inline guest::GuestConfig small_config(std::uint64_t seed = 1, std::uint64_t size = kSmall) {
    return guest::GuestConfig::standard(size, seed);
}

// Steps a guest past the standard kernel init.
inline void boot(guest::GuestMachine& g) {
    while (!g.kernel_ready()) g.step(1);
}

inline std::set<std::uint32_t> pids_of(const introspect::CrossViewReport& r, introspect::Classification c) {
    std::set<std::uint32_t> out;
    for (const auto* rec : r.with(c)) out.insert(rec->pid);
    return out;
}

inline std::set<Address> addresses_of(const introspect::CrossViewReport& r, introspect::Classification c) {
    std::set<Address> out;
    for (const auto* rec : r.with(c)) out.insert(rec->address);
    return out;
}

// Byte-level reference for scan_processes: every offset of the pool is
// compared against the tag, and only offsets on the alignment grid with a
// whole object inside the pool count.
inline std::vector<Address> brute_force_scan(std::span<const std::uint8_t> image, const KernelProfile& p) {
    std::vector<Address> out;
    const auto& pool = p.pool_region;
    if (pool.end() > image.size()) return out;
    for (Address a = pool.start; a + 4 <= pool.end(); ++a) {
        bool match = true;
        for (int i = 0; i < 4; ++i) match = match && image[a + i] == p.proc_tag[i];
        if (!match) continue;
        if ((a - pool.start) % p.alignment != 0) continue;
        if (a + p.object_size > pool.end()) continue;
        out.push_back(a);
    }
    return out;
}

// Ground-truth sets the detector is expected to reproduce.
inline std::set<std::uint32_t> truth_hidden(const guest::GroundTruth& g) {
    std::set<std::uint32_t> out;
    for (const auto& p : g.processes) {
        if (p.hidden) out.insert(p.pid);
    }
    return out;
}

inline std::set<Address> truth_residue(const guest::GroundTruth& g) {
    std::set<Address> out;
    for (const auto& p : g.processes) {
        if (p.terminated && !p.reused) out.insert(p.address);
    }
    return out;
}

}  // namespace testsupport
