/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "introloop/dump/dump_store.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "introloop/error.hpp"

namespace introloop::dump {

using nlohmann::json;

namespace {

// Owning POSIX descriptor with full-length positional I/O.
class File {
public:
    File(const fs::path& path, int flags, ErrorCode missing_code = ErrorCode::IoFailure) : path_(path) {
        fd_ = ::open(path.c_str(), flags | O_CLOEXEC, 0644);
        if (fd_ < 0) {
            throw Error(errno == ENOENT ? missing_code : ErrorCode::IoFailure,
                        "open " + path.string() + ": " + std::strerror(errno));
        }
    }
    ~File() {
        if (fd_ >= 0) ::close(fd_);
    }
    File(const File&) = delete;
    File& operator=(const File&) = delete;

    std::uint64_t size() const {
        struct stat st {};
        if (::fstat(fd_, &st) != 0) fail("stat");
        return static_cast<std::uint64_t>(st.st_size);
    }

    void pread_all(std::uint64_t offset, std::span<std::uint8_t> out) const {
        std::size_t done = 0;
        while (done < out.size()) {
            ssize_t n = ::pread(fd_, out.data() + done, out.size() - done, static_cast<off_t>(offset + done));
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) fail("read");
            done += static_cast<std::size_t>(n);
        }
    }

    void pwrite_all(std::uint64_t offset, std::span<const std::uint8_t> in) const {
        std::size_t done = 0;
        while (done < in.size()) {
            ssize_t n = ::pwrite(fd_, in.data() + done, in.size() - done, static_cast<off_t>(offset + done));
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) fail("write");
            done += static_cast<std::size_t>(n);
        }
    }

private:
    [[noreturn]] void fail(const char* what) const {
        throw Error(ErrorCode::IoFailure, std::string(what) + " " + path_.string() + ": " + std::strerror(errno));
    }

    fs::path path_;
    int fd_ = -1;
};

class DumpSource final : public MemorySource {
public:
    using MemorySource::read;

    DumpSource(const fs::path& path, std::uint64_t size, std::string description, std::optional<std::uint64_t> step)
        : file_(path, O_RDONLY, ErrorCode::IoFailure), size_(size), description_(std::move(description)), step_(step) {
        if (file_.size() != size_) {
            throw Error(ErrorCode::SizeMismatch, path.string() + " is " + std::to_string(file_.size()) +
                                                     " bytes, manifest says " + std::to_string(size_));
        }
    }

    std::uint64_t size() const override { return size_; }
    void read(std::uint64_t offset, std::span<std::uint8_t> out) const override {
        check_range(offset, out.size());
        file_.pread_all(offset, out);
    }
    std::string describe() const override { return description_; }
    std::optional<std::uint64_t> step() const override { return step_; }

private:
    File file_;
    std::uint64_t size_;
    std::string description_;
    std::optional<std::uint64_t> step_;
};

void check_within(const DumpManifest& m, ByteRange range) {
    if (range.empty() || !range.within(m.memory_size)) {
        throw Error(ErrorCode::OutOfRange, "range " + to_string(range) + " outside " +
                                               std::to_string(m.memory_size) + "-byte dump");
    }
}

fs::path backup_path_for(const fs::path& base, std::uint32_t id, ByteRange r) {
    fs::path p = base;
    p += ".ckpt" + std::to_string(id) + "." + std::to_string(r.start) + "-" + std::to_string(r.end()) + ".bak";
    return p;
}

std::uint64_t save_counted(const DumpManifest& m) {
    m.save();
    return fs::file_size(m.manifest_path());
}

}  // namespace

// ---------------------------------------------------------------------------
// DumpManifest

const Checkpoint& DumpManifest::checkpoint(std::uint32_t id) const {
    if (id >= checkpoints.size()) {
        throw Error(ErrorCode::OutOfRange, "no checkpoint " + std::to_string(id) + " in " + base_path.string());
    }
    return checkpoints[id];
}

fs::path DumpManifest::manifest_path_for(const fs::path& base) {
    fs::path p = base;
    p += ".manifest.json";
    return p;
}

void DumpManifest::save() const {
    const fs::path target = manifest_path();
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + tmp.string());
        out << json(*this).dump(2) << '\n';
        if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "rename " + tmp.string() + ": " + ec.message());
}

DumpManifest DumpManifest::load(const fs::path& base_or_manifest) {
    fs::path mpath = base_or_manifest;
    if (!mpath.string().ends_with(".manifest.json")) {
        mpath = manifest_path_for(base_or_manifest);
    }
    std::ifstream in(mpath);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open manifest " + mpath.string());
    try {
        return json::parse(in).get<DumpManifest>();
    } catch (const json::exception& e) {
        throw Error(ErrorCode::IoFailure, "manifest " + mpath.string() + ": " + e.what());
    }
}

void to_json(json& j, const DumpManifest& m) {
    json cks = json::array();
    for (const auto& c : m.checkpoints) {
        json ranges = json::array();
        for (const auto& r : c.ranges) {
            ranges.push_back({{"start", r.start}, {"length", r.length}, {"backup_path", r.backup_path.string()}});
        }
        cks.push_back({{"id", c.id}, {"source_step", c.source_step}, {"ranges", ranges}});
    }
    j = {{"memory_size", m.memory_size},
         {"base_path", m.base_path.string()},
         {"created_at_step", m.created_at_step},
         {"checkpoints", cks}};
}

void from_json(const json& j, DumpManifest& m) {
    DumpManifest out;
    out.memory_size = j.at("memory_size").get<std::uint64_t>();
    out.base_path = j.at("base_path").get<std::string>();
    out.created_at_step = j.value("created_at_step", std::uint64_t{0});
    for (const auto& c : j.at("checkpoints")) {
        Checkpoint ck;
        ck.id = c.at("id").get<std::uint32_t>();
        ck.source_step = c.value("source_step", std::uint64_t{0});
        for (const auto& r : c.at("ranges")) {
            ck.ranges.push_back({r.at("start").get<std::uint64_t>(), r.at("length").get<std::uint64_t>(),
                                 fs::path(r.at("backup_path").get<std::string>())});
        }
        out.checkpoints.push_back(std::move(ck));
    }
    for (std::size_t i = 0; i < out.checkpoints.size(); ++i) {
        if (out.checkpoints[i].id != i) throw Error(ErrorCode::IoFailure, "manifest checkpoint ids not consecutive");
    }
    if (out.checkpoints.empty()) throw Error(ErrorCode::IoFailure, "manifest has no base checkpoint");
    m = std::move(out);
}

// ---------------------------------------------------------------------------
// Operations

DumpManifest dump_full(const MemorySource& source, const fs::path& path, IoStats* stats) {
    const std::uint64_t size = source.size();
    if (size == 0) throw Error(ErrorCode::SourceUnavailable, "source " + source.describe() + " is empty");
    std::vector<std::uint8_t> image(size);
    source.read(0, image);  // one read: step-atomic on live sources
    const std::uint64_t step = source.step().value_or(0);

    {
        File out(path, O_WRONLY | O_CREAT | O_TRUNC);
        out.pwrite_all(0, image);
    }
    DumpManifest m;
    m.base_path = path;
    m.memory_size = size;
    m.created_at_step = step;
    m.checkpoints.push_back({0, {}, step});
    const std::uint64_t meta = save_counted(m);
    if (stats) {
        stats->bytes_read_from_source += size;
        stats->bytes_written_to_disk += size + meta;
    }
    return m;
}

RangeUpdate dump_update_range_with_diff(DumpManifest& manifest, ByteRange range, const MemorySource& source,
                                        IoStats* stats, std::uint64_t granularity) {
    check_within(manifest, range);
    if (source.size() != manifest.memory_size) {
        throw Error(ErrorCode::SizeMismatch, "source size differs from dump size");
    }
    std::vector<std::uint8_t> fresh(range.length);
    source.read(range.start, fresh);
    const std::uint64_t step = source.step().value_or(0);

    File base(manifest.base_path, O_RDWR);
    std::vector<std::uint8_t> previous(range.length);
    base.pread_all(range.start, previous);

    const std::uint32_t id = manifest.latest() + 1;
    const fs::path backup = backup_path_for(manifest.base_path, id, range);
    {
        File out(backup, O_WRONLY | O_CREAT | O_TRUNC);
        out.pwrite_all(0, previous);
    }
    base.pwrite_all(range.start, fresh);

    Checkpoint ck{id, {{range.start, range.length, backup}}, step};
    manifest.checkpoints.push_back(ck);
    const std::uint64_t meta = save_counted(manifest);
    if (stats) {
        stats->bytes_read_from_source += range.length;
        stats->bytes_written_to_disk += 2 * range.length + meta;
    }
    return {std::move(ck), diff_bytes(previous, fresh, range, granularity)};
}

Checkpoint dump_update_range(DumpManifest& manifest, ByteRange range, const MemorySource& source, IoStats* stats) {
    return dump_update_range_with_diff(manifest, range, source, stats).checkpoint;
}

std::vector<std::uint8_t> reconstruct(const DumpManifest& manifest, std::uint32_t checkpoint_id, ByteRange range) {
    check_within(manifest, range);
    manifest.checkpoint(checkpoint_id);

    std::vector<std::uint8_t> out(range.length);
    File base(manifest.base_path, O_RDONLY, ErrorCode::IoFailure);
    base.pread_all(range.start, out);

    // Undo newer updates, newest first, so each backup lands on the state it
    // was taken from.
    for (std::uint32_t id = manifest.latest(); id > checkpoint_id; --id) {
        for (const auto& r : manifest.checkpoints[id].ranges) {
            const ByteRange br = r.range();
            if (!br.intersects(range)) continue;
            const std::uint64_t lo = std::max(br.start, range.start);
            const std::uint64_t hi = std::min(br.end(), range.end());
            File backup(r.backup_path, O_RDONLY, ErrorCode::MissingBackupFile);
            if (backup.size() != r.length) {
                throw Error(ErrorCode::MissingBackupFile, r.backup_path.string() + " has wrong length");
            }
            backup.pread_all(lo - br.start, std::span(out).subspan(lo - range.start, hi - lo));
        }
    }
    return out;
}

std::vector<ByteRange> diff_bytes(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, ByteRange range,
                                  std::uint64_t granularity) {
    if (granularity == 0) granularity = 1;
    std::vector<ByteRange> out;
    std::uint64_t pos = range.start;
    while (pos < range.end()) {
        const std::uint64_t unit_end = std::min(range.end(), (pos / granularity + 1) * granularity);
        const auto lo = static_cast<std::size_t>(pos - range.start);
        const auto hi = static_cast<std::size_t>(unit_end - range.start);
        if (!std::equal(a.begin() + static_cast<std::ptrdiff_t>(lo), a.begin() + static_cast<std::ptrdiff_t>(hi),
                        b.begin() + static_cast<std::ptrdiff_t>(lo))) {
            if (!out.empty() && out.back().end() == pos) {
                out.back().length += unit_end - pos;
            } else {
                out.push_back({pos, unit_end - pos});
            }
        }
        pos = unit_end;
    }
    return out;
}

std::vector<ByteRange> diff_checkpoints(const DumpManifest& manifest, std::uint32_t id_a, std::uint32_t id_b,
                                        ByteRange range, std::uint64_t granularity) {
    check_within(manifest, range);
    manifest.checkpoint(id_a);
    manifest.checkpoint(id_b);
    if (id_a == id_b) return {};
    const auto a = reconstruct(manifest, id_a, range);
    const auto b = reconstruct(manifest, id_b, range);
    return diff_bytes(a, b, range, granularity);
}

std::unique_ptr<MemorySource> open_dump(const DumpManifest& manifest) {
    const auto& head = manifest.checkpoint(manifest.latest());
    std::string desc = manifest.base_path.string() + "@ckpt" + std::to_string(head.id);
    return std::make_unique<DumpSource>(manifest.base_path, manifest.memory_size, std::move(desc), head.source_step);
}

std::unique_ptr<MemorySource> open_dump(const fs::path& path) {
    if (fs::exists(DumpManifest::manifest_path_for(path))) return open_dump(DumpManifest::load(path));
    std::error_code ec;
    const auto size = fs::file_size(path, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot stat " + path.string() + ": " + ec.message());
    return std::make_unique<DumpSource>(path, size, path.string(), std::nullopt);
}

std::unique_ptr<MemorySource> open_checkpoint(const DumpManifest& manifest, std::uint32_t checkpoint_id) {
    auto bytes = reconstruct(manifest, checkpoint_id, {0, manifest.memory_size});
    return std::make_unique<BufferSource>(std::move(bytes),
                                          manifest.base_path.string() + "@ckpt" + std::to_string(checkpoint_id),
                                          manifest.checkpoint(checkpoint_id).source_step);
}

void remove_dump(const DumpManifest& manifest) {
    std::error_code ec;
    for (const auto& c : manifest.checkpoints) {
        for (const auto& r : c.ranges) fs::remove(r.backup_path, ec);
    }
    fs::remove(manifest.base_path, ec);
    fs::remove(manifest.manifest_path(), ec);
}

}  // namespace introloop::dump
