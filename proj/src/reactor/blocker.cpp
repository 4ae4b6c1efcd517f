/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "introloop/reactor/blocker.hpp"

#include <algorithm>

#include "introloop/error.hpp"

namespace introloop::reactor {

namespace {

bool contains(const std::vector<Address>& v, Address a) { return std::find(v.begin(), v.end(), a) != v.end(); }

// Bypasses `target` on one list and self-links it, appending the four writes.
void unlink_from(guest::MemoryView& view, Address target, std::uint32_t flink_off, std::uint32_t blink_off,
                 std::vector<LinkWrite>& log) {
    const Address next = view.read_u64(target + flink_off);
    const Address prev = view.read_u64(target + blink_off);
    if (view.read_u64(prev + flink_off) != target || view.read_u64(next + blink_off) != target) {
        throw Error(ErrorCode::WriteFailed, "neighbours of " + hex(target) + " do not link back to it");
    }
    const LinkWrite writes[] = {
        {prev + flink_off, target, next},
        {next + blink_off, target, prev},
        {target + flink_off, next, target},
        {target + blink_off, prev, target},
    };
    for (const auto& w : writes) {
        view.write_u64(w.address, w.new_value);
        log.push_back(w);
    }
}

}  // namespace

bool list_is_well_formed(const MemorySource& source, Address head, std::uint32_t flink_offset,
                         std::uint32_t blink_offset, const KernelProfile& profile) {
    std::vector<Address> nodes;
    try {
        nodes = introspect::walk_list(source, head, flink_offset, profile);
    } catch (const Error&) {
        return false;
    }
    nodes.insert(nodes.begin(), head);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const Address n = nodes[i];
        const Address expected_next = nodes[(i + 1) % nodes.size()];
        const Address expected_prev = nodes[(i + nodes.size() - 1) % nodes.size()];
        if (source.read_u64(n + flink_offset) != expected_next) return false;
        if (source.read_u64(n + blink_offset) != expected_prev) return false;
    }
    return true;
}

BlockReceipt block_process(guest::GuestMachine& guest, const KernelProfile& profile,
                           const introspect::KernelInfo& kernel, Address proc_address, BlockOptions options) {
    const auto& f = profile.fields;
    BlockReceipt receipt;
    receipt.target_address = proc_address;

    guest.transact([&](guest::MemoryView& view) {
        introspect::ParsedObject target;
        try {
            target = introspect::parse_object(view, proc_address, profile);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::OutOfRange) throw;
            throw Error(ErrorCode::NotAProcessObject, hex(proc_address) + " lies outside guest memory");
        }
        if (!target.tag_valid) {
            throw Error(ErrorCode::NotAProcessObject, "no process tag at " + hex(proc_address));
        }
        receipt.target_pid = target.pid;
        receipt.step_applied = view.step().value_or(0);

        std::vector<Address> sched;
        try {
            sched = introspect::walk_list(view, kernel.sched_head, f.sched_flink, profile);
        } catch (const Error& e) {
            throw Error(ErrorCode::WriteFailed, std::string("scheduling list unusable: ") + e.what());
        }
        if (!contains(sched, proc_address)) {
            throw Error(ErrorCode::AlreadyUnlinked, hex(proc_address) + " is not on the scheduling list");
        }
        try {
            unlink_from(view, proc_address, f.sched_flink, f.sched_blink, receipt.prior_links);
            if (options.unlink_tracking) {
                const auto tracking = introspect::walk_list(view, kernel.tracking_head, f.track_flink, profile);
                if (contains(tracking, proc_address)) {
                    unlink_from(view, proc_address, f.track_flink, f.track_blink, receipt.prior_links);
                    receipt.unlinked_tracking = true;
                }
            }
            const auto after = introspect::walk_list(view, kernel.sched_head, f.sched_flink, profile);
            receipt.verified = !contains(after, proc_address) && after.size() + 1 == sched.size() &&
                               list_is_well_formed(view, kernel.sched_head, f.sched_flink, f.sched_blink, profile);
            if (!receipt.verified) {
                throw Error(ErrorCode::WriteFailed, "post-block verification failed for " + hex(proc_address));
            }
        } catch (const Error& e) {
            for (auto it = receipt.prior_links.rbegin(); it != receipt.prior_links.rend(); ++it) {
                view.write_u64(it->address, it->old_value);
            }
            if (e.code() == ErrorCode::WriteFailed) throw;
            throw Error(ErrorCode::WriteFailed, e.what());
        }
    });
    return receipt;
}

void restore_block(guest::GuestMachine& guest, const BlockReceipt& receipt) {
    guest.transact([&](guest::MemoryView& view) {
        for (auto it = receipt.prior_links.rbegin(); it != receipt.prior_links.rend(); ++it) {
            view.write_u64(it->address, it->old_value);
        }
    });
}

void to_json(nlohmann::json& j, const BlockReceipt& r) {
    nlohmann::json links = nlohmann::json::array();
    for (const auto& w : r.prior_links) {
        links.push_back({{"address", w.address}, {"old_value", w.old_value}, {"new_value", w.new_value}});
    }
    j = {{"target_address", r.target_address},
         {"target_address_hex", hex(r.target_address)},
         {"target_pid", r.target_pid},
         {"step_applied", r.step_applied},
         {"prior_links", links},
         {"unlinked_tracking", r.unlinked_tracking},
         {"verified", r.verified}};
}

}  // namespace introloop::reactor
