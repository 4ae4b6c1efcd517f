/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "introloop/guest/guest_machine.hpp"
#include "introloop/introspect/introspect.hpp"

namespace introloop::reactor {

struct LinkWrite {
    Address address = 0;  // location of the 8-byte link field
    std::uint64_t old_value = 0;
    std::uint64_t new_value = 0;
};

// Audit record of one block. `prior_links` is enough to undo it.
struct BlockReceipt {
    Address target_address = 0;
    std::uint32_t target_pid = 0;
    std::uint64_t step_applied = 0;
    std::vector<LinkWrite> prior_links;
    bool unlinked_tracking = false;
    bool verified = false;
};

void to_json(nlohmann::json& j, const BlockReceipt& r);

struct BlockOptions {
    // Also take a visible process off the tracking list.
    bool unlink_tracking = false;
};

/// Takes the process object at `proc_address` off the scheduling list of the
/// live guest: its neighbours are linked to each other and the target's own
/// scheduling links are pointed at itself. All reads, writes and the
/// post-write verification happen inside one guest transaction, between two
/// steps.
///
/// Throws NotAProcessObject (no tag at the address), AlreadyUnlinked (not
/// reachable from the scheduling head) or WriteFailed (the list around the
/// target is inconsistent, or verification failed).
BlockReceipt block_process(guest::GuestMachine& guest, const KernelProfile& profile,
                           const introspect::KernelInfo& kernel, Address proc_address, BlockOptions options = {});

// Writes the receipt's old link values back (newest first).
void restore_block(guest::GuestMachine& guest, const BlockReceipt& receipt);

// flink(N).blink == N and blink(N).flink == N for the head and every node.
bool list_is_well_formed(const MemorySource& source, Address head, std::uint32_t flink_offset,
                         std::uint32_t blink_offset, const KernelProfile& profile);

}  // namespace introloop::reactor
