/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "introloop/bytes.hpp"

#include <cstdio>

namespace introloop {

std::string hex(std::uint64_t value) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "0x%llx", static_cast<unsigned long long>(value));
    return buf;
}

std::string to_string(const ByteRange& r) {
    return "[" + hex(r.start) + ", " + hex(r.end()) + ")";
}

}  // namespace introloop
