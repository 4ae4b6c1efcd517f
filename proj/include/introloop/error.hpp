/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace introloop {

// Every failure the library reports carries one of these codes. The names are
// stable: they appear verbatim in JSON payloads and console output.
enum class ErrorCode {
    InvalidConfig,
    OutOfRange,
    NoSuchPid,
    NotTerminated,
    KernelNotReady,
    IoFailure,
    SourceUnavailable,
    MissingBackupFile,
    SizeMismatch,
    KernelDebugBlockNotFound,
    CorruptDebugBlock,
    CycleDetected,
    DanglingLink,
    NotAProcessObject,
    AlreadyUnlinked,
    WriteFailed,
    AlreadyBooted,
    UnknownCommand,
    BadArguments,
    NoOpenSession,
    SessionAlreadyOpen,
    UnknownFinding,
    FindingResolved,
    GuestNotAttached,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace introloop
