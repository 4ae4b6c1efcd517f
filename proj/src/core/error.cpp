/*
 * Copyright (c) 2026 The introloop authors
 * SPDX-License-Identifier: Apache-2.0
 */
#include "introloop/error.hpp"

namespace introloop {

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::NoSuchPid: return "NoSuchPid";
    case ErrorCode::NotTerminated: return "NotTerminated";
    case ErrorCode::KernelNotReady: return "KernelNotReady";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::SourceUnavailable: return "SourceUnavailable";
    case ErrorCode::MissingBackupFile: return "MissingBackupFile";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::KernelDebugBlockNotFound: return "KernelDebugBlockNotFound";
    case ErrorCode::CorruptDebugBlock: return "CorruptDebugBlock";
    case ErrorCode::CycleDetected: return "CycleDetected";
    case ErrorCode::DanglingLink: return "DanglingLink";
    case ErrorCode::NotAProcessObject: return "NotAProcessObject";
    case ErrorCode::AlreadyUnlinked: return "AlreadyUnlinked";
    case ErrorCode::WriteFailed: return "WriteFailed";
    case ErrorCode::AlreadyBooted: return "AlreadyBooted";
    case ErrorCode::UnknownCommand: return "UnknownCommand";
    case ErrorCode::BadArguments: return "BadArguments";
    case ErrorCode::NoOpenSession: return "NoOpenSession";
    case ErrorCode::SessionAlreadyOpen: return "SessionAlreadyOpen";
    case ErrorCode::UnknownFinding: return "UnknownFinding";
    case ErrorCode::FindingResolved: return "FindingResolved";
    case ErrorCode::GuestNotAttached: return "GuestNotAttached";
    }
    return "Unknown";
}

}  // namespace introloop
