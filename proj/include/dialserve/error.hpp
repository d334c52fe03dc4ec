// Copyright (C) 2026 The dialserve Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dialserve {

enum class ErrorCode {
    NonFiniteInput,
    AllMaskedRow,
    DimensionMismatch,
    EmptyPlan,
    InvalidConfig,
    SequenceTooLong,
    CacheCorrupt,
    EmptyBlock,
    InvalidAlpha,
    InstanceTooLarge,
    EmptyWindow,
    SizeMismatch,
    InvalidIds,
    PoolTooSmall,
    TooFewExamples,
    EmptyReference,
    InvalidArgument,
    InvalidFormat,
    Io,
};

constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::NonFiniteInput: return "NonFiniteInput";
        case ErrorCode::AllMaskedRow: return "AllMaskedRow";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::EmptyPlan: return "EmptyPlan";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::SequenceTooLong: return "SequenceTooLong";
        case ErrorCode::CacheCorrupt: return "CacheCorrupt";
        case ErrorCode::EmptyBlock: return "EmptyBlock";
        case ErrorCode::InvalidAlpha: return "InvalidAlpha";
        case ErrorCode::InstanceTooLarge: return "InstanceTooLarge";
        case ErrorCode::EmptyWindow: return "EmptyWindow";
        case ErrorCode::SizeMismatch: return "SizeMismatch";
        case ErrorCode::InvalidIds: return "InvalidIds";
        case ErrorCode::PoolTooSmall: return "PoolTooSmall";
        case ErrorCode::TooFewExamples: return "TooFewExamples";
        case ErrorCode::EmptyReference: return "EmptyReference";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::InvalidFormat: return "InvalidFormat";
        case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), m_code(code) {}

    ErrorCode code() const noexcept { return m_code; }

private:
    ErrorCode m_code;
};

inline void require(bool condition, ErrorCode code, const std::string& message) {
    if (!condition) {
        throw Error(code, message);
    }
}

}  // namespace dialserve
