#include "pushtrace/error.hpp"

namespace pushtrace {

const char* to_string(ErrorCode code) noexcept
{
    switch (code) {
    case ErrorCode::Overlap: return "OverlapError";
    case ErrorCode::Unaligned: return "UnalignedError";
    case ErrorCode::PageFault: return "PageFault";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::UnknownOpcode: return "UnknownOpcode";
    case ErrorCode::FieldOverflow: return "FieldOverflow";
    case ErrorCode::MisalignedVa: return "MisalignedVa";
    case ErrorCode::TruncatedStream: return "TruncatedStream";
    case ErrorCode::TableParse: return "TableParse";
    case ErrorCode::VaUnmapped: return "VaUnmapped";
    case ErrorCode::RingFull: return "RingFull";
    case ErrorCode::NoSuchChannel: return "NoSuchChannel";
    case ErrorCode::BadState: return "BadState";
    case ErrorCode::InlineTooLarge: return "InlineTooLarge";
    case ErrorCode::MalformedDescriptor: return "MalformedDescriptor";
    case ErrorCode::ZeroLength: return "ZeroLength";
    case ErrorCode::SegmentTooLarge: return "SegmentTooLarge";
    case ErrorCode::AlreadyInstalled: return "AlreadyInstalled";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::InvalidOrder: return "InvalidOrder";
    case ErrorCode::Config: return "ConfigError";
    case ErrorCode::Io: return "IoError";
    }
    return "Unknown";
}

} // namespace pushtrace
