#pragma once

#include <stdexcept>
#include <string>

namespace pushtrace {

enum class ErrorCode {
    Overlap,
    Unaligned,
    PageFault,
    OutOfBounds,
    UnknownOpcode,
    FieldOverflow,
    MisalignedVa,
    TruncatedStream,
    TableParse,
    VaUnmapped,
    RingFull,
    NoSuchChannel,
    BadState,
    InlineTooLarge,
    MalformedDescriptor,
    ZeroLength,
    SegmentTooLarge,
    AlreadyInstalled,
    DegenerateInput,
    InvalidOrder,
    Config,
    Io,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace pushtrace
