#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ppaml {

/// Every failure the library reports carries one of these codes. The CLI maps
/// them onto process exit codes by category.
enum class Errc {
    // data
    MalformedRow,
    DuplicateTxId,
    InvalidConfig,
    UnreachableRatio,
    DegenerateSplit,
    // graphfeat
    OutOfOrderEdge,
    // gbt / quant
    SingleClassData,
    ArityMismatch,
    RangeViolation,
    InvalidModel,
    // fhe
    KeyMismatch,
    PrecisionOverflow,
    AccumulatorOverflow,
    LutWidthExceeded,
    // hpo
    InfeasibleFolds,
    ResumeMismatch,
    // collab
    UnknownModel,
    VersionMismatch,
    SessionExpired,
    TierMismatch,
    ProtocolError,
    TransportError,
    // cli
    LengthMismatch,
    PipelineError,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& detail)
        : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& detail) { throw Error(code, detail); }

} // namespace ppaml
