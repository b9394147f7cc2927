#include "ppaml/error.hpp"

namespace ppaml {

std::string_view errc_name(Errc code) noexcept {
    switch (code) {
    case Errc::MalformedRow: return "MalformedRow";
    case Errc::DuplicateTxId: return "DuplicateTxId";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::UnreachableRatio: return "UnreachableRatio";
    case Errc::DegenerateSplit: return "DegenerateSplit";
    case Errc::OutOfOrderEdge: return "OutOfOrderEdge";
    case Errc::SingleClassData: return "SingleClassData";
    case Errc::ArityMismatch: return "ArityMismatch";
    case Errc::RangeViolation: return "RangeViolation";
    case Errc::InvalidModel: return "InvalidModel";
    case Errc::KeyMismatch: return "KeyMismatch";
    case Errc::PrecisionOverflow: return "PrecisionOverflow";
    case Errc::AccumulatorOverflow: return "AccumulatorOverflow";
    case Errc::LutWidthExceeded: return "LutWidthExceeded";
    case Errc::InfeasibleFolds: return "InfeasibleFolds";
    case Errc::ResumeMismatch: return "ResumeMismatch";
    case Errc::UnknownModel: return "UnknownModel";
    case Errc::VersionMismatch: return "VersionMismatch";
    case Errc::SessionExpired: return "SessionExpired";
    case Errc::TierMismatch: return "TierMismatch";
    case Errc::ProtocolError: return "ProtocolError";
    case Errc::TransportError: return "TransportError";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::PipelineError: return "PipelineError";
    }
    return "Unknown";
}

} // namespace ppaml
