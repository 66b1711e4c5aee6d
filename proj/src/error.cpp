#include "twostep/error.hpp"

namespace twostep {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::MissingColumn: return "MissingColumn";
        case ErrorKind::NonNumericCell: return "NonNumericCell";
        case ErrorKind::UnknownCategoryValue: return "UnknownCategoryValue";
        case ErrorKind::DuplicateSubjectId: return "DuplicateSubjectId";
        case ErrorKind::DegenerateClass: return "DegenerateClass";
        case ErrorKind::CohortTooSmall: return "CohortTooSmall";
        case ErrorKind::SampleTooSmall: return "SampleTooSmall";
        case ErrorKind::ZeroVariance: return "ZeroVariance";
        case ErrorKind::RankDeficient: return "RankDeficient";
        case ErrorKind::SchemaMismatch: return "SchemaMismatch";
        case ErrorKind::DegenerateFold: return "DegenerateFold";
        case ErrorKind::NonConvergence: return "NonConvergence";
        case ErrorKind::SingularCovariance: return "SingularCovariance";
        case ErrorKind::DimensionMismatch: return "DimensionMismatch";
        case ErrorKind::EmptyVote: return "EmptyVote";
        case ErrorKind::ArityMismatch: return "ArityMismatch";
        case ErrorKind::PartitionLeak: return "PartitionLeak";
        case ErrorKind::LengthMismatch: return "LengthMismatch";
        case ErrorKind::UndefinedRate: return "UndefinedRate";
        case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
        case ErrorKind::VersionMismatch: return "VersionMismatch";
        case ErrorKind::CorruptManifest: return "CorruptManifest";
        case ErrorKind::IoFailure: return "IoFailure";
        case ErrorKind::InvalidConfig: return "InvalidConfig";
    }
    return "Unknown";
}

}  // namespace twostep
