#pragma once

#include <stdexcept>
#include <string>

namespace twostep {

// Every failure raised by the library carries a stable kind tag so callers
// (the CLI exit-code mapping, the Python bindings) can dispatch on it.
enum class ErrorKind {
    MissingColumn,
    NonNumericCell,
    UnknownCategoryValue,
    DuplicateSubjectId,
    DegenerateClass,
    CohortTooSmall,
    SampleTooSmall,
    ZeroVariance,
    RankDeficient,
    SchemaMismatch,
    DegenerateFold,
    NonConvergence,
    SingularCovariance,
    DimensionMismatch,
    EmptyVote,
    ArityMismatch,
    PartitionLeak,
    LengthMismatch,
    UndefinedRate,
    NotPositiveDefinite,
    VersionMismatch,
    CorruptManifest,
    IoFailure,
    InvalidConfig,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace twostep
