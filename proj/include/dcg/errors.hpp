#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace dcg {

/// Base class for all library errors. `code()` is a stable machine-readable
/// identifier; `what()` carries the human-readable detail.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

// graph mutation / validation
struct UnknownEndpointError : Error {
    explicit UnknownEndpointError(const std::string& m) : Error("UnknownEndpoint", m) {}
};
struct ConstraintViolationError : Error {
    explicit ConstraintViolationError(const std::string& m) : Error("ConstraintViolation", m) {}
};
struct DuplicateEdgeError : Error {
    explicit DuplicateEdgeError(const std::string& m) : Error("DuplicateEdge", m) {}
};

// text similarity
struct EmptyCorpusError : Error {
    explicit EmptyCorpusError(const std::string& m) : Error("EmptyCorpus", m) {}
};

// spectral pruning
struct EmptyGraphError : Error {
    explicit EmptyGraphError(const std::string& m) : Error("EmptyGraph", m) {}
};
struct MissingRootError : Error {
    explicit MissingRootError(const std::string& m) : Error("MissingRoot", m) {}
};
struct TooShortError : Error {
    explicit TooShortError(const std::string& m) : Error("TooShort", m) {}
};

// serialization / rendering
struct ParseError : Error {
    explicit ParseError(const std::string& m) : Error("ParseError", m) {}
};
struct SchemaVersionMismatchError : Error {
    explicit SchemaVersionMismatchError(const std::string& m) : Error("SchemaVersionMismatch", m) {}
};
struct ValidationFailureError : Error {
    explicit ValidationFailureError(const std::string& m) : Error("ValidationFailure", m) {}
};
struct NoGoalError : Error {
    explicit NoGoalError(const std::string& m) : Error("NoGoal", m) {}
};
struct MultipleGoalsError : Error {
    explicit MultipleGoalsError(const std::string& m) : Error("MultipleGoals", m) {}
};
struct CycleDetectedError : Error {
    explicit CycleDetectedError(const std::string& m) : Error("CycleDetected", m) {}
};

// model gateway
struct TimeoutError : Error {
    explicit TimeoutError(const std::string& m) : Error("Timeout", m) {}
};
struct AuthError : Error {
    explicit AuthError(const std::string& m) : Error("AuthError", m) {}
};
struct RateLimitedError : Error {
    explicit RateLimitedError(const std::string& m) : Error("RateLimited", m) {}
};
struct MalformedResponseError : Error {
    explicit MalformedResponseError(const std::string& m) : Error("MalformedResponse", m) {}
};
struct FixtureMissError : Error {
    explicit FixtureMissError(const std::string& m) : Error("FixtureMiss", m) {}
};
struct UnparseableVerdictError : Error {
    explicit UnparseableVerdictError(const std::string& m) : Error("UnparseableVerdict", m) {}
};

// evaluation
struct LengthMismatchError : Error {
    explicit LengthMismatchError(const std::string& m) : Error("LengthMismatch", m) {}
};
struct IdMismatchError : Error {
    explicit IdMismatchError(const std::string& m) : Error("IdMismatch", m) {}
};
struct InvalidSplitError : Error {
    explicit InvalidSplitError(const std::string& m) : Error("InvalidSplit", m) {}
};

// cli
struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error("ConfigError", m) {}
};
struct StageError : Error {
    explicit StageError(const std::string& m) : Error("StageError", m) {}
};

}  // namespace dcg
